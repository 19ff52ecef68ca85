"""Run configuration, manifests, and resumable stage state.

A run directory is self-describing: ``manifest.json`` records the fully
resolved configuration plus SHA-256 hashes of every input artifact before
any computation starts, and ``runstate.json`` tracks which stages already
completed under which configuration hash so re-running is a no-op.

Configuration precedence: command-line flag > environment variable
(reader endpoint only) > config file > built-in default.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import yaml

from . import jsonio
from .errors import ArtifactMissing, ConfigInvalid

ENDPOINT_ENV = "RAGFUSE_READER_ENDPOINT"
MANIFEST_FORMAT = "ragfuse-manifest"


def load_config_file(path) -> dict:
    """Parse the human-editable YAML config tree."""
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: config root must be a mapping")
    return data


def resolve(flag_value, file_cfg: dict, dotted_key: str, default):
    """flag > config-file value > default (flags use None for 'unset')."""
    if flag_value is not None:
        return flag_value
    node = file_cfg
    for part in dotted_key.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def resolve_endpoint(flag_value, file_cfg: dict) -> str | None:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENDPOINT_ENV)
    if env:
        return env
    return resolve(None, file_cfg, "reader.endpoint", None)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(jsonio.dumps(config).encode("utf-8")).hexdigest()


def write_manifest(out_dir, command: str, seed: int, config: dict, artifacts) -> Path:
    """Write the run manifest before any computation touches the outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for p in artifacts:
        p = Path(p)
        if p.exists():
            hashes[str(p)] = file_sha256(p)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "artifacts": hashes,
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(jsonio.dumps(manifest) + "\n")
    return path


class RunState:
    """Completed-stage bookkeeping for resumable pipelines."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / "runstate.json"
        self._state: dict = {}
        if self.path.exists():
            try:
                self._state = json.loads(self.path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                self._state = {}

    def is_done(self, stage: str, cfg_hash: str, outputs) -> bool:
        entry = self._state.get(stage)
        if not entry or entry.get("config_hash") != cfg_hash:
            return False
        return all(Path(p).exists() for p in entry.get("outputs", [])) and all(
            Path(p).exists() for p in outputs
        )

    def mark_done(self, stage: str, cfg_hash: str, outputs) -> None:
        self._state[stage] = {
            "config_hash": cfg_hash,
            "outputs": [str(p) for p in outputs],
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(jsonio.dumps(self._state) + "\n", encoding="utf-8")
