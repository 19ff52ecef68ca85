"""Line-delimited JSON files with a leading format-version header.

Every text artifact this package emits starts with one header object
``{"format": <name>, "version": <int>, ...}`` followed by one JSON object
per line. Floats are serialized with repr-level precision so that a
deterministic computation produces byte-identical files.
"""

import json
from pathlib import Path

from .errors import BadMagic, VersionMismatch


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, allow_nan=False)


def write_jsonl(path, fmt: str, meta: dict, rows) -> None:
    path = Path(path)
    header = {"format": fmt, "version": 1}
    header.update(meta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(header) + "\n")
        for row in rows:
            fh.write(dumps(row) + "\n")


def read_jsonl(path, fmt: str) -> tuple[dict, list[dict]]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise BadMagic(f"{path}: empty file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise BadMagic(f"{path}: malformed header line") from exc
        if not isinstance(header, dict) or header.get("format") != fmt:
            raise BadMagic(
                f"{path}: expected format {fmt!r}, got {header.get('format')!r}"
                if isinstance(header, dict)
                else f"{path}: header is not an object"
            )
        if header.get("version") != 1:
            raise VersionMismatch(f"{path}: unsupported version {header.get('version')}")
        rows = [json.loads(line) for line in fh if line.strip()]
    return header, rows
