"""Deterministic toy scorer, the server-side mirror of the client's
in-process simulated reader.

This file intentionally re-implements the scoring algorithm instead of
importing it: the server is a stand-in for an out-of-process model service
and must agree with the client across the wire protocol boundary, not
through shared code. The contract, verbatim:

  base  = confusion row of the query label (uniform when unknown)
  shift = informativeness            candidate label == query label,
                                     or the query label is unknown
          informativeness * mislead  labels differ, candidate sits in the
                                     query's image cluster
          informativeness * junk     labels differ, unknown/other cluster
          0                          no candidate label
  probs = shift * onehot(candidate) + (1 - shift) * base + noise
  noise = noise_scale * (u - 0.5), u from blake2b over
          "seed|query_id|record_id|counter", 8 little-endian bytes per draw

Labels and clusters ride in the payload references as ``label=`` and
``cluster=`` query parameters.
"""

from __future__ import annotations

import hashlib
import urllib.parse
from dataclasses import dataclass

import numpy as np

DEFAULT_CONFUSION_DIAGONAL = 0.38


def parse_ref_param(payload_ref: str, key: str) -> str | None:
    _, _, query = payload_ref.partition("?")
    if not query:
        return None
    for part in query.split("&"):
        k, _, value = part.partition("=")
        if k == key and value:
            return urllib.parse.unquote(value)
    return None


def hash_uniforms(seed: int, query_id: str, record_id: int, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.float64)
    filled = 0
    counter = 0
    while filled < n:
        msg = f"{seed}|{query_id}|{record_id}|{counter}".encode("utf-8")
        digest = hashlib.blake2b(msg, digest_size=64).digest()
        for i in range(0, 64, 8):
            if filled == n:
                break
            val = int.from_bytes(digest[i : i + 8], "little")
            out[filled] = val / 2.0**64
            filled += 1
        counter += 1
    return out


def default_confusion(n_classes: int, diagonal: float = DEFAULT_CONFUSION_DIAGONAL) -> np.ndarray:
    if n_classes == 1:
        return np.ones((1, 1))
    off = (1.0 - diagonal) / (n_classes - 1)
    c = np.full((n_classes, n_classes), off)
    np.fill_diagonal(c, diagonal)
    return c


@dataclass(frozen=True)
class ScorerParams:
    informativeness: float = 0.95
    confusion: np.ndarray | None = None
    seed: int = 0
    mislead: float = 0.95
    junk: float = 0.1
    noise_scale: float = 0.3
    confusion_diag: float = DEFAULT_CONFUSION_DIAGONAL

    def __post_init__(self):
        for name in ("informativeness", "mislead", "junk"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def class_probs(
    params: ScorerParams,
    labels: list[str],
    query_id: str,
    query_label: str | None,
    record_id: int,
    candidate_label: str | None,
    candidate_cluster: str | None,
) -> np.ndarray:
    n = len(labels)
    if query_label is not None and query_label in labels:
        if params.confusion is not None and params.confusion.shape[0] == n:
            base = np.asarray(params.confusion[labels.index(query_label)], dtype=np.float64)
        else:
            base = default_confusion(n, params.confusion_diag)[labels.index(query_label)]
    else:
        base = np.full(n, 1.0 / n)
    if candidate_label is not None and candidate_label in labels:
        if query_label is None or query_label not in labels:
            shift = params.informativeness
        elif candidate_label == query_label:
            shift = params.informativeness
        elif candidate_cluster is not None and candidate_cluster == query_label:
            shift = params.informativeness * params.mislead
        else:
            shift = params.informativeness * params.junk
        probs = (1.0 - shift) * base
        probs[labels.index(candidate_label)] += shift
    else:
        probs = base.copy()
    if params.noise_scale > 0.0:
        u = hash_uniforms(params.seed, query_id, record_id, n)
        probs = probs + params.noise_scale * (u - 0.5)
    probs = np.clip(probs, 1e-9, None)
    return probs / probs.sum()


def score_request(params: ScorerParams, request: dict) -> list[float]:
    """Wire-protocol entry point: request dict to log-probs list."""
    labels = list(request["class_labels"])
    candidate = request["candidate"]
    query_label = parse_ref_param(request.get("query_payload_ref") or "", "label")
    cand_ref = candidate.get("payload_ref") or ""
    probs = class_probs(
        params,
        labels,
        str(request["query_id"]),
        query_label,
        int(candidate["record_id"]),
        parse_ref_param(cand_ref, "label"),
        parse_ref_param(cand_ref, "cluster"),
    )
    return [float(x) for x in np.log(probs)]
