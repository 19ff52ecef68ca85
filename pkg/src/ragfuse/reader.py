"""The frozen reader abstraction.

A reader maps (candidate, query) to a class-restricted probability vector.
Nothing in this package ever updates a reader; training only consumes its
outputs. Three implementations are provided:

* :class:`SimulatedReader` - a deterministic toy scorer for desk-scale
  verification. It keys off the labels carried in payload references, so
  its behaviour can be mirrored bit-for-bit by an out-of-process server.
* :class:`RemoteReader` - client for the JSON ``/score`` wire protocol.
* :class:`CachedReader` - score-table-backed reader, optionally layered
  over another reader for read-through caching.

Because reader calls are the expensive resource, training re-reads a cache;
``cache_store``/``cache_load`` persist a :class:`ReaderScoreTable`.
"""

from __future__ import annotations

import hashlib
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import jsonio
from .errors import (
    CacheMiss,
    CorruptCache,
    OpenQuestionUnsupported,
    RemoteMalformedResponse,
    RemoteUnavailable,
    UnsupportedMode,
    VocabMismatch,
)
from .types import (
    NO_CANDIDATE_ID,
    ClassVocab,
    IndexRecord,
    Query,
    ReaderScoreTable,
    parse_cluster_ref,
    parse_label_ref,
)


def hash_uniforms(seed: int, query_id: str, record_id: int, n: int) -> np.ndarray:
    """n uniform [0,1) doubles derived from (seed, query id, record id).

    blake2b over "seed|query|record|counter" blocks, 8 bytes per draw,
    little-endian. This is the determinism contract shared with the
    reference scoring server; do not change one side without the other.
    """
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


@dataclass(frozen=True)
class SimulatedReaderParams:
    """Knobs of the deterministic toy scorer.

    ``informativeness`` is the probability mass shifted onto a candidate's
    own label when it matches the query's label. Contradicting candidates
    shift a damped mass instead: ``informativeness * mislead`` when the
    candidate is visually credible (it sits in the query's image cluster),
    ``informativeness * junk`` when it comes from elsewhere. That split
    models a reader that lookalike distractors genuinely fool while junk
    context barely registers. ``confusion`` rows give the reader's
    image-only behaviour per true class; noise is a per-(query, candidate)
    perturbation derived from ``seed`` so responses stay reproducible at
    any concurrency.
    """

    informativeness: float = 0.95
    confusion: np.ndarray | None = None
    seed: int = 0
    mislead: float = 0.95
    junk: float = 0.1
    noise_scale: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.informativeness <= 1.0:
            raise ValueError("informativeness must lie in [0, 1]")
        if not 0.0 <= self.mislead <= 1.0:
            raise ValueError("mislead must lie in [0, 1]")
        if not 0.0 <= self.junk <= 1.0:
            raise ValueError("junk must lie in [0, 1]")
        if self.confusion is not None:
            c = np.asarray(self.confusion, dtype=np.float64)
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ValueError("confusion matrix must be square")
            if np.any(c < 0) or not np.allclose(c.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("confusion rows must be probability vectors")
            object.__setattr__(self, "confusion", c)

    @staticmethod
    def default_confusion(n_classes: int, diagonal: float = 0.38) -> np.ndarray:
        """Mildly self-confident rows; off-diagonal mass spread evenly."""
        if n_classes == 1:
            return np.ones((1, 1))
        off = (1.0 - diagonal) / (n_classes - 1)
        c = np.full((n_classes, n_classes), off)
        np.fill_diagonal(c, diagonal)
        return c

    def to_dict(self) -> dict:
        return {
            "informativeness": self.informativeness,
            "confusion": None
            if self.confusion is None
            else [[float(x) for x in row] for row in self.confusion],
            "seed": self.seed,
            "mislead": self.mislead,
            "junk": self.junk,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulatedReaderParams":
        conf = d.get("confusion")
        return cls(
            informativeness=float(d.get("informativeness", 0.95)),
            confusion=None if conf is None else np.asarray(conf, dtype=np.float64),
            seed=int(d.get("seed", 0)),
            mislead=float(d.get("mislead", 0.95)),
            junk=float(d.get("junk", 0.1)),
            noise_scale=float(d.get("noise_scale", 0.3)),
        )


def simulate_class_probs(
    params: SimulatedReaderParams,
    labels: tuple[str, ...],
    query_id: str,
    query_label: str | None,
    record_id: int,
    candidate_label: str | None,
    candidate_cluster: str | None = None,
) -> np.ndarray:
    """The toy scorer itself, shared verbatim with the reference server.

    base  = confusion row of the query label (uniform when unknown)
    shift = informativeness            candidate label == query label,
                                       or the query label is unknown
            informativeness * mislead  labels differ, candidate sits in the
                                       query's image cluster (credible)
            informativeness * junk     labels differ, candidate from
                                       elsewhere or of unknown cluster
            0                          no candidate label
    probs = shift * onehot(candidate) + (1 - shift) * base + noise
    """
    n = len(labels)
    if query_label is not None and query_label in labels:
        if params.confusion is not None and params.confusion.shape[0] == n:
            base = np.asarray(params.confusion[labels.index(query_label)], dtype=np.float64)
        else:
            base = np.asarray(
                SimulatedReaderParams.default_confusion(n)[labels.index(query_label)]
            )
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


@dataclass(frozen=True)
class ScoreRowError:
    """A per-row failure inside a batch; the batch itself still completes."""

    query_id: str
    record_id: int
    error: Exception


class Reader:
    """Interface: score one (query, candidate) pair over a vocabulary."""

    name = "reader"

    def score_candidate(
        self,
        query: Query,
        record: IndexRecord | None,
        vocab: ClassVocab,
        include_query_image: bool = True,
    ) -> np.ndarray:
        raise NotImplementedError

    def check_task(self, query: Query) -> None:
        if query.task_kind == "vqa_open":
            raise OpenQuestionUnsupported(
                f"query {query.query_id} is open-ended; readers score closed vocabularies only"
            )

    def batch_score(
        self,
        pairs,
        vocab: ClassVocab,
        include_query_image: bool = True,
        jobs: int = 1,
    ) -> tuple[ReaderScoreTable, list[ScoreRowError]]:
        """Score many (query, record) pairs into one table.

        Rows are independent of evaluation order; per-row failures are
        collected with their row identity instead of aborting the batch.
        Duplicate pairs are scored once.
        """
        pairs = list(pairs)
        variant = "with_image" if include_query_image else "no_image"
        table = ReaderScoreTable(vocab, variant=variant)
        errors: list[ScoreRowError] = []
        seen: set[tuple[str, int]] = set()
        todo = []
        for query, record in pairs:
            rid = record.record_id if record is not None else NO_CANDIDATE_ID
            key = (query.query_id, rid)
            if key in seen:
                continue
            seen.add(key)
            todo.append((key, query, record))

        def run(item):
            key, query, record = item
            try:
                return key, self.score_candidate(
                    query, record, vocab, include_query_image=include_query_image
                ), None
            except Exception as exc:  # collected per row
                return key, None, exc

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run, todo))
        else:
            results = [run(item) for item in todo]
        # deterministic reduction order regardless of worker scheduling
        for key, probs, exc in sorted(results, key=lambda t: (t[0][0], t[0][1])):
            if exc is not None:
                errors.append(ScoreRowError(key[0], key[1], exc))
            else:
                table.add(key[0], key[1], probs)
        return table, errors


class SimulatedReader(Reader):
    """Deterministic in-process toy reader keyed off payload-ref labels."""

    name = "simulated"

    def __init__(self, params: SimulatedReaderParams):
        self.params = params

    def score_candidate(self, query, record, vocab, include_query_image=True):
        self.check_task(query)
        query_label = parse_label_ref(query.payload_ref) if include_query_image else None
        cand_label = record.label if record is not None else None
        cand_cluster = (
            parse_cluster_ref(record.payload_ref) if record is not None else None
        )
        record_id = record.record_id if record is not None else NO_CANDIDATE_ID
        return simulate_class_probs(
            self.params,
            vocab.labels,
            query.query_id,
            query_label,
            record_id,
            cand_label,
            cand_cluster,
        )


class RemoteReader(Reader):
    """Client for the POST /score wire protocol.

    The server returns log-probabilities aligned to the request's class
    labels; the client exponentiates and renormalizes. Row failures are
    retried twice with exponential backoff before surfacing, and in-flight
    requests are capped by a semaphore.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout: float = 10.0,
        max_in_flight: int = 8,
        retries: int = 2,
        backoff: float = 0.1,
    ):
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._gate = threading.Semaphore(max_in_flight)

    def healthy(self) -> bool:
        import requests

        try:
            resp = requests.get(f"{self.endpoint}/healthz", timeout=self.timeout)
            return resp.status_code == 200
        except requests.RequestException:
            return False

    def score_candidate(self, query, record, vocab, include_query_image=True):
        import requests

        self.check_task(query)
        body = {
            "query_id": query.query_id,
            "question": query.question,
            "query_payload_ref": query.payload_ref if include_query_image else "",
            "candidate": {
                "record_id": record.record_id if record is not None else NO_CANDIDATE_ID,
                "payload_ref": record.payload_ref if record is not None else "",
                "caption": "",
            },
            "class_labels": list(vocab.labels),
        }
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(
                        f"{self.endpoint}/score", json=body, timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_exc = RemoteUnavailable(f"{self.endpoint}: {exc}")
                continue
            if resp.status_code != 200:
                last_exc = RemoteMalformedResponse(
                    f"{self.endpoint}: HTTP {resp.status_code}: {resp.text[:200]}"
                )
                continue
            try:
                payload = resp.json()
                log_probs = np.asarray(payload["log_probs"], dtype=np.float64)
            except Exception as exc:
                last_exc = RemoteMalformedResponse(f"{self.endpoint}: {exc}")
                continue
            if log_probs.shape != (len(vocab),) or not np.all(np.isfinite(log_probs)):
                raise RemoteMalformedResponse(
                    f"{self.endpoint}: log_probs misaligned with class labels"
                )
            probs = np.exp(log_probs - log_probs.max())
            return probs / probs.sum()
        raise last_exc if last_exc is not None else RemoteUnavailable(self.endpoint)


class CachedReader(Reader):
    """Serve rows from a score table; optionally fall through to a base reader.

    Appends from cache misses are guarded by a lock (single-writer), reads
    are lock-free. Without a base reader a miss raises :class:`CacheMiss`.
    """

    name = "cached"

    def __init__(self, table: ReaderScoreTable, base: Reader | None = None):
        self.table = table
        self.base = base
        self._write_lock = threading.Lock()

    def score_candidate(self, query, record, vocab, include_query_image=True):
        self.check_task(query)
        variant = "with_image" if include_query_image else "no_image"
        if variant != self.table.variant:
            raise UnsupportedMode(
                f"cache holds {self.table.variant!r} rows, requested {variant!r}"
            )
        if tuple(vocab.labels) != tuple(self.table.vocab.labels):
            raise VocabMismatch("cache vocabulary differs from requested vocabulary")
        rid = record.record_id if record is not None else NO_CANDIDATE_ID
        hit = self.table.get(query.query_id, rid)
        if hit is not None:
            return hit
        if self.base is None:
            raise CacheMiss(f"no cached row for ({query.query_id}, {rid})")
        probs = self.base.score_candidate(
            query, record, vocab, include_query_image=include_query_image
        )
        with self._write_lock:
            if self.table.get(query.query_id, rid) is None:
                self.table.add(query.query_id, rid, probs)
        return probs


# --- cache persistence -----------------------------------------------------


def cache_store(table: ReaderScoreTable, path) -> None:
    jsonio.write_jsonl(
        path,
        "ragfuse-score-cache",
        {"class_labels": list(table.vocab.labels), "variant": table.variant},
        (
            {"query_id": qid, "record_id": rid, "probs": [float(x) for x in p]}
            for qid, rid, p in table.sorted_rows()
        ),
    )


def cache_load(path, vocab: ClassVocab | None = None) -> ReaderScoreTable:
    """Load a score table, validating normalization and vocabulary.

    ``vocab``, when given, must match the stored labels exactly
    (:class:`VocabMismatch` otherwise); tampered rows raise
    :class:`CorruptCache`.
    """
    try:
        header, rows = jsonio.read_jsonl(path, "ragfuse-score-cache")
    except (OSError, ValueError) as exc:
        raise CorruptCache(f"{path}: {exc}") from exc
    stored_labels = tuple(header.get("class_labels", ()))
    if not stored_labels:
        raise CorruptCache(f"{path}: header carries no class labels")
    if vocab is not None and tuple(vocab.labels) != stored_labels:
        raise VocabMismatch(
            f"{path}: cache labels {stored_labels} != expected {tuple(vocab.labels)}"
        )
    table = ReaderScoreTable(
        vocab or ClassVocab(stored_labels), variant=header.get("variant", "with_image")
    )
    for row in rows:
        try:
            table.add(row["query_id"], row["record_id"], row["probs"])
        except (KeyError, ValueError) as exc:
            raise CorruptCache(f"{path}: bad row {row!r}: {exc}") from exc
    return table
