"""Core domain types shared by every other module.

Conventions fixed here and relied on everywhere else:

* Embeddings are 1-D ``float32`` arrays. ``float16`` exists only as an
  on-disk storage dtype; arithmetic always happens after widening.
* Tie-breaking for any ranking (top-k, argmax over labels) is by ascending
  record id / label index, so results are reproducible without a seed.
* All types are immutable after construction and safe to share across
  concurrent workers.
"""

from __future__ import annotations

import urllib.parse
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import AllZeroWeights, DimensionMismatch, NonFiniteValues

TASK_KINDS = ("classification", "vqa_closed", "vqa_open")

# Storage dtypes for embedding payloads. Arithmetic is always f32/f64.
STORAGE_DTYPES = ("f32", "f16")


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Validate and freeze an embedding vector.

    Returns a read-only 1-D float32 array. Raises ``DimensionMismatch``
    if ``dim`` is given and does not match, ``NonFiniteValues`` on NaN/Inf.
    """
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise DimensionMismatch(f"embedding must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(
            f"embedding has dimension {arr.shape[0]}, expected {dim}"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValues("embedding contains NaN or Inf")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def normalize_distribution(weights) -> np.ndarray:
    """Rescale non-negative weights into a probability vector.

    Raises ``AllZeroWeights`` when every entry is zero and
    ``NonFiniteValues`` on NaN/Inf or negative entries.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NonFiniteValues("weights contain NaN or Inf")
    if np.any(w < 0):
        raise NonFiniteValues("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise AllZeroWeights("all weights are zero")
    return w / total


def is_distribution(p, tol: float = 1e-6) -> bool:
    """True when ``p`` is non-negative and sums to 1 within ``tol``."""
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(p >= -tol) and abs(p.sum() - 1.0) <= tol)


def parse_ref_param(payload_ref: str, key: str) -> str | None:
    """Extract one query parameter from a payload reference, if present.

    Payload references are opaque locators; synthetic corpora encode the
    record's label (and the image cluster it sits in) as query parameters,
    e.g. ``synth://rec/12?label=class_2&cluster=class_0``. Readers that key
    off corpus labels (the simulated reader and the reference scoring
    server) both use this convention, which is what makes them
    extensionally comparable.
    """
    _, _, query = payload_ref.partition("?")
    if not query:
        return None
    for part in query.split("&"):
        k, _, value = part.partition("=")
        if k == key and value:
            return urllib.parse.unquote(value)
    return None


def parse_label_ref(payload_ref: str) -> str | None:
    return parse_ref_param(payload_ref, "label")


def parse_cluster_ref(payload_ref: str) -> str | None:
    return parse_ref_param(payload_ref, "cluster")


def make_label_ref(prefix: str, label: str, cluster: str | None = None) -> str:
    """Build a payload reference carrying ``label`` (and optionally the
    image cluster the record sits in); inverse of the parse helpers."""
    ref = f"{prefix}?label={urllib.parse.quote(label)}"
    if cluster is not None:
        ref += f"&cluster={urllib.parse.quote(cluster)}"
    return ref


@dataclass(frozen=True)
class ClassVocab:
    """Ordered, stable set of answer strings (the class-token set)."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise ValueError("class vocabulary must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("class labels must be pairwise distinct")
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def argmax_label(self, probs) -> str:
        """Label of the highest-probability entry; ties go to the lowest index."""
        p = np.asarray(probs, dtype=np.float64)
        if p.shape[0] != len(self.labels):
            raise ValueError("probability vector does not match vocabulary size")
        return self.labels[int(np.argmax(p))]


@dataclass(frozen=True)
class IndexRecord:
    """One corpus item: an (image, caption/report) pair as embeddings.

    ``payload_ref`` locates the underlying content; for synthetic corpora it
    also carries the record's label (see :func:`parse_label_ref`).
    """

    record_id: int
    image_emb: np.ndarray
    text_emb: np.ndarray
    payload_ref: str
    source_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "image_emb", as_embedding(self.image_emb))
        object.__setattr__(
            self, "text_emb", as_embedding(self.text_emb, dim=self.image_emb.shape[0])
        )

    @property
    def dimension(self) -> int:
        return int(self.image_emb.shape[0])

    @property
    def label(self) -> str | None:
        return parse_label_ref(self.payload_ref)

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_emb": [float(x) for x in self.image_emb],
            "text_emb": [float(x) for x in self.text_emb],
            "payload_ref": self.payload_ref,
            "source_tag": self.source_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndexRecord":
        return cls(
            record_id=int(d["record_id"]),
            image_emb=d["image_emb"],
            text_emb=d["text_emb"],
            payload_ref=d["payload_ref"],
            source_tag=d.get("source_tag", ""),
        )


@dataclass(frozen=True)
class Query:
    """One evaluation item: a query image plus its question and gold answer.

    For classification and closed VQA the gold answer must be a member of
    the class vocabulary. ``payload_ref`` plays the same locator role as on
    records and is how a remote reader learns anything about the query
    content beyond the question text.
    """

    query_id: str
    image_emb: np.ndarray
    question: str
    gold_answer: str
    class_vocab: ClassVocab
    task_kind: str = "classification"
    payload_ref: str = ""

    def __post_init__(self):
        object.__setattr__(self, "image_emb", as_embedding(self.image_emb))
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind in ("classification", "vqa_closed"):
            if self.gold_answer not in self.class_vocab:
                raise ValueError(
                    f"gold answer {self.gold_answer!r} not in class vocabulary"
                )

    @property
    def dimension(self) -> int:
        return int(self.image_emb.shape[0])

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "image_emb": [float(x) for x in self.image_emb],
            "question": self.question,
            "gold_answer": self.gold_answer,
            "class_labels": list(self.class_vocab.labels),
            "task_kind": self.task_kind,
            "payload_ref": self.payload_ref,
        }

    @classmethod
    def from_dict(cls, d: dict, vocab: ClassVocab | None = None) -> "Query":
        return cls(
            query_id=str(d["query_id"]),
            image_emb=d["image_emb"],
            question=d["question"],
            gold_answer=d["gold_answer"],
            class_vocab=vocab or ClassVocab(tuple(d["class_labels"])),
            task_kind=d.get("task_kind", "classification"),
            payload_ref=d.get("payload_ref", ""),
        )


@dataclass(frozen=True)
class Candidate:
    """One retrieved record with the head that scored it."""

    record_id: int
    head: str  # {"text", "image"}
    score: float


@dataclass(frozen=True)
class CandidateSet:
    """Ordered retrieval result for one query.

    Single-head results and ``union_rerank`` merges are ordered by raw
    score descending with ties broken by ascending record id; the
    ``interleave`` merge keeps alternation order instead.
    """

    query_id: str
    entries: tuple[Candidate, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Candidate]:
        return iter(self.entries)

    def record_ids(self) -> list[int]:
        return [c.record_id for c in self.entries]

    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.entries], dtype=np.float64)

    def truncated(self, k: int) -> "CandidateSet":
        return CandidateSet(self.query_id, self.entries[:k])


# Sentinel record id used for rows scored without any retrieved candidate
# (the no-retrieval inference path). Real record ids are non-negative.
NO_CANDIDATE_ID = -1


class ReaderScoreTable:
    """Per-(query, candidate) class-probability rows from one reader.

    Rows are immutable once added; adding the same key twice is an error,
    which enforces the scored-exactly-once invariant. ``variant`` records
    whether rows were scored with or without the query image so that a
    cache cannot silently serve the wrong inference mode.
    """

    NORM_TOL = 1e-6

    def __init__(self, vocab: ClassVocab, variant: str = "with_image"):
        if variant not in ("with_image", "no_image"):
            raise ValueError(f"unknown score-table variant {variant!r}")
        self.vocab = vocab
        self.variant = variant
        self._rows: dict[tuple[str, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, key: tuple[str, int]) -> bool:
        return key in self._rows

    def keys(self):
        return self._rows.keys()

    def add(self, query_id: str, record_id: int, probs) -> None:
        key = (str(query_id), int(record_id))
        if key in self._rows:
            raise ValueError(f"row {key} already scored")
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (len(self.vocab),):
            raise ValueError(
                f"row {key} has {p.shape[0]} entries, vocabulary has {len(self.vocab)}"
            )
        if np.any(p < 0) or abs(p.sum() - 1.0) > self.NORM_TOL:
            raise ValueError(f"row {key} is not a probability vector")
        p = p.copy()
        p.flags.writeable = False
        self._rows[key] = p

    def get(self, query_id: str, record_id: int) -> np.ndarray | None:
        return self._rows.get((str(query_id), int(record_id)))

    def rows(self) -> Iterator[tuple[str, int, np.ndarray]]:
        for (qid, rid), p in self._rows.items():
            yield qid, rid, p

    def sorted_rows(self) -> list[tuple[str, int, np.ndarray]]:
        return sorted(
            ((q, r, p) for (q, r), p in self._rows.items()),
            key=lambda t: (t[0], t[1]),
        )
