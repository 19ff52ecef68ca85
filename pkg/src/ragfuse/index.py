"""Exact dense top-k retrieval with dual scoring heads.

An :class:`Index` is an immutable array of records with two embedding
matrices (image and text). Retrieval is an exact full scan: the similarity
is a dot product between the raw query image embedding and a linearly
projected index embedding,

    score(q, r) = q . (W e_r + b)

where ``e_r`` is the record's text embedding for the text head and its
image embedding for the image head. The projection applies to index
embeddings only, so a trained head is equivalent to re-embedding the index.
Cosine behaviour is obtained by normalizing embeddings at ingestion.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import jsonio, kernels
from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyIndex,
    TruncatedFile,
    VersionMismatch,
)
from .types import Candidate, CandidateSet, IndexRecord, as_embedding

HEAD_TAGS = ("text", "image")

INDEX_MAGIC = b"RGDX"
INDEX_VERSION = 1
HEAD_MAGIC = b"RGPH"
HEAD_VERSION = 1
_DTYPE_CODES = {"f32": 0, "f16": 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class ProjectionHead:
    """Trainable linear map applied to index embeddings for one head."""

    weight: np.ndarray  # (d, d) float64
    bias: np.ndarray  # (d,) float64
    head_tag: str

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"weight must be square, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionMismatch(f"bias shape {b.shape} does not match {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("projection parameters must be finite")
        if self.head_tag not in HEAD_TAGS:
            raise ValueError(f"unknown head tag {self.head_tag!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def identity(cls, dimension: int, head_tag: str) -> "ProjectionHead":
        return cls(np.eye(dimension), np.zeros(dimension), head_tag)

    @property
    def dimension(self) -> int:
        return int(self.weight.shape[0])

    def apply(self, emb: np.ndarray) -> np.ndarray:
        return self.weight @ np.asarray(emb, dtype=np.float64) + self.bias

    def with_params(self, weight, bias) -> "ProjectionHead":
        return ProjectionHead(weight, bias, self.head_tag)


@dataclass(frozen=True)
class RetrieverHeads:
    """The trained (or identity) projection pair used at inference."""

    text: ProjectionHead
    image: ProjectionHead

    @classmethod
    def identity(cls, dimension: int) -> "RetrieverHeads":
        return cls(
            ProjectionHead.identity(dimension, "text"),
            ProjectionHead.identity(dimension, "image"),
        )

    def get(self, head_tag: str) -> ProjectionHead:
        if head_tag == "text":
            return self.text
        if head_tag == "image":
            return self.image
        raise ValueError(f"unknown head tag {head_tag!r}")

    def replace(self, head: ProjectionHead) -> "RetrieverHeads":
        if head.head_tag == "text":
            return RetrieverHeads(head, self.image)
        return RetrieverHeads(self.text, head)


class Index:
    """Immutable record store with per-head embedding matrices."""

    def __init__(self, records, storage_dtype: str = "f32"):
        records = tuple(records)
        if storage_dtype not in _DTYPE_CODES:
            raise ValueError(f"unknown storage dtype {storage_dtype!r}")
        if records:
            dim = records[0].dimension
            prev = None
            for rec in records:
                if rec.dimension != dim:
                    raise DimensionMismatch(
                        f"record {rec.record_id} has dimension {rec.dimension},"
                        f" index has {dim}"
                    )
                if prev is not None and rec.record_id <= prev:
                    raise ValueError("record ids must be strictly increasing")
                prev = rec.record_id
            self.dimension = dim
        else:
            self.dimension = 0
        self.records = records
        self.storage_dtype = storage_dtype
        self._by_id = {rec.record_id: rec for rec in records}
        self._image_matrix: np.ndarray | None = None
        self._text_matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def get(self, record_id: int) -> IndexRecord:
        return self._by_id[record_id]

    def matrix(self, head_tag: str) -> np.ndarray:
        """(N, d) float32 matrix of the embeddings scored by ``head_tag``."""
        if head_tag == "image":
            if self._image_matrix is None:
                self._image_matrix = np.ascontiguousarray(
                    np.stack([r.image_emb for r in self.records]), dtype=np.float32
                )
            return self._image_matrix
        if head_tag == "text":
            if self._text_matrix is None:
                self._text_matrix = np.ascontiguousarray(
                    np.stack([r.text_emb for r in self.records]), dtype=np.float32
                )
            return self._text_matrix
        raise ValueError(f"unknown head tag {head_tag!r}")


def _check_head(head_tag: str, proj: ProjectionHead, dim: int) -> None:
    if head_tag not in HEAD_TAGS:
        raise ValueError(f"unknown head tag {head_tag!r}")
    if proj.head_tag != head_tag:
        raise ValueError(f"projection is for head {proj.head_tag!r}, not {head_tag!r}")
    if proj.dimension != dim:
        raise DimensionMismatch(
            f"projection dimension {proj.dimension} does not match index {dim}"
        )


def score(query_emb, record: IndexRecord, head_tag: str, proj: ProjectionHead) -> float:
    """Similarity of one record under one head: q . (W e + b)."""
    q = np.asarray(query_emb, dtype=np.float64)
    _check_head(head_tag, proj, record.dimension)
    if q.shape[0] != record.dimension:
        raise DimensionMismatch(
            f"query dimension {q.shape[0]} does not match record {record.dimension}"
        )
    emb = record.text_emb if head_tag == "text" else record.image_emb
    return float(q @ proj.apply(emb))


def _projected_query(query_emb, proj: ProjectionHead) -> tuple[np.ndarray, float]:
    # q.(We + b) = (W^T q).e + q.b, so a full scan needs one d*d matvec.
    q = np.asarray(query_emb, dtype=np.float64)
    return proj.weight.T @ q, float(q @ proj.bias)


def all_scores(query_emb, index: Index, head_tag: str, proj: ProjectionHead) -> np.ndarray:
    """Scores of every record in file order (the brute-force scan)."""
    if len(index) == 0:
        raise EmptyIndex("index has no records")
    _check_head(head_tag, proj, index.dimension)
    q = np.asarray(query_emb, dtype=np.float64)
    if q.shape[0] != index.dimension:
        raise DimensionMismatch(
            f"query dimension {q.shape[0]} does not match index {index.dimension}"
        )
    v, offset = _projected_query(query_emb, proj)
    return kernels.projected_scores(index.matrix(head_tag), v, offset)


def top_k(
    query_emb, index: Index, head_tag: str, proj: ProjectionHead, k: int
) -> CandidateSet:
    """The k highest-scoring records, descending, ties by ascending id."""
    if len(index) == 0:
        raise EmptyIndex("index has no records")
    if not 1 <= k <= len(index):
        raise ValueError(f"k={k} out of range for index of size {len(index)}")
    _check_head(head_tag, proj, index.dimension)
    q = np.asarray(query_emb, dtype=np.float64)
    if q.shape[0] != index.dimension:
        raise DimensionMismatch(
            f"query dimension {q.shape[0]} does not match index {index.dimension}"
        )
    v, offset = _projected_query(query_emb, proj)
    idx, scores = kernels.projected_topk(index.matrix(head_tag), v, offset, k)
    entries = tuple(
        Candidate(index.records[i].record_id, head_tag, float(s))
        for i, s in zip(idx, scores)
    )
    return CandidateSet("", entries)


def dual_retrieve(
    query_emb,
    index: Index,
    text_proj: ProjectionHead,
    image_proj: ProjectionHead,
    k_per_head: int,
    merge: str = "union_rerank",
) -> CandidateSet:
    """Retrieve with both heads and merge into one candidate list.

    ``union_rerank`` deduplicates and re-sorts the union by raw score;
    ``interleave`` alternates text/image hits in rank order. Either way a
    record found by both heads keeps its higher raw score (ties keep the
    text head's tag).
    """
    text_hits = top_k(query_emb, index, "text", text_proj, k_per_head)
    image_hits = top_k(query_emb, index, "image", image_proj, k_per_head)
    if merge == "union_rerank":
        best: dict[int, Candidate] = {}
        for cand in list(text_hits) + list(image_hits):
            cur = best.get(cand.record_id)
            if cur is None or cand.score > cur.score:
                best[cand.record_id] = cand
        merged = sorted(best.values(), key=lambda c: (-c.score, c.record_id))
        return CandidateSet("", tuple(merged))
    if merge == "interleave":
        best = {}
        for cand in list(text_hits) + list(image_hits):
            cur = best.get(cand.record_id)
            if cur is None or cand.score > cur.score:
                best[cand.record_id] = cand
        order: list[int] = []
        seen: set[int] = set()
        for pair in zip_longest_entries(text_hits.entries, image_hits.entries):
            for cand in pair:
                if cand is not None and cand.record_id not in seen:
                    seen.add(cand.record_id)
                    order.append(cand.record_id)
        return CandidateSet("", tuple(best[rid] for rid in order))
    raise ValueError(f"unknown merge policy {merge!r}")


def zip_longest_entries(a, b):
    n = max(len(a), len(b))
    for i in range(n):
        yield (a[i] if i < len(a) else None, b[i] if i < len(b) else None)


# --- binary index file ---------------------------------------------------


def write_index(index: Index, path) -> None:
    """RGDX little-endian binary format; embeddings stored per the dtype tag."""
    dtype_code = _DTYPE_CODES[index.storage_dtype]
    np_dtype = np.float16 if index.storage_dtype == "f16" else np.float32
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IIBQ", INDEX_VERSION, index.dimension, dtype_code, len(index)))
        for rec in index.records:
            payload = rec.payload_ref.encode("utf-8")
            source = rec.source_tag.encode("utf-8")
            fh.write(struct.pack("<Q", rec.record_id))
            fh.write(rec.image_emb.astype(np_dtype).tobytes())
            fh.write(rec.text_emb.astype(np_dtype).tobytes())
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            fh.write(struct.pack("<H", len(source)))
            fh.write(source)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected end of file while reading {what}")
    return data


def read_index(path) -> Index:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        version, dim, dtype_code, count = struct.unpack(
            "<IIBQ", _read_exact(fh, 17, "header")
        )
        if version != INDEX_VERSION:
            raise VersionMismatch(f"{path}: unsupported index version {version}")
        if dtype_code not in _DTYPE_NAMES:
            raise BadMagic(f"{path}: unknown dtype code {dtype_code}")
        storage = _DTYPE_NAMES[dtype_code]
        np_dtype = np.float16 if storage == "f16" else np.float32
        emb_bytes = dim * np.dtype(np_dtype).itemsize
        records = []
        for _ in range(count):
            (rid,) = struct.unpack("<Q", _read_exact(fh, 8, "record id"))
            image = np.frombuffer(
                _read_exact(fh, emb_bytes, "image embedding"), dtype=np_dtype
            ).astype(np.float32)
            text = np.frombuffer(
                _read_exact(fh, emb_bytes, "text embedding"), dtype=np_dtype
            ).astype(np.float32)
            if image.shape[0] != dim or text.shape[0] != dim:
                raise DimensionMismatch(f"{path}: embedding length mismatch")
            (plen,) = struct.unpack("<I", _read_exact(fh, 4, "payload length"))
            payload = _read_exact(fh, plen, "payload ref").decode("utf-8")
            (slen,) = struct.unpack("<H", _read_exact(fh, 2, "source length"))
            source = _read_exact(fh, slen, "source tag").decode("utf-8")
            records.append(
                IndexRecord(
                    record_id=rid,
                    image_emb=image,
                    text_emb=text,
                    payload_ref=payload,
                    source_tag=source,
                )
            )
    return Index(records, storage_dtype=storage)


# --- corpus ingestion (line-delimited text format) ------------------------


def write_corpus(index: Index, path) -> None:
    jsonio.write_jsonl(
        path,
        "ragfuse-corpus",
        {"dimension": index.dimension},
        (rec.to_dict() for rec in index.records),
    )


def read_corpus(path, normalize: bool = False, storage_dtype: str = "f32") -> Index:
    """Build an Index from the ingestion format.

    ``normalize`` rescales both embeddings of every record to unit length,
    which turns the dot-product score into cosine similarity.
    """
    header, rows = jsonio.read_jsonl(path, "ragfuse-corpus")
    records = []
    for row in rows:
        rec = IndexRecord.from_dict(row)
        if normalize:
            rec = IndexRecord(
                record_id=rec.record_id,
                image_emb=_unit(rec.image_emb),
                text_emb=_unit(rec.text_emb),
                payload_ref=rec.payload_ref,
                source_tag=rec.source_tag,
            )
        records.append(rec)
    index = Index(records, storage_dtype=storage_dtype)
    declared = header.get("dimension")
    if declared is not None and records and int(declared) != index.dimension:
        raise DimensionMismatch(
            f"{path}: header declares dimension {declared}, records have {index.dimension}"
        )
    return index


def _unit(emb: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(np.asarray(emb, dtype=np.float64)))
    if norm == 0.0:
        return emb
    return as_embedding(np.asarray(emb, dtype=np.float64) / norm)


# --- projection-head sidecar ----------------------------------------------


def write_head(head: ProjectionHead, path) -> None:
    """RGPH sidecar: version, head tag, dimension, row-major W then b (f64)."""
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        fh.write(
            struct.pack(
                "<IBI",
                HEAD_VERSION,
                HEAD_TAGS.index(head.head_tag),
                head.dimension,
            )
        )
        fh.write(np.ascontiguousarray(head.weight, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(head.bias, dtype=np.float64).tobytes())


def read_head(path) -> ProjectionHead:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != HEAD_MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        version, tag_code, dim = struct.unpack("<IBI", _read_exact(fh, 9, "header"))
        if version != HEAD_VERSION:
            raise VersionMismatch(f"{path}: unsupported head version {version}")
        if tag_code >= len(HEAD_TAGS):
            raise BadMagic(f"{path}: unknown head tag code {tag_code}")
        weight = np.frombuffer(
            _read_exact(fh, 8 * dim * dim, "weight matrix"), dtype=np.float64
        ).reshape(dim, dim)
        bias = np.frombuffer(_read_exact(fh, 8 * dim, "bias"), dtype=np.float64)
    return ProjectionHead(weight.copy(), bias.copy(), HEAD_TAGS[tag_code])


# --- query file -----------------------------------------------------------


def write_queries(queries, path) -> None:
    queries = list(queries)
    meta = {}
    if queries:
        meta["class_labels"] = list(queries[0].class_vocab.labels)
        meta["dimension"] = queries[0].dimension
    jsonio.write_jsonl(path, "ragfuse-queries", meta, (q.to_dict() for q in queries))


def read_queries(path):
    from .types import ClassVocab, Query

    header, rows = jsonio.read_jsonl(path, "ragfuse-queries")
    vocab = None
    if "class_labels" in header:
        vocab = ClassVocab(tuple(header["class_labels"]))
    out = []
    for row in rows:
        row_vocab = vocab
        if row.get("class_labels") and (
            vocab is None or tuple(row["class_labels"]) != vocab.labels
        ):
            row_vocab = ClassVocab(tuple(row["class_labels"]))
        out.append(Query.from_dict(row, vocab=row_vocab))
    return out
