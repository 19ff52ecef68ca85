"""Score-fusion inference over retrieved candidates.

Each retrieved pair is prepended to the query on its own, the reader
scores every augmented prompt independently, and the final distribution is
the mixture

    fused(a) = sum_k reader_k(a) * w_k,      w = softmax(raw scores)

with no temperature on the inference softmax (training uses one; the
asymmetry is deliberate). Alternative modes reuse the same per-candidate
rows under different weightings, or change what is retrieved (random,
nothing) or what the reader sees (no query image).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jsonio
from .errors import LengthMismatch, NonFiniteValues, UnsupportedMode
from .index import Index, RetrieverHeads, all_scores, dual_retrieve
from .reader import Reader, hash_uniforms
from .types import Candidate, CandidateSet, ClassVocab, Query

MODES = (
    "fused",
    "top1",
    "max_confidence",
    "mean_confidence",
    "reranked",
    "no_retrieval",
    "random_retrieval",
    "no_query_image",
)

DEFAULT_K = 4


@dataclass(frozen=True)
class ContextPlan:
    """Prompt assembly order: retrieved pairs, then the query pair."""

    record_ids: tuple[int, ...]
    query_id: str

    def items(self) -> list[tuple[str, object]]:
        return [("record", rid) for rid in self.record_ids] + [("query", self.query_id)]


def assemble_context(candidates: CandidateSet, query: Query, mode: str = "fused"):
    """Context plans for the reader.

    ``fused`` emits one single-candidate plan per retrieved pair (the
    reader scores augmented prompts in parallel); ``multishot`` emits one
    plan holding every pair in retrieval order ahead of the query. An empty
    candidate list yields the bare-query plan (the no-retrieval path).
    """
    if len(candidates) == 0:
        return [ContextPlan((), query.query_id)]
    if mode == "multishot":
        return [ContextPlan(tuple(candidates.record_ids()), query.query_id)]
    return [ContextPlan((rid,), query.query_id) for rid in candidates.record_ids()]


def retrieval_weights(scores) -> np.ndarray:
    """softmax of the raw retrieval scores (temperature-free)."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NonFiniteValues("retrieval scores contain NaN or Inf")
    z = s - s.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class FusedPrediction:
    """Everything the analysis stage needs about one query's prediction."""

    query_id: str
    mode: str
    predicted_label: str
    gold_answer: str
    fused_probs: np.ndarray
    candidate_probs: np.ndarray  # (k, n_classes); empty for no_retrieval
    weights: np.ndarray  # retrieval weights over the k candidates
    candidate_ids: tuple[int, ...]
    candidate_labels: tuple[str, ...]  # reader argmax per candidate
    task_kind: str = "classification"

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "mode": self.mode,
            "predicted_label": self.predicted_label,
            "gold": self.gold_answer,
            "fused_probs": [float(x) for x in self.fused_probs],
            "candidate_labels": list(self.candidate_labels),
            "candidate_ids": list(self.candidate_ids),
            "weights": [float(x) for x in self.weights],
            "candidate_confidence": [
                float(row.max()) for row in np.atleast_2d(self.candidate_probs)
            ]
            if len(self.candidate_ids)
            else [],
            "task_kind": self.task_kind,
        }


def fuse(candidate_probs, weights, vocab: ClassVocab) -> tuple[np.ndarray, str]:
    """Convex combination of per-candidate distributions.

    Returns the fused distribution and its argmax label (ties break to the
    lowest label index). Renormalization only corrects float drift; the
    mixture of distributions under distribution weights is already
    normalized to within rounding.
    """
    rows = np.asarray(candidate_probs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] != w.shape[0]:
        raise LengthMismatch("candidate rows and weights misaligned")
    if rows.shape[1] != len(vocab):
        raise LengthMismatch("candidate rows do not match the vocabulary")
    fused = w @ rows
    total = fused.sum()
    if abs(total - 1.0) > 1e-9:
        fused = fused / total
    return fused, vocab.argmax_label(fused)


def _score_rows(reader, query, index, candidate_ids, vocab, include_query_image=True):
    rows = np.empty((len(candidate_ids), len(vocab)), dtype=np.float64)
    for i, rid in enumerate(candidate_ids):
        rows[i] = reader.score_candidate(
            query, index.get(rid), vocab, include_query_image=include_query_image
        )
    return rows


def _random_candidates(index: Index, query: Query, k: int, seed: int) -> list[int]:
    # per-query RNG so the draw is independent of evaluation order
    u = hash_uniforms(seed, query.query_id, -2, 1)[0]
    rng = np.random.default_rng(int(u * 2**63))
    positions = rng.choice(len(index), size=min(k, len(index)), replace=False)
    return [index.records[i].record_id for i in sorted(positions)]


def predict(
    query: Query,
    index: Index,
    heads: RetrieverHeads,
    reader: Reader,
    k: int = DEFAULT_K,
    mode: str = "fused",
    merge: str = "union_rerank",
    seed: int | None = None,
    reranker=None,
) -> FusedPrediction:
    """One query's prediction under the given inference mode.

    Deterministic given (inputs, seed). ``random_retrieval`` requires a
    seed; ``reranked`` requires a reranker callable (rows -> candidate
    index); ``no_query_image`` requires a reader that supports image-less
    scoring.
    """
    if mode not in MODES:
        raise UnsupportedMode(f"unknown inference mode {mode!r}")
    vocab = query.class_vocab

    if mode == "no_retrieval":
        probs = reader.score_candidate(query, None, vocab)
        return FusedPrediction(
            query_id=query.query_id,
            mode=mode,
            predicted_label=vocab.argmax_label(probs),
            gold_answer=query.gold_answer,
            fused_probs=probs,
            candidate_probs=np.zeros((0, len(vocab))),
            weights=np.zeros(0),
            candidate_ids=(),
            candidate_labels=(),
            task_kind=query.task_kind,
        )

    if mode == "random_retrieval":
        if seed is None:
            raise UnsupportedMode("random_retrieval requires a seed")
        cand_ids = _random_candidates(index, query, k, seed)
        image_scores = all_scores(query.image_emb, index, "image", heads.image)
        pos = {rec.record_id: i for i, rec in enumerate(index.records)}
        cands = CandidateSet(
            query.query_id,
            tuple(
                Candidate(rid, "image", float(image_scores[pos[rid]]))
                for rid in cand_ids
            ),
        )
    else:
        merged = dual_retrieve(query.image_emb, index, heads.text, heads.image, k, merge)
        cands = CandidateSet(query.query_id, merged.entries[:k])

    include_image = mode != "no_query_image"
    rows = _score_rows(
        reader, query, index, cands.record_ids(), vocab, include_query_image=include_image
    )
    weights = retrieval_weights(cands.scores())
    cand_labels = tuple(vocab.argmax_label(row) for row in rows)

    if mode in ("fused", "no_query_image"):
        fused, label = fuse(rows, weights, vocab)
    elif mode == "top1":
        w = np.zeros(len(cands))
        w[0] = 1.0
        fused, label = fuse(rows, w, vocab)
        weights = w
    elif mode == "max_confidence":
        flat = int(np.argmax(rows))
        row_idx = flat // rows.shape[1]
        w = np.zeros(len(cands))
        w[row_idx] = 1.0
        fused, label = fuse(rows, w, vocab)
        weights = w
    elif mode == "mean_confidence":
        w = np.full(len(cands), 1.0 / len(cands))
        fused, label = fuse(rows, w, vocab)
        weights = w
    elif mode == "reranked":
        if reranker is None:
            raise UnsupportedMode("reranked mode requires a reranker")
        choice = int(reranker(rows, cands))
        if not 0 <= choice < len(cands):
            raise UnsupportedMode(f"reranker chose index {choice} of {len(cands)}")
        w = np.zeros(len(cands))
        w[choice] = 1.0
        fused, label = fuse(rows, w, vocab)
        weights = w
    else:  # random_retrieval falls through to plain fusion over its draws
        fused, label = fuse(rows, weights, vocab)

    return FusedPrediction(
        query_id=query.query_id,
        mode=mode,
        predicted_label=label,
        gold_answer=query.gold_answer,
        fused_probs=fused,
        candidate_probs=rows,
        weights=weights,
        candidate_ids=tuple(cands.record_ids()),
        candidate_labels=cand_labels,
        task_kind=query.task_kind,
    )


def predict_all(queries, index, heads, reader, k=DEFAULT_K, mode="fused", jobs=1, **kw):
    """Predictions for a query set, ordered by query id.

    Per-query work is independent; ``jobs`` caps the worker count. Results
    are reduced in query order either way, so parallel runs are
    reproducible (jobs=1 forces fully sequential evaluation).
    """
    ordered = sorted(queries, key=lambda q: q.query_id)
    if jobs <= 1:
        return [predict(q, index, heads, reader, k=k, mode=mode, **kw) for q in ordered]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(
            pool.map(lambda q: predict(q, index, heads, reader, k=k, mode=mode, **kw), ordered)
        )


def write_predictions(predictions, path, vocab: ClassVocab) -> None:
    predictions = list(predictions)
    jsonio.write_jsonl(
        path,
        "ragfuse-predictions",
        {
            "class_labels": list(vocab.labels),
            "modes": sorted({p.mode for p in predictions}),
        },
        (p.to_dict() for p in predictions),
    )


def read_predictions(path) -> tuple[ClassVocab, list[dict]]:
    header, rows = jsonio.read_jsonl(path, "ragfuse-predictions")
    return ClassVocab(tuple(header["class_labels"])), rows
