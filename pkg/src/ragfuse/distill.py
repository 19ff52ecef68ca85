"""Retriever distillation against a frozen reader.

The training signal: for each query, score the top-K retrieved candidates
with the frozen reader, restrict each response to the gold answer's
probability, and normalize over the K candidates. That posterior

    p_k = g_k / sum_j g_j

is the target for the retriever's own temperature softmax

    r_k = exp(s_k / tau) / sum_j exp(s_j / tau)

and the loss is KL(p || r), summed per query and averaged over the batch.
Only the projection head's parameters move; with the posterior frozen the
gradient through the scores is (r_k - p_k) / tau, and the chain rule
through score = q . (W e_k + b) gives

    dL/dW = sum_k (r_k - p_k) / tau * outer(q, e_k)
    dL/db = sum_k (r_k - p_k) / tau * q          (zero: the coefficients sum to 0)

Heads train sequentially: the text head first, then the image head, with
earlier heads frozen at their trained values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .errors import (
    AllZeroWeights,
    DivergedLoss,
    LengthMismatch,
    NonFiniteValues,
    ReaderError,
)
from .index import Index, ProjectionHead, RetrieverHeads, top_k
from .reader import Reader
from .types import Query

EPS = 1e-12
UNIFORM_TOL = 1e-9

RERETRIEVAL_POLICIES = ("once", "per_epoch", "per_step")


@dataclass(frozen=True)
class TrainerConfig:
    """Distillation hyperparameters.

    ``temperature`` controls the sharpness of the retriever distribution;
    ``candidates_per_query`` is K, the reader-scored candidate count (at
    least 2, else the KL target is vacuous). One full-batch gradient step
    is taken per epoch; ``reretrieval`` says how often the candidate sets
    are refreshed with the current parameters.
    """

    temperature: float = 0.1
    candidates_per_query: int = 50
    learning_rate: float = 1.0
    epochs: int = 100
    head_order: tuple[str, ...] = ("text", "image")
    seed: int = 0
    momentum: float = 0.0
    reretrieval: str = "per_epoch"
    grad_check: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.candidates_per_query < 2:
            raise ValueError(
                "candidates_per_query must be at least 2; the posterior over a"
                " single candidate is vacuous"
            )
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning rate must be non-negative")
        if self.reretrieval not in RERETRIEVAL_POLICIES:
            raise ValueError(f"unknown re-retrieval policy {self.reretrieval!r}")
        for tag in self.head_order:
            if tag not in ("text", "image"):
                raise ValueError(f"unknown head tag {tag!r}")
        object.__setattr__(self, "head_order", tuple(self.head_order))

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "candidates_per_query": self.candidates_per_query,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "head_order": list(self.head_order),
            "seed": self.seed,
            "momentum": self.momentum,
            "reretrieval": self.reretrieval,
            "grad_check": self.grad_check,
        }


@dataclass
class TrainState:
    """Mutable optimizer state for one head's training run."""

    head: ProjectionHead
    velocity_w: np.ndarray
    velocity_b: np.ndarray
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    uniform_posterior_queries: int = 0

    @classmethod
    def fresh(cls, head: ProjectionHead) -> "TrainState":
        return cls(
            head=head,
            velocity_w=np.zeros_like(head.weight),
            velocity_b=np.zeros_like(head.bias),
        )


def reader_posterior(gold_probs) -> np.ndarray:
    """Normalize per-candidate gold-answer probabilities into the target p.

    exp(log g_k) / sum exp(log g_j) collapses to proportional
    normalization; zeros are floored at 1e-12 before use so a single dead
    candidate cannot produce -inf terms downstream.
    """
    g = np.asarray(gold_probs, dtype=np.float64)
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise NonFiniteValues("gold probabilities must be finite and non-negative")
    if g.max(initial=0.0) <= 0.0:
        raise AllZeroWeights("every candidate has zero gold probability")
    g = np.maximum(g, EPS)
    return g / g.sum()


def retriever_distribution(scores, temperature: float) -> np.ndarray:
    """softmax(scores / temperature) with max-subtraction for stability."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NonFiniteValues("scores contain NaN or Inf")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    with np.errstate(over="ignore"):
        z = s / temperature
    if not np.all(np.isfinite(z)):
        raise NonFiniteValues("scores overflow at this temperature")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def kl_loss(p, q) -> float:
    """KL(p || q) with q floored at 1e-12; zero-mass p terms contribute 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"p has shape {p.shape}, q has shape {q.shape}")
    q = np.maximum(q, EPS)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def loss_gradient(posterior, retriever_probs, temperature, query_emb, candidate_embs):
    """Analytic gradient of KL(p || r) w.r.t. the projection parameters.

    ``candidate_embs`` is the (K, d) matrix of the embeddings the head
    scores. Returns (dW, db); db is analytically zero because the score
    coefficients sum to zero, but is computed anyway as a cheap invariant.
    """
    p = np.asarray(posterior, dtype=np.float64)
    r = np.asarray(retriever_probs, dtype=np.float64)
    q = np.asarray(query_emb, dtype=np.float64)
    embs = np.asarray(candidate_embs, dtype=np.float64)
    if p.shape != r.shape or embs.shape[0] != p.shape[0]:
        raise LengthMismatch("posterior, retriever probs and candidates misaligned")
    coef = (r - p) / temperature
    d_w = np.outer(q, coef @ embs)
    d_b = coef.sum() * q
    return d_w, d_b


def _candidate_matrix(index: Index, head_tag: str, record_ids) -> np.ndarray:
    rows = []
    for rid in record_ids:
        rec = index.get(rid)
        rows.append(rec.text_emb if head_tag == "text" else rec.image_emb)
    return np.asarray(np.stack(rows), dtype=np.float64)


def _fetch_gold_probs(reader: Reader, index: Index, query: Query, record_ids):
    gold_idx = query.class_vocab.index(query.gold_answer)
    out = np.empty(len(record_ids), dtype=np.float64)
    for i, rid in enumerate(record_ids):
        probs = reader.score_candidate(query, index.get(rid), query.class_vocab)
        out[i] = probs[gold_idx]
    return out


def finite_difference_gradient(posterior, temperature, query_emb, candidate_embs,
                               weight, bias, h: float = 1e-4):
    """Central-difference gradient of the per-query KL, the numeric oracle."""
    q = np.asarray(query_emb, dtype=np.float64)
    embs = np.asarray(candidate_embs, dtype=np.float64)
    p = np.asarray(posterior, dtype=np.float64)

    def loss_at(w, b):
        scores = embs @ (w.T @ q) + q @ b
        return kl_loss(p, retriever_distribution(scores, temperature))

    d = weight.shape[0]
    num_w = np.zeros_like(weight)
    for i in range(d):
        for j in range(d):
            w_plus = weight.copy()
            w_plus[i, j] += h
            w_minus = weight.copy()
            w_minus[i, j] -= h
            num_w[i, j] = (loss_at(w_plus, bias) - loss_at(w_minus, bias)) / (2 * h)
    num_b = np.zeros_like(bias)
    for i in range(d):
        b_plus = bias.copy()
        b_plus[i] += h
        b_minus = bias.copy()
        b_minus[i] -= h
        num_b[i] = (loss_at(weight, b_plus) - loss_at(weight, b_minus)) / (2 * h)
    return num_w, num_b


def train_head(
    index: Index,
    queries,
    reader: Reader,
    head_tag: str,
    config: TrainerConfig,
    init: ProjectionHead | None = None,
) -> tuple[ProjectionHead, list[dict]]:
    """Gradient descent on the mean per-query KL for one head.

    Candidates are re-retrieved with the current parameters according to
    the config policy (once / per epoch; one full-batch step is taken per
    epoch, so ``per_step`` coincides with ``per_epoch``). Reader scores
    come from whatever caching layer the reader provides; this module
    never mutates reader output. Open-ended queries are excluded.
    """
    queries = sorted(
        (q for q in queries if q.task_kind != "vqa_open"), key=lambda q: q.query_id
    )
    if not queries:
        raise ValueError("no trainable queries (all open-ended?)")
    state = TrainState.fresh(init or ProjectionHead.identity(index.dimension, head_tag))
    k = min(config.candidates_per_query, len(index))
    if k < 2:
        raise ValueError("index too small for a 2-candidate posterior")

    candidate_ids: dict[str, list[int]] = {}
    for epoch in range(config.epochs):
        if epoch == 0 or config.reretrieval in ("per_epoch", "per_step"):
            candidate_ids = {
                q.query_id: top_k(q.image_emb, index, head_tag, state.head, k).record_ids()
                for q in queries
            }
        total_loss = 0.0
        grad_w = np.zeros_like(state.head.weight)
        grad_b = np.zeros_like(state.head.bias)
        uniform_count = 0
        for query in queries:
            rids = candidate_ids[query.query_id]
            try:
                gold = _fetch_gold_probs(reader, index, query, rids)
            except ReaderError:
                raise
            p = reader_posterior(gold)
            embs = _candidate_matrix(index, head_tag, rids)
            q_emb = np.asarray(query.image_emb, dtype=np.float64)
            scores = embs @ (state.head.weight.T @ q_emb) + q_emb @ state.head.bias
            try:
                r = retriever_distribution(scores, config.temperature)
            except NonFiniteValues as exc:
                # finite parameters can still overflow the tempered logits
                raise DivergedLoss(f"scores diverged at epoch {epoch}: {exc}") from exc
            total_loss += kl_loss(p, r)
            if np.max(np.abs(p - 1.0 / len(p))) < UNIFORM_TOL:
                # uninformative posterior: counted but contributes no update
                uniform_count += 1
                continue
            d_w, d_b = loss_gradient(p, r, config.temperature, q_emb, embs)
            if config.grad_check and epoch == 0:
                num_w, num_b = finite_difference_gradient(
                    p, config.temperature, q_emb, embs, state.head.weight, state.head.bias
                )
                denom = max(np.linalg.norm(d_w), np.linalg.norm(num_w), 1e-12)
                if np.linalg.norm(d_w - num_w) / denom > 1e-4:
                    raise DivergedLoss("analytic gradient disagrees with finite differences")
            grad_w += d_w
            grad_b += d_b
        mean_loss = total_loss / len(queries)
        if not np.isfinite(mean_loss):
            raise DivergedLoss(f"mean KL became non-finite at epoch {epoch}")
        grad_w /= len(queries)
        grad_b /= len(queries)
        grad_norm = float(np.sqrt(np.sum(grad_w**2) + np.sum(grad_b**2)))
        state.history.append(
            {
                "epoch": epoch,
                "head": head_tag,
                "mean_kl": mean_loss,
                "grad_norm": grad_norm,
                "uniform_posteriors": uniform_count,
            }
        )
        state.uniform_posterior_queries = uniform_count
        if config.learning_rate > 0.0:
            state.velocity_w = config.momentum * state.velocity_w + grad_w
            state.velocity_b = config.momentum * state.velocity_b + grad_b
            new_w = state.head.weight - config.learning_rate * state.velocity_w
            new_b = state.head.bias - config.learning_rate * state.velocity_b
            if not (np.all(np.isfinite(new_w)) and np.all(np.isfinite(new_b))):
                raise DivergedLoss(f"parameters became non-finite at epoch {epoch}")
            state.head = state.head.with_params(new_w, new_b)
        state.epoch = epoch + 1
    return state.head, state.history


def train_sequential(
    index: Index,
    queries,
    reader: Reader,
    config: TrainerConfig,
    init: RetrieverHeads | None = None,
) -> tuple[RetrieverHeads, list[dict]]:
    """Train the configured heads one after another.

    Each head starts from the given (or identity) parameters and trains to
    completion before the next head starts; finished heads stay frozen.
    """
    heads = init or RetrieverHeads.identity(index.dimension)
    history: list[dict] = []
    for head_tag in config.head_order:
        trained, head_history = train_head(
            index, queries, reader, head_tag, config, init=heads.get(head_tag)
        )
        heads = heads.replace(trained)
        history.extend(head_history)
    return heads, history


def write_loss_history(history, path) -> None:
    jsonio.write_jsonl(path, "ragfuse-loss-history", {}, history)


def read_loss_history(path) -> list[dict]:
    _, rows = jsonio.read_jsonl(path, "ragfuse-loss-history")
    return rows
