"""Deterministic synthetic corpus and query generator.

The geometry is a Gaussian cluster model over unit-normalized embeddings:

* every class has an image-space direction and a correlated text-space
  direction, so cross-modal retrieval (query image against index text)
  works partially but not perfectly out of the box;
* *informative* records sit in their own class's cluster and carry that
  class's label;
* *modality distractors* sit near a class's image cluster (pulled a
  configurable fraction toward their true class) while carrying a
  different label, the failure shape where visually similar records teach
  the reader the wrong thing. Their text embeddings sit near their true
  label's text direction, so the text head can learn to expose them;
* *background* records (the remainder) have unstructured image directions.

Queries get a larger noise budget than records. That keeps an injected
near-duplicate of one query from outscoring real records for any other
query, which is what makes targeted inconsistency injection precise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleRate
from .index import Index, RetrieverHeads, all_scores, dual_retrieve
from .types import ClassVocab, IndexRecord, Query, make_label_ref

INFORMATIVE = "informative"
DISTRACTOR = "distractor"


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters; everything flows from ``seed``."""

    n_classes: int = 4
    dim: int = 32
    records_per_class: int = 50
    queries_per_class: int = 50
    sigma_between: float = 1.0
    sigma_within: float = 0.55
    informative_fraction: float = 0.63
    distractor_fraction: float = 0.27
    text_image_corr: float = 0.5
    distractor_pull: float = 0.15
    query_sigma: float = 1.15
    text_offset: float = 0.6
    normalize: bool = True
    seed: int = 7

    def __post_init__(self):
        if min(self.n_classes, self.dim, self.records_per_class, self.queries_per_class) < 1:
            raise ValueError("all counts must be at least 1")
        for name in ("informative_fraction", "distractor_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.informative_fraction + self.distractor_fraction > 1.0 + 1e-9:
            raise ValueError("informative and distractor fractions exceed 1")
        if not 0.0 <= self.text_image_corr <= 1.0:
            raise ValueError("text_image_corr must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "dim": self.dim,
            "records_per_class": self.records_per_class,
            "queries_per_class": self.queries_per_class,
            "sigma_between": self.sigma_between,
            "sigma_within": self.sigma_within,
            "informative_fraction": self.informative_fraction,
            "distractor_fraction": self.distractor_fraction,
            "text_image_corr": self.text_image_corr,
            "distractor_pull": self.distractor_pull,
            "query_sigma": self.query_sigma,
            "text_offset": self.text_offset,
            "normalize": self.normalize,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.normal(size=(n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _maybe_unit(v: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return v
    norm = np.linalg.norm(v)
    return v if norm == 0 else v / norm


def generate(spec: SynthSpec) -> tuple[Index, list[Query], dict[int, str]]:
    """Build (index, queries, informativeness tags), reproducibly.

    Tags map record id to "informative" or "distractor"; an informative
    record's label always equals its cluster's label. Query golds are
    balanced across classes.
    """
    rng = np.random.default_rng(spec.seed)
    c, d = spec.n_classes, spec.dim
    labels = [f"class_{i}" for i in range(c)]
    vocab = ClassVocab(tuple(labels))
    sqrt_d = math.sqrt(d)

    img_dirs = _unit_rows(rng, c, d)
    text_wobble = _unit_rows(rng, c, d)
    text_dirs = img_dirs + spec.text_offset * text_wobble
    text_dirs = text_dirs / np.linalg.norm(text_dirs, axis=1, keepdims=True)

    n = spec.records_per_class
    n_inf = int(round(spec.informative_fraction * n))
    n_dis = int(round(spec.distractor_fraction * n))
    n_inf = min(n_inf, n)
    n_dis = min(n_dis, n - n_inf)
    n_bg = n - n_inf - n_dis

    rho = spec.text_image_corr
    rho_tail = math.sqrt(max(0.0, 1.0 - rho * rho))

    records: list[IndexRecord] = []
    tags: dict[int, str] = {}
    rid = 0
    for cls_idx in range(c):
        kinds = [INFORMATIVE] * n_inf + [DISTRACTOR] * n_dis + ["background"] * n_bg
        for kind in kinds:
            cluster = labels[cls_idx]
            if kind == INFORMATIVE:
                label_idx = cls_idx
                img_center = img_dirs[cls_idx]
            elif kind == DISTRACTOR:
                # one coherent wrong label per cluster: lookalike records
                # that consistently teach the same wrong answer
                label_idx = (cls_idx + 1) % c if c > 1 else cls_idx
                pulled = (1.0 - spec.distractor_pull) * img_dirs[cls_idx] + (
                    spec.distractor_pull * img_dirs[label_idx]
                )
                img_center = pulled / np.linalg.norm(pulled)
            else:
                label_idx = int(rng.integers(c))
                own = rng.normal(size=d)
                img_center = own / np.linalg.norm(own)
                cluster = None  # unstructured image, credible to nobody
            z_img = rng.normal(size=d) / sqrt_d
            z_txt = rho * z_img + rho_tail * (rng.normal(size=d) / sqrt_d)
            image = spec.sigma_between * img_center + spec.sigma_within * z_img
            text = spec.sigma_between * text_dirs[label_idx] + spec.sigma_within * z_txt
            label = labels[label_idx]
            records.append(
                IndexRecord(
                    record_id=rid,
                    image_emb=_maybe_unit(image, spec.normalize).astype(np.float32),
                    text_emb=_maybe_unit(text, spec.normalize).astype(np.float32),
                    payload_ref=make_label_ref(f"synth://rec/{rid}", label, cluster),
                    source_tag="synth",
                )
            )
            tags[rid] = INFORMATIVE if kind == INFORMATIVE else DISTRACTOR
            rid += 1

    queries: list[Query] = []
    qid = 0
    for cls_idx in range(c):
        for _ in range(spec.queries_per_class):
            z = rng.normal(size=d) / sqrt_d
            image = spec.sigma_between * img_dirs[cls_idx] + spec.query_sigma * z
            gold = labels[cls_idx]
            query_id = f"q{qid:04d}"
            queries.append(
                Query(
                    query_id=query_id,
                    image_emb=_maybe_unit(image, spec.normalize).astype(np.float32),
                    question="Which class does this image belong to?",
                    gold_answer=gold,
                    class_vocab=vocab,
                    task_kind="classification",
                    payload_ref=make_label_ref(f"synth://query/{query_id}", gold),
                )
            )
            qid += 1

    return Index(records), queries, tags


def informative_recall_at_k(
    index: Index,
    queries,
    heads: RetrieverHeads,
    tags: dict[int, str],
    k: int = 4,
    merge: str = "union_rerank",
) -> float:
    """Mean fraction of the merged top-k that is informative for its query
    (tagged informative and labelled with the query's gold answer)."""
    total = 0.0
    for query in queries:
        cands = dual_retrieve(query.image_emb, index, heads.text, heads.image, k, merge)
        hits = 0
        top = cands.entries[:k]
        for cand in top:
            rec = index.get(cand.record_id)
            if tags.get(cand.record_id) == INFORMATIVE and rec.label == query.gold_answer:
                hits += 1
        total += hits / max(1, len(top))
    return total / len(queries)


def _merged_topk_labels(index: Index, query: Query, k: int) -> list[str]:
    heads = RetrieverHeads.identity(index.dimension)
    cands = dual_retrieve(query.image_emb, index, heads.text, heads.image, k)
    return [index.get(c.record_id).label or "" for c in cands.entries[:k]]


def inject_inconsistency(
    index: Index, queries, rate: float, k: int = 4
) -> Index:
    """Guarantee mixed-label top-k for a ``rate`` fraction of queries.

    Queries whose identity-head top-k already mixes labels count toward the
    quota first; each remaining selected query gets one dedicated clone
    record: its own image embedding rescaled to outscore the current top-1,
    carrying a different label. Clones score below real records for every
    other query (queries have a larger noise budget than records), so the
    injection stays targeted.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    queries = sorted(queries, key=lambda q: q.query_id)
    if rate == 0.0 or not queries:
        return index
    vocab = queries[0].class_vocab
    if len(index) < k or len(vocab) < 2:
        raise InfeasibleRate(
            f"corpus of {len(index)} records / {len(vocab)} classes cannot support"
            f" mixed top-{k} sets"
        )
    quota = int(round(rate * len(queries)))
    natural = []
    clean = []
    for q in queries:
        if len(set(_merged_topk_labels(index, q, k))) > 1:
            natural.append(q)
        else:
            clean.append(q)
    to_inject = clean[: max(0, quota - len(natural))]

    records = list(index.records)
    next_id = (records[-1].record_id + 1) if records else 0
    heads = RetrieverHeads.identity(index.dimension)
    injected: list[tuple[Query, int]] = []
    for q in to_inject:
        q_emb = np.asarray(q.image_emb, dtype=np.float64)
        top_image = float(np.max(all_scores(q.image_emb, index, "image", heads.image)))
        top_text = float(np.max(all_scores(q.image_emb, index, "text", heads.text)))
        top1 = max(top_image, top_text)
        norm_sq = float(q_emb @ q_emb)
        scale = (top1 + 0.01 * (abs(top1) + 1.0)) / norm_sq
        clone = (scale * q_emb).astype(np.float32)
        fake = vocab.labels[(vocab.index(q.gold_answer) + 1) % len(vocab)]
        records.append(
            IndexRecord(
                record_id=next_id,
                image_emb=clone,
                text_emb=clone,
                # cluster = the query's own class: the clone is a credible lookalike
                payload_ref=make_label_ref(
                    f"synth://inject/{q.query_id}", fake, q.gold_answer
                ),
                source_tag="synth-inject",
            )
        )
        injected.append((q, next_id))
        next_id += 1

    new_index = Index(records, storage_dtype=index.storage_dtype)
    # the clone construction makes a single-label top-k all but impossible;
    # verify anyway and rotate the clone's label if it ever happens
    for q, rid in injected:
        for attempt in range(len(vocab)):
            top_labels = _merged_topk_labels(new_index, q, k)
            if len(set(top_labels)) > 1:
                break
            only = top_labels[0]
            alt = next(lbl for lbl in vocab.labels if lbl != only)
            pos = next(i for i, r in enumerate(records) if r.record_id == rid)
            old = records[pos]
            records[pos] = IndexRecord(
                record_id=old.record_id,
                image_emb=old.image_emb,
                text_emb=old.text_emb,
                payload_ref=make_label_ref(
                    f"synth://inject/{q.query_id}", alt, q.gold_answer
                ),
                source_tag=old.source_tag,
            )
            new_index = Index(records, storage_dtype=index.storage_dtype)
    return new_index


def write_tags(tags: dict[int, str], path) -> None:
    from . import jsonio

    jsonio.write_jsonl(
        path,
        "ragfuse-tags",
        {},
        ({"record_id": rid, "tag": tag} for rid, tag in sorted(tags.items())),
    )


def read_tags(path) -> dict[int, str]:
    from . import jsonio

    _, rows = jsonio.read_jsonl(path, "ragfuse-tags")
    return {int(r["record_id"]): r["tag"] for r in rows}
