"""Evaluation science: consistency splits, oracle bound, rerankers, metrics.

A query is an *inconsistent retrieval prediction* when the reader's
per-candidate labels disagree for the same query; these are the cases
where retrieval quality matters most, so splits are always reported
alongside aggregate numbers. The oracle counts a query correct when any candidate's
label matches gold, an upper bound on what any reranker can achieve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jsonio
from .errors import (
    ChoiceOutOfRange,
    EmptyEvalSet,
    MissingCandidates,
    UnsupportedTask,
)


def as_rows(predictions) -> list[dict]:
    """Accept FusedPrediction objects or dump dictionaries."""
    rows = []
    for p in predictions:
        rows.append(p if isinstance(p, dict) else p.to_dict())
    return rows


# --- metrics ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """Aggregate metrics; fields not applicable to the task kind are None."""

    count: int
    acc: float | None = None
    macro_f1: float | None = None
    per_class: dict | None = None
    exact_match: float | None = None
    token_precision: float | None = None
    token_recall: float | None = None
    token_f1: float | None = None

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "acc": self.acc,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "exact_match": self.exact_match,
            "token_precision": self.token_precision,
            "token_recall": self.token_recall,
            "token_f1": self.token_f1,
        }


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def token_set(text: str) -> frozenset:
    """Lowercased, whitespace-split, deduplicated answer tokens."""
    return frozenset(text.lower().split())


def _normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


def metrics(pred, gold, task_kind: str = "classification", class_order=None) -> MetricReport:
    """Accuracy, macro F1 and per-class precision/recall for label tasks;
    token precision/recall/F1 for open answers; exact match for closed VQA.

    Macro F1 averages per-class F1 with the 0/0 -> 0 convention. The class
    set is ``class_order`` when given, else the sorted union of gold and
    predicted labels.
    """
    pred = list(pred)
    gold = list(gold)
    if len(pred) != len(gold):
        raise EmptyEvalSet("prediction and gold lists differ in length")
    if not pred:
        raise EmptyEvalSet("no predictions to score")

    if task_kind == "vqa_open":
        precisions, recalls, f1s = [], [], []
        for p, g in zip(pred, gold):
            p_tok, g_tok = token_set(p), token_set(g)
            inter = len(p_tok & g_tok)
            prec = inter / len(p_tok) if p_tok else 0.0
            rec = inter / len(g_tok) if g_tok else 0.0
            precisions.append(prec)
            recalls.append(rec)
            f1s.append(_f1(prec, rec))
        return MetricReport(
            count=len(pred),
            token_precision=float(np.mean(precisions)),
            token_recall=float(np.mean(recalls)),
            token_f1=float(np.mean(f1s)),
        )

    acc = float(np.mean([p == g for p, g in zip(pred, gold)]))
    if class_order is None:
        classes = sorted(set(gold) | set(pred))
    else:
        classes = list(class_order)
    per_class = {}
    f1s = []
    for c in classes:
        tp = sum(1 for p, g in zip(pred, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gold) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = _f1(prec, rec)
        per_class[c] = {"precision": prec, "recall": rec, "f1": f1}
        f1s.append(f1)
    report = MetricReport(
        count=len(pred),
        acc=acc,
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
    )
    if task_kind == "vqa_closed":
        em = float(
            np.mean([_normalize_answer(p) == _normalize_answer(g) for p, g in zip(pred, gold)])
        )
        report = MetricReport(
            count=report.count,
            acc=report.acc,
            macro_f1=report.macro_f1,
            per_class=report.per_class,
            exact_match=em,
        )
    return report


def metrics_for_rows(rows, label_key: str = "predicted_label", class_order=None) -> MetricReport:
    rows = as_rows(rows)
    if not rows:
        raise EmptyEvalSet("no predictions to score")
    task = rows[0].get("task_kind", "classification")
    return metrics(
        [r[label_key] for r in rows],
        [r["gold"] for r in rows],
        task_kind=task,
        class_order=class_order,
    )


# --- consistency splitting ---------------------------------------------------

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"


@dataclass(frozen=True)
class ConsistencySplit:
    """Partition of the evaluated queries by per-candidate label agreement."""

    tags: dict  # query_id -> {consistent, inconsistent}
    labels: dict  # query_id -> tuple of per-candidate labels

    def queries(self, tag: str) -> list[str]:
        return sorted(q for q, t in self.tags.items() if t == tag)

    @property
    def inconsistent_fraction(self) -> float:
        if not self.tags:
            return 0.0
        n_inc = sum(1 for t in self.tags.values() if t == INCONSISTENT)
        return n_inc / len(self.tags)

    def to_dict(self) -> dict:
        return {
            "inconsistent_fraction": self.inconsistent_fraction,
            "counts": {
                CONSISTENT: len(self.queries(CONSISTENT)),
                INCONSISTENT: len(self.queries(INCONSISTENT)),
            },
        }


def split_consistency(predictions) -> ConsistencySplit:
    """Tag each query by whether its per-candidate labels disagree.

    A single-candidate query is vacuously consistent. Rows without any
    candidate labels cannot be tagged and raise ``MissingCandidates``.
    """
    tags = {}
    labels = {}
    for row in as_rows(predictions):
        cand_labels = tuple(row["candidate_labels"])
        if not cand_labels:
            raise MissingCandidates(f"query {row['query_id']} has no candidate labels")
        tags[row["query_id"]] = (
            INCONSISTENT if len(set(cand_labels)) > 1 else CONSISTENT
        )
        labels[row["query_id"]] = cand_labels
    return ConsistencySplit(tags, labels)


# --- oracle -------------------------------------------------------------------


def oracle_labels(rows) -> list[str]:
    """Gold when any candidate matched it, else the fused label.

    Keeping the fused label on oracle-missed queries is what makes oracle
    accuracy dominate every candidate-following mode by construction, and
    gives the F1 bookkeeping a concrete confusion-matrix entry.
    """
    out = []
    for row in as_rows(rows):
        if row["gold"] in row["candidate_labels"]:
            out.append(row["gold"])
        else:
            out.append(row["predicted_label"])
    return out


def oracle_eval(predictions, class_order=None) -> MetricReport:
    rows = as_rows(predictions)
    if not rows:
        raise EmptyEvalSet("no predictions to score")
    for row in rows:
        if row.get("task_kind") == "vqa_open":
            raise UnsupportedTask("oracle selection is undefined for open answers")
    return metrics(
        oracle_labels(rows),
        [r["gold"] for r in rows],
        task_kind=rows[0].get("task_kind", "classification"),
        class_order=class_order,
    )


# --- rerankers ----------------------------------------------------------------


def top1_similarity_reranker(row: dict) -> int:
    w = np.asarray(row["weights"], dtype=np.float64)
    return int(np.argmax(w))


def top_logit_reranker(row: dict) -> int:
    conf = np.asarray(row["candidate_confidence"], dtype=np.float64)
    return int(np.argmax(conf))


def external_reranker(choices: dict):
    def choose(row: dict) -> int:
        try:
            return int(choices[row["query_id"]])
        except KeyError as exc:
            raise ChoiceOutOfRange(f"no choice for query {row['query_id']}") from exc

    return choose


BUILTIN_RERANKERS = {
    "top1_similarity": top1_similarity_reranker,
    "top_logit": top_logit_reranker,
}


def rerank_eval(predictions, reranker, class_order=None) -> MetricReport:
    """Metrics of following the chosen candidate's label per query.

    ``reranker`` is a builtin name or a callable row -> candidate index.
    """
    rows = as_rows(predictions)
    if not rows:
        raise EmptyEvalSet("no predictions to score")
    chooser = BUILTIN_RERANKERS.get(reranker, reranker) if isinstance(reranker, str) else reranker
    if not callable(chooser):
        raise ValueError(f"unknown reranker {reranker!r}")
    picked = []
    for row in rows:
        labels = row["candidate_labels"]
        if not labels:
            raise MissingCandidates(f"query {row['query_id']} has no candidates")
        choice = int(chooser(row))
        if not 0 <= choice < len(labels):
            raise ChoiceOutOfRange(
                f"query {row['query_id']}: choice {choice} of {len(labels)}"
            )
        picked.append(labels[choice])
    return metrics(
        picked,
        [r["gold"] for r in rows],
        task_kind=rows[0].get("task_kind", "classification"),
        class_order=class_order,
    )


def write_choices(choices: dict, path) -> None:
    jsonio.write_jsonl(
        path,
        "ragfuse-rerank-choices",
        {},
        ({"query_id": q, "choice": int(c)} for q, c in sorted(choices.items())),
    )


def read_choices(path) -> dict:
    _, rows = jsonio.read_jsonl(path, "ragfuse-rerank-choices")
    return {r["query_id"]: int(r["choice"]) for r in rows}


# --- reports -------------------------------------------------------------------


def split_metrics(rows, split: ConsistencySplit, class_order=None) -> dict:
    """Per-split and overall metrics for one prediction set."""
    rows = as_rows(rows)
    out = {"overall": metrics_for_rows(rows, class_order=class_order).to_dict()}
    for tag in (INCONSISTENT, CONSISTENT):
        subset = [r for r in rows if split.tags.get(r["query_id"]) == tag]
        out[tag] = (
            metrics_for_rows(subset, class_order=class_order).to_dict()
            if subset
            else {"count": 0}
        )
    return out


def compare_report(before_rows, after_rows, class_order=None) -> dict:
    """Before/after comparison on the split established by the BEFORE run.

    The consistency split is computed from the pre-distillation retriever's
    predictions and held fixed, so before/after numbers describe the same
    query partitions.
    """
    split = split_consistency(before_rows)
    return {
        "split": split.to_dict(),
        "before": split_metrics(before_rows, split, class_order=class_order),
        "after": split_metrics(after_rows, split, class_order=class_order),
    }


def format_split_table(report: dict) -> str:
    """Plain-text table mirroring the before/after split layout."""

    def cell(block, key):
        val = block.get(key)
        return f"{val:.3f}" if isinstance(val, (int, float)) and val is not None else "   - "

    lines = []
    lines.append(f"{'split':<14}{'model':<10}{'N':>6}{'ACC':>8}{'F1':>8}")
    for tag in (INCONSISTENT, CONSISTENT, "overall"):
        for name in ("before", "after"):
            block = report[name].get(tag, {})
            lines.append(
                f"{tag:<14}{name:<10}{block.get('count', 0):>6}"
                f"{cell(block, 'acc'):>8}{cell(block, 'macro_f1'):>8}"
            )
    return "\n".join(lines) + "\n"
