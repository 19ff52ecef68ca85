"""Pure-NumPy scoring kernels, the fallback when the extension is absent.

Semantics must stay in lockstep with ``_accel.pyx``: f64 accumulation,
descending scores, ties broken by ascending row index.
"""

import numpy as np


def projected_scores(embs: np.ndarray, v: np.ndarray, offset: float) -> np.ndarray:
    return embs @ v + offset


def topk_select(scores: np.ndarray, k: int) -> np.ndarray:
    n = scores.shape[0]
    k = min(k, n)
    # lexsort: primary key -scores ascending (= scores descending),
    # secondary key row index ascending.
    order = np.lexsort((np.arange(n), -scores))
    return order[:k].astype(np.int64)


def projected_topk(embs: np.ndarray, v: np.ndarray, offset: float, k: int):
    scores = projected_scores(embs, v, offset)
    idx = topk_select(scores, k)
    return idx, scores[idx]
