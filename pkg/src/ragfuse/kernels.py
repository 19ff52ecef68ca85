"""Kernel dispatch: compiled extension when available, NumPy otherwise.

Set RAGFUSE_PURE_PYTHON=1 to force the fallback (used by the benchmark and
by tests that assert the two paths agree).
"""

import os

import numpy as np

from . import _kernels_py

try:  # pragma: no cover - presence depends on the build
    from . import _accel
except ImportError:  # pragma: no cover
    _accel = None

HAVE_ACCEL = _accel is not None


def _backend():
    if _accel is not None and os.environ.get("RAGFUSE_PURE_PYTHON") != "1":
        return _accel
    return _kernels_py


def backend_name() -> str:
    return "compiled" if _backend() is not _kernels_py else "numpy"


def projected_scores(embs, v, offset):
    """embs[i] . v + offset for every row, f64 accumulation."""
    embs = np.ascontiguousarray(embs, dtype=np.float32)
    v = np.ascontiguousarray(v, dtype=np.float64)
    return _backend().projected_scores(embs, v, float(offset))


def topk_select(scores, k):
    """Indices of the k largest scores, descending, ties by ascending index."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    return _backend().topk_select(scores, int(k))


def projected_topk(embs, v, offset, k):
    """Fused score-and-select; returns (indices, scores)."""
    embs = np.ascontiguousarray(embs, dtype=np.float32)
    v = np.ascontiguousarray(v, dtype=np.float64)
    idx, sc = _backend().projected_topk(embs, v, float(offset), int(k))
    return np.asarray(idx, dtype=np.int64), np.asarray(sc, dtype=np.float64)
