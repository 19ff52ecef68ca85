"""Retrieval-augmented classification with a distilled dual-head retriever.

Subsystems:

* :mod:`ragfuse.types` - shared domain vocabulary
* :mod:`ragfuse.index` - exact dense top-k retrieval and on-disk formats
* :mod:`ragfuse.reader` - the frozen reader abstraction (simulated,
  cached, remote)
* :mod:`ragfuse.distill` - KL distillation of the retriever heads
* :mod:`ragfuse.fusion` - score-fusion inference and ablation modes
* :mod:`ragfuse.analysis` - consistency splits, oracle bound, metrics
* :mod:`ragfuse.synth` - deterministic synthetic benchmark generator
* :mod:`ragfuse.cli` - operator surface

Hot scoring kernels live in a compiled extension when available; a NumPy
fallback is selected at import time (see :mod:`ragfuse.kernels`).
"""

from .types import (
    ClassVocab,
    IndexRecord,
    Query,
    ReaderScoreTable,
    normalize_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "ClassVocab",
    "IndexRecord",
    "Query",
    "ReaderScoreTable",
    "normalize_distribution",
    "__version__",
]
