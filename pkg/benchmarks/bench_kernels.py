"""Benchmark the compiled scoring kernels against the NumPy fallback.

Times the fused score-and-select pass (the retrieval hot loop) and the
score-only pass over a range of index sizes, and cross-checks that both
paths return identical rankings while timing. Also reports the two
head-merge policies' retrieval quality on the shipped fixture, since the
choice between them is configuration, not code.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from ragfuse import _kernels_py, kernels
from ragfuse import synth
from ragfuse.index import RetrieverHeads


def time_call(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels():
    if not kernels.HAVE_ACCEL:
        print("compiled kernels not built; run `python setup.py build_ext --inplace`")
        return
    from ragfuse import _accel

    rng = np.random.default_rng(0)
    print(f"{'N':>8} {'d':>4} {'k':>4} {'numpy topk':>12} {'compiled':>12} {'speedup':>8}")
    for n, d, k in [(1_000, 32, 4), (10_000, 32, 4), (100_000, 32, 4),
                    (100_000, 64, 50), (1_000_000, 32, 4)]:
        embs = rng.normal(size=(n, d)).astype(np.float32)
        v = rng.normal(size=d)
        t_py = time_call(_kernels_py.projected_topk, embs, v, 0.0, k)
        t_cy = time_call(_accel.projected_topk, embs, v, 0.0, k)
        idx_py, _ = _kernels_py.projected_topk(embs, v, 0.0, k)
        idx_cy, _ = _accel.projected_topk(embs, v, 0.0, k)
        agree = "" if np.array_equal(idx_py, idx_cy) else "  RANKINGS DIFFER"
        print(f"{n:>8} {d:>4} {k:>4} {t_py*1e3:>10.2f}ms {t_cy*1e3:>10.2f}ms"
              f" {t_py/t_cy:>7.2f}x{agree}")


def bench_merge_policies():
    spec = synth.SynthSpec(seed=7)
    index, queries, tags = synth.generate(spec)
    heads = RetrieverHeads.identity(spec.dim)
    print("\nhead-merge policy comparison on the shipped fixture (identity heads):")
    for merge in ("union_rerank", "interleave"):
        start = time.perf_counter()
        recall = synth.informative_recall_at_k(index, queries, heads, tags, k=4, merge=merge)
        elapsed = time.perf_counter() - start
        print(f"  {merge:<14} informative recall@4 = {recall:.3f}  ({elapsed*1e3:.0f}ms)")


if __name__ == "__main__":
    print(f"active backend: {kernels.backend_name()}")
    bench_kernels()
    bench_merge_policies()
