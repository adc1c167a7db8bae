"""Compare the compiled and numpy kernel backends on batch-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from sgrisk.numcore.kernels import available_backends


def cases(rng):
    n_nodes, n_edges, width = 6000, 24000, 100
    idx = rng.integers(0, n_nodes, n_edges)
    src = rng.normal(size=(n_edges, width))
    seg = np.sort(rng.integers(0, 500, n_nodes))
    seg[:500] = np.arange(500)
    seg.sort()
    x = rng.normal(size=(n_nodes, width))
    sizes = np.bincount(seg, minlength=500)
    ptr = np.r_[0, np.cumsum(sizes)]
    k = np.maximum(1, np.ceil(sizes / 2)).astype(np.int64)
    scores = rng.normal(size=n_nodes)
    return {
        "scatter_add_rows": lambda m: m.scatter_add_rows(np.zeros((n_nodes, width)), idx, src),
        "segment_max": lambda m: m.segment_max(x, seg, 500),
        "segment_topk": lambda m: m.segment_topk(scores, ptr, k),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}" + "".join(f"{name:>14}" for name in backends) + "   speedup")
    for name, fn in cases(rng).items():
        times = {b: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) * 1e3
                 for b, m in backends.items()}
        row = f"{name:<18}" + "".join(f"{t:>11.3f} ms" for t in times.values())
        if len(times) == 2:
            row += f"   {times['python'] / times['cython']:.1f}x"
        print(row)


if __name__ == "__main__":
    main()
