"""Time the tree kernels jitted vs plain Python and check they agree.

Both paths execute the same function objects (the jitted bindings wrap the
plain ones), so outputs must match bit for bit; this script times the gap
and asserts the agreement. With QPLAN_NO_NUMBA=1 (or numba missing) only
the plain path exists and the comparison is skipped.

Usage: python3 benchmarks/bench_kernels.py [--rows N] [--trees T]
"""

import argparse
import time

import numpy as np

from qplan.kernels import (
    NUMBA_ENABLED, _grow_tree, _predict_forest, grow_tree, pack_trees,
    predict_forest, fit_tree, tree_capacity,
)


def make_instance(rows: int, features: int, seed: int):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(size=(rows, features))
    y = x[:, 0] * 3.0 + np.sin(x[:, 1]) + rng.normal(scale=0.1, size=rows)
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def make_subsets(rng, cap: int, d: int, k: int) -> np.ndarray:
    subsets = np.empty((cap, k), np.int64)
    for s in range(cap):
        subsets[s] = rng.choice(d, size=k, replace=False)
    return subsets


def bench(fn, args, repeats: int) -> tuple[float, object]:
    out = fn(*args)  # warmup; compiles the jitted path on first call
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best * 1000.0, out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=4000)
    parser.add_argument("--features", type=int, default=13)
    parser.add_argument("--subset", type=int, default=5,
                        help="features considered per split")
    parser.add_argument("--depth", type=int, default=8)
    parser.add_argument("--min-leaf", type=int, default=2)
    parser.add_argument("--trees", type=int, default=20,
                        help="forest size for the prediction benchmark")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    x, y = make_instance(args.rows, args.features, args.seed)
    rng = np.random.Generator(np.random.PCG64(args.seed + 1))
    cap = tree_capacity(args.depth)
    subsets = make_subsets(rng, cap, args.features, args.subset)
    grow_args = (x, y, subsets, args.depth, args.min_leaf)

    print(f"instance: {args.rows} rows x {args.features} features, "
          f"depth {args.depth}, {args.trees}-tree forest")
    if not NUMBA_ENABLED:
        print("jit disabled (QPLAN_NO_NUMBA set or numba missing); "
              "timing the plain path only")
        plain_ms, _ = bench(_grow_tree, grow_args, args.repeats)
        print(f"grow_tree      plain {plain_ms:10.2f} ms")
        return 0

    jit_ms, jit_out = bench(grow_tree, grow_args, args.repeats)
    plain_ms, plain_out = bench(_grow_tree, grow_args, args.repeats)
    for a, b in zip(jit_out, plain_out):
        assert np.array_equal(np.asarray(a), np.asarray(b))
    print(f"grow_tree      jit {jit_ms:10.2f} ms   plain {plain_ms:10.2f} ms"
          f"   speedup {plain_ms / jit_ms:6.1f}x")

    trees = [fit_tree(x, y, make_subsets(rng, cap, args.features,
                                         args.subset),
                      args.depth, args.min_leaf)
             for _ in range(args.trees)]
    forest = pack_trees(trees)
    predict_args = (forest.feature, forest.threshold, forest.left,
                    forest.right, forest.value, forest.offsets, x)
    jit_ms, jit_pred = bench(predict_forest, predict_args, args.repeats)
    plain_ms, plain_pred = bench(_predict_forest, predict_args, args.repeats)
    assert np.array_equal(jit_pred, plain_pred)
    print(f"predict_forest jit {jit_ms:10.2f} ms   plain {plain_ms:10.2f} ms"
          f"   speedup {plain_ms / jit_ms:6.1f}x")
    print("outputs identical on both paths")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
