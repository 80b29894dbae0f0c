"""Array-packed regression tree kernels with optional jit compilation.

The growth and prediction routines are written against a numba-compatible
subset of numpy, so the exact same function objects run either jitted or as
plain Python. Set QPLAN_NO_NUMBA=1 to force the plain path. Results are
bit-identical on both paths because both execute the same code; every sort
is a stable mergesort, so even tie-breaking is reproducible.

Trees are stored as parallel arrays (feature, threshold, left, right,
value). Internal nodes have feature >= 0; leaves have feature == LEAF.
A forest is the same arrays concatenated, with child indices shifted to be
global and an offsets array marking each tree's root.
"""

import os
from dataclasses import dataclass

import numpy as np

LEAF = -1

NUMBA_ENABLED = os.environ.get("QPLAN_NO_NUMBA", "").strip().lower() not in (
    "1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - declared install dependency
        NUMBA_ENABLED = False


def _maybe_jit(fn):
    if NUMBA_ENABLED:
        return njit(cache=True)(fn)
    return fn


def tree_capacity(max_depth: int) -> int:
    """Node-count upper bound for a binary tree of the given depth."""
    return (1 << (max_depth + 1)) - 1


def _grow_tree(x, y, feat_subsets, max_depth, min_samples_leaf):
    """Grow one regression tree; returns packed arrays plus node count.

    x: (n, d) float64; y: (n,) float64; feat_subsets: (capacity, k) int64,
    row j holding the candidate features for the j-th node created. Splits
    maximize the prefix-sum proxy sl^2/nl + sr^2/nr, which is equivalent to
    minimizing summed squared error; ties keep the first candidate, so the
    result is deterministic. Thresholds are midpoints, nudged down onto the
    left value whenever rounding would leak the right value into the left
    branch (rows go left when x <= threshold).
    """
    n = x.shape[0]
    cap = feat_subsets.shape[0]
    k = feat_subsets.shape[1]

    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)

    idx = np.arange(n)

    s_start = np.empty(cap + 1, np.int64)
    s_end = np.empty(cap + 1, np.int64)
    s_depth = np.empty(cap + 1, np.int64)
    s_parent = np.empty(cap + 1, np.int64)
    s_is_left = np.empty(cap + 1, np.int64)

    s_start[0] = 0
    s_end[0] = n
    s_depth[0] = 0
    s_parent[0] = -1
    s_is_left[0] = 0
    top = 1
    n_nodes = 0

    xs = np.empty(n, np.float64)
    ys = np.empty(n, np.float64)
    buf = np.empty(n, np.int64)

    while top > 0:
        top -= 1
        start = s_start[top]
        end = s_end[top]
        depth = s_depth[top]
        parent = s_parent[top]
        is_left = s_is_left[top]

        node = n_nodes
        n_nodes += 1
        m = end - start

        total = 0.0
        for i in range(start, end):
            total += y[idx[i]]
        value[node] = total / m

        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node

        if depth >= max_depth or m < 2 * min_samples_leaf:
            continue

        best_score = -1.0
        best_feat = -1
        best_thr = 0.0

        for j in range(k):
            f = feat_subsets[node, j]
            for i in range(m):
                xs[i] = x[idx[start + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[idx[start + order[i]]]

            sl = 0.0
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                nr = m - nl
                if nr < min_samples_leaf:
                    break
                if nl < min_samples_leaf:
                    continue
                xl = xs[order[i]]
                xr = xs[order[i + 1]]
                if xl >= xr:
                    continue
                sr = total - sl
                score = sl * sl / nl + sr * sr / nr
                if score > best_score:
                    best_score = score
                    best_feat = f
                    thr = 0.5 * (xl + xr)
                    if thr >= xr:
                        thr = xl
                    best_thr = thr

        if best_feat < 0:
            continue

        nl = 0
        for i in range(start, end):
            if x[idx[i], best_feat] <= best_thr:
                nl += 1
        li = 0
        ri = nl
        for i in range(start, end):
            if x[idx[i], best_feat] <= best_thr:
                buf[li] = idx[i]
                li += 1
            else:
                buf[ri] = idx[i]
                ri += 1
        for i in range(m):
            idx[start + i] = buf[i]

        feature[node] = best_feat
        threshold[node] = best_thr

        mid = start + nl
        s_start[top] = mid
        s_end[top] = end
        s_depth[top] = depth + 1
        s_parent[top] = node
        s_is_left[top] = 0
        top += 1
        s_start[top] = start
        s_end[top] = mid
        s_depth[top] = depth + 1
        s_parent[top] = node
        s_is_left[top] = 1
        top += 1

    return feature, threshold, left, right, value, n_nodes


def _predict_tree(feature, threshold, left, right, value, x):
    """Evaluate one packed tree on every row of x."""
    n = x.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def _predict_forest_members(feature, threshold, left, right, value,
                            offsets, x):
    """Per-tree predictions for a packed forest: returns (n_trees, n)."""
    n = x.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n_trees, n), np.float64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = base
            while feature[node] >= 0:
                if x[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[t, i] = value[node]
    return out


def _predict_forest(feature, threshold, left, right, value, offsets, x):
    """Mean prediction of a packed forest, one pass over all trees."""
    n = x.shape[0]
    n_trees = offsets.shape[0] - 1
    acc = np.zeros(n, np.float64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = base
            while feature[node] >= 0:
                if x[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc[i] += value[node]
    return acc / n_trees


def _predict_boosted(feature, threshold, left, right, value, offsets,
                     tree_class, gamma, init, x):
    """Staged-sum logits for packed per-class boosted trees: (n, classes)."""
    n = x.shape[0]
    n_classes = init.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n, n_classes), np.float64)
    for i in range(n):
        for c in range(n_classes):
            out[i, c] = init[c]
    for t in range(n_trees):
        base = offsets[t]
        c = tree_class[t]
        for i in range(n):
            node = base
            while feature[node] >= 0:
                if x[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, c] += gamma * value[node]
    return out


grow_tree = _maybe_jit(_grow_tree)
predict_tree = _maybe_jit(_predict_tree)
predict_forest_members = _maybe_jit(_predict_forest_members)
predict_forest = _maybe_jit(_predict_forest)
predict_boosted = _maybe_jit(_predict_boosted)


@dataclass
class Tree:
    """One trimmed packed tree (children indexed within the tree)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])


def fit_tree(x: np.ndarray, y: np.ndarray, feat_subsets: np.ndarray,
             max_depth: int, min_samples_leaf: int) -> Tree:
    """Grow one tree and trim the capacity-sized arrays to the used nodes."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    feat_subsets = np.ascontiguousarray(feat_subsets, dtype=np.int64)
    feature, threshold, left, right, value, n_nodes = grow_tree(
        x, y, feat_subsets, max_depth, min_samples_leaf)
    return Tree(feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
                left[:n_nodes].copy(), right[:n_nodes].copy(),
                value[:n_nodes].copy())


@dataclass
class PackedForest:
    """Concatenated trees with globally shifted child indices."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.offsets.shape[0]) - 1


def pack_trees(trees: list[Tree]) -> PackedForest:
    """Concatenate trimmed trees into one packed array set."""
    offsets = np.zeros(len(trees) + 1, np.int64)
    for t, tree in enumerate(trees):
        offsets[t + 1] = offsets[t] + tree.n_nodes
    total = int(offsets[-1])
    feature = np.empty(total, np.int64)
    threshold = np.empty(total, np.float64)
    left = np.full(total, -1, np.int64)
    right = np.full(total, -1, np.int64)
    value = np.empty(total, np.float64)
    for t, tree in enumerate(trees):
        lo, hi = int(offsets[t]), int(offsets[t + 1])
        feature[lo:hi] = tree.feature
        threshold[lo:hi] = tree.threshold
        value[lo:hi] = tree.value
        internal = tree.feature >= 0
        left[lo:hi][internal] = tree.left[internal] + lo
        right[lo:hi][internal] = tree.right[internal] + lo
    return PackedForest(feature, threshold, left, right, value, offsets)


def unpack_tree(forest: PackedForest, t: int) -> Tree:
    """Extract tree t from a packed forest, re-localizing child indices."""
    lo, hi = int(forest.offsets[t]), int(forest.offsets[t + 1])
    feature = forest.feature[lo:hi].copy()
    left = forest.left[lo:hi].copy()
    right = forest.right[lo:hi].copy()
    internal = feature >= 0
    left[internal] -= lo
    right[internal] -= lo
    return Tree(feature, forest.threshold[lo:hi].copy(), left, right,
                forest.value[lo:hi].copy())


def forest_predict(forest: PackedForest, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    return predict_forest(forest.feature, forest.threshold, forest.left,
                          forest.right, forest.value, forest.offsets, x)


def forest_member_predictions(forest: PackedForest,
                              x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    return predict_forest_members(forest.feature, forest.threshold,
                                  forest.left, forest.right, forest.value,
                                  forest.offsets, x)


def tree_predict(tree: Tree, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    return predict_tree(tree.feature, tree.threshold, tree.left, tree.right,
                        tree.value, x)


def boosted_predict(forest: PackedForest, tree_class: np.ndarray,
                    gamma: float, init: np.ndarray,
                    x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    tree_class = np.ascontiguousarray(tree_class, dtype=np.int64)
    init = np.ascontiguousarray(init, dtype=np.float64)
    return predict_boosted(forest.feature, forest.threshold, forest.left,
                           forest.right, forest.value, forest.offsets,
                           tree_class, float(gamma), init, x)
