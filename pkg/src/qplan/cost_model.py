"""Latency prediction: feature extraction and a from-scratch random forest.

Features describe the original query, the chosen strategy combination, and
the resource snapshot, so one model covers every (query, configuration)
pair. Training is fully seeded and canonicalized: rows are lexsorted before
any sampling, bootstrap indices are drawn then sorted, and per-node feature
subsets are pre-generated, which makes the fitted model independent of
training-row order and reproducible bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .ir import QueryIR, SchemaModel, complexity
from .jsonio import load_json, save_json
from .kernels import (
    PackedForest, fit_tree, forest_member_predictions, forest_predict,
    pack_trees, tree_capacity,
)
from .teacher import N_ARMS, STRATEGY_NAMES, PlanConfig, ref_base_rows

FEATURE_NAMES = tuple(f"flag_{name}" for name in STRATEGY_NAMES) + (
    "table_count", "join_count", "predicate_count",
    "log_total_rows", "log_max_distinct",
    "memory_pressure", "cpu_load",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_LAYOUT = "flags6-structure3-size2-resources2"
# students see only the query/resource part; the flags are the label space
STUDENT_FEATURE_START = len(STRATEGY_NAMES)

FOREST_FORMAT = "qplan-forest"
FOREST_VERSION = 1


def featurize(config: PlanConfig, ir: QueryIR, schema: SchemaModel,
              memory_in_use: float, cpu_load: float,
              c_mem_bytes: float) -> np.ndarray:
    """13-dim vector for one (query, configuration, resources) triple."""
    out = np.zeros(N_FEATURES, np.float64)
    for bit, name in enumerate(STRATEGY_NAMES):
        out[bit] = 1.0 if getattr(config, name) else 0.0
    metrics = complexity(ir)
    out[6] = metrics.table_count
    out[7] = metrics.join_count
    out[8] = metrics.predicate_count
    total_rows = sum(ref_base_rows(ref, schema) for ref in ir.base_tables)
    max_distinct = 0
    for ref in ir.base_tables:
        if ref.subquery is not None:
            continue
        for col in schema.table(ref.table).columns:
            max_distinct = max(max_distinct, col.distinct)
    out[9] = np.log10(1.0 + total_rows)
    out[10] = np.log10(1.0 + max_distinct)
    out[11] = memory_in_use / c_mem_bytes if c_mem_bytes > 0 else 0.0
    out[12] = cpu_load
    return out


def student_features(features: np.ndarray) -> np.ndarray:
    """Strip the strategy flags; students predict them, not consume them."""
    return np.asarray(features, np.float64)[..., STUDENT_FEATURE_START:]


@dataclass
class ForestParams:
    n_trees: int = 50
    max_depth: int = 8
    min_samples_leaf: int = 2
    n_subset_features: int = 5
    seed: int = 0


@dataclass
class ForestModel:
    params: ForestParams
    forest: PackedForest
    n_features: int = N_FEATURES
    feature_layout: str = FEATURE_LAYOUT

    @property
    def n_trees(self) -> int:
        return self.forest.n_trees


def _canonical_order(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    keys = [targets] + [features[:, j] for j in range(features.shape[1])]
    return np.lexsort(keys)


def train_forest(features: np.ndarray, targets: np.ndarray,
                 params: ForestParams | None = None) -> ForestModel:
    """Fit the bagged forest; invariant to training-row permutation."""
    params = params or ForestParams()
    x = np.ascontiguousarray(features, np.float64)
    y = np.ascontiguousarray(targets, np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("features must be (n, d) with matching targets")
    order = _canonical_order(x, y)
    x = x[order]
    y = y[order]

    n, d = x.shape
    k = min(params.n_subset_features, d)
    cap = tree_capacity(params.max_depth)
    rng = np.random.Generator(np.random.PCG64(params.seed))
    trees = []
    for _ in range(params.n_trees):
        rows = np.sort(rng.integers(0, n, n))
        subsets = np.empty((cap, k), np.int64)
        for s in range(cap):
            subsets[s] = rng.choice(d, size=k, replace=False)
        trees.append(fit_tree(x[rows], y[rows], subsets,
                              params.max_depth, params.min_samples_leaf))
    return ForestModel(params=params, forest=pack_trees(trees),
                       n_features=d)


def predict_latency(model: ForestModel, features: np.ndarray) -> np.ndarray:
    """Forest mean prediction, clamped to be non-negative."""
    x = np.atleast_2d(np.asarray(features, np.float64))
    if x.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {x.shape[1]}")
    return np.maximum(forest_predict(model.forest, x), 0.0)


def predict_interval(model: ForestModel,
                     features: np.ndarray) -> tuple[np.ndarray, np.ndarray,
                                                    np.ndarray]:
    """(mean, low, high) per row from the per-tree prediction spread."""
    x = np.atleast_2d(np.asarray(features, np.float64))
    members = np.maximum(forest_member_predictions(model.forest, x), 0.0)
    return members.mean(axis=0), members.min(axis=0), members.max(axis=0)


def evaluate_model(model: ForestModel, features: np.ndarray,
                   targets: np.ndarray) -> dict:
    """Held-out regression metrics: MAE, R2, and the target median."""
    y = np.asarray(targets, np.float64)
    pred = predict_latency(model, features)
    mae = float(np.mean(np.abs(pred - y)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(
        np.sum((pred - y) ** 2)) / ss_tot
    return {"mae_ms": mae, "r2": r2,
            "median_target_ms": float(np.median(y)), "n": int(y.shape[0])}


def cv_select_depth(features: np.ndarray, targets: np.ndarray, seed: int,
                    depths: tuple[int, ...] = (4, 8, 16),
                    folds: int = 5) -> tuple[int, dict[int, float]]:
    """K-fold mean squared error per depth; smallest depth wins ties."""
    x = np.ascontiguousarray(features, np.float64)
    y = np.ascontiguousarray(targets, np.float64)
    order = _canonical_order(x, y)
    x = x[order]
    y = y[order]
    n = x.shape[0]
    folds = min(folds, n)
    fold_of = np.arange(n) % folds

    scores: dict[int, float] = {}
    for depth in depths:
        errs = []
        for f in range(folds):
            train = fold_of != f
            model = train_forest(
                x[train], y[train],
                ForestParams(max_depth=depth, seed=seed * 31 + f))
            pred = predict_latency(model, x[~train])
            errs.append(float(np.mean((pred - y[~train]) ** 2)))
        scores[depth] = float(np.mean(errs))
    best = min(scores, key=lambda d: (scores[d], d))
    return best, scores


def model_to_dict(model: ForestModel) -> dict:
    f = model.forest
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "feature_layout": model.feature_layout,
        "n_features": model.n_features,
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "min_samples_leaf": model.params.min_samples_leaf,
            "n_subset_features": model.params.n_subset_features,
            "seed": model.params.seed,
        },
        "arrays": {
            "feature": f.feature.tolist(),
            "threshold": f.threshold.tolist(),
            "left": f.left.tolist(),
            "right": f.right.tolist(),
            "value": f.value.tolist(),
            "offsets": f.offsets.tolist(),
        },
    }


def model_from_dict(blob: dict) -> ForestModel:
    if blob.get("format") != FOREST_FORMAT:
        raise ValueError(f"not a forest model file: {blob.get('format')!r}")
    if blob.get("version") != FOREST_VERSION:
        raise ValueError(f"unsupported model version {blob.get('version')!r}")
    if blob.get("feature_layout") != FEATURE_LAYOUT:
        raise ValueError(
            f"feature layout mismatch: {blob.get('feature_layout')!r}")
    p = blob["params"]
    arrays = blob["arrays"]
    forest = PackedForest(
        feature=np.asarray(arrays["feature"], np.int64),
        threshold=np.asarray(arrays["threshold"], np.float64),
        left=np.asarray(arrays["left"], np.int64),
        right=np.asarray(arrays["right"], np.int64),
        value=np.asarray(arrays["value"], np.float64),
        offsets=np.asarray(arrays["offsets"], np.int64),
    )
    return ForestModel(
        params=ForestParams(n_trees=p["n_trees"], max_depth=p["max_depth"],
                            min_samples_leaf=p["min_samples_leaf"],
                            n_subset_features=p["n_subset_features"],
                            seed=p["seed"]),
        forest=forest, n_features=blob["n_features"],
        feature_layout=blob["feature_layout"])


def save_model(path: str, model: ForestModel) -> None:
    save_json(path, model_to_dict(model))


def load_model(path: str) -> ForestModel:
    return model_from_dict(load_json(path))
