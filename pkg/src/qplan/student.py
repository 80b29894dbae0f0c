"""Distilled planners that map query features straight to a strategy arm.

Two students learn from (query features, chosen arm) pairs produced by the
search phase: a multinomial softmax regression trained by full-batch
gradient descent, and a boosted ensemble of shallow regression trees fit
to the softmax negative gradients. Both emit a probability vector over all
64 arms; planning means taking the argmax, so inference is a few matrix
or tree operations instead of a hundred measured executions.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .jsonio import load_json, save_json
from .kernels import (
    PackedForest, boosted_predict, fit_tree, pack_trees, tree_capacity,
    tree_predict,
)
from .teacher import N_ARMS

LINEAR_FORMAT = "qplan-linear-student"
BOOSTED_FORMAT = "qplan-boosted-student"
STUDENT_VERSION = 1

DEFAULT_LEARNING_RATE = 0.1
DEFAULT_EPOCHS = 500
DEFAULT_L2 = 1e-4
DEFAULT_ROUNDS = 50
DEFAULT_SHRINKAGE = 0.1
DEFAULT_TREE_DEPTH = 3
DEFAULT_TREE_MIN_LEAF = 2


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shift-invariant; -inf logits become exact zeros."""
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, n_classes: int = N_ARMS) -> np.ndarray:
    y = np.zeros((labels.shape[0], n_classes), np.float64)
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def _standardize_fit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma = np.where(sigma == 0.0, 1.0, sigma)
    return mu, sigma


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def linear_gradient(weights: np.ndarray, xb: np.ndarray, y: np.ndarray,
                    l2: float) -> np.ndarray:
    """Gradient of mean cross-entropy plus l2 (bias column unpenalized)."""
    probs = softmax(xb @ weights.T)
    grad = (probs - y).T @ xb / xb.shape[0]
    penalty = l2 * weights
    penalty[:, -1] = 0.0
    return grad + penalty


def linear_loss(weights: np.ndarray, xb: np.ndarray, labels: np.ndarray,
                l2: float) -> float:
    probs = softmax(xb @ weights.T)
    data = cross_entropy(probs, labels)
    return data + 0.5 * l2 * float(np.sum(weights[:, :-1] ** 2))


@dataclass
class LinearStudent:
    weights: np.ndarray  # (classes, features + 1), last column is the bias
    mu: np.ndarray
    sigma: np.ndarray
    n_classes: int
    loss_history: list[float] = field(default_factory=list, repr=False)


def train_linear(features: np.ndarray, labels: np.ndarray,
                 n_classes: int = N_ARMS,
                 learning_rate: float = DEFAULT_LEARNING_RATE,
                 epochs: int = DEFAULT_EPOCHS,
                 l2: float = DEFAULT_L2) -> LinearStudent:
    """Full-batch gradient descent from zero weights on standardized inputs.

    The recorded loss history starts at the zero-weight loss and adds one
    entry per epoch; with this learning rate on standardized features the
    sequence is non-increasing, which downstream checks rely on. With
    epochs=0 the student predicts the uniform distribution.
    """
    x = np.asarray(features, np.float64)
    y_idx = np.asarray(labels, np.int64)
    if x.ndim != 2 or x.shape[0] != y_idx.shape[0] or x.shape[0] == 0:
        raise ValueError("features must be (n, d) with matching labels")
    mu, sigma = _standardize_fit(x)
    xb = _with_bias((x - mu) / sigma)
    y = one_hot(y_idx, n_classes)

    weights = np.zeros((n_classes, xb.shape[1]), np.float64)
    history = [linear_loss(weights, xb, y_idx, l2)]
    for _ in range(epochs):
        weights -= learning_rate * linear_gradient(weights, xb, y, l2)
        history.append(linear_loss(weights, xb, y_idx, l2))
    return LinearStudent(weights=weights, mu=mu, sigma=sigma,
                         n_classes=n_classes, loss_history=history)


def linear_predict_proba(student: LinearStudent,
                         features: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, np.float64))
    xb = _with_bias((x - student.mu) / student.sigma)
    return softmax(xb @ student.weights.T)


@dataclass
class BoostedStudent:
    init_logits: np.ndarray  # log class priors; -inf marks absent classes
    forest: PackedForest
    tree_class: np.ndarray
    shrinkage: float
    n_classes: int
    loss_history: list[float] = field(default_factory=list, repr=False)


def train_boosted(features: np.ndarray, labels: np.ndarray,
                  n_classes: int = N_ARMS,
                  n_rounds: int = DEFAULT_ROUNDS,
                  shrinkage: float = DEFAULT_SHRINKAGE,
                  max_depth: int = DEFAULT_TREE_DEPTH,
                  min_samples_leaf: int = DEFAULT_TREE_MIN_LEAF) -> BoostedStudent:
    """Gradient boosting on softmax negative gradients, one tree per class
    per round. Initial logits are the exact log class priors, with -inf for
    classes absent from the labels; absent classes stay at probability zero
    so no trees are grown for them.
    """
    x = np.ascontiguousarray(features, np.float64)
    y_idx = np.asarray(labels, np.int64)
    if x.ndim != 2 or x.shape[0] != y_idx.shape[0] or x.shape[0] == 0:
        raise ValueError("features must be (n, d) with matching labels")
    n, d = x.shape

    counts = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    with np.errstate(divide="ignore"):
        init_logits = np.log(counts / n)
    present = np.where(counts > 0)[0]
    y = one_hot(y_idx, n_classes)

    subsets = np.tile(np.arange(d, dtype=np.int64),
                      (tree_capacity(max_depth), 1))
    logits = np.tile(init_logits, (n, 1))
    trees = []
    tree_class = []
    history = [cross_entropy(softmax(logits), y_idx)]
    for _ in range(n_rounds):
        probs = softmax(logits)
        for c in present:
            residual = y[:, c] - probs[:, c]
            tree = fit_tree(x, residual, subsets, max_depth,
                            min_samples_leaf)
            logits[:, c] += shrinkage * tree_predict(tree, x)
            trees.append(tree)
            tree_class.append(int(c))
        history.append(cross_entropy(softmax(logits), y_idx))
    return BoostedStudent(init_logits=init_logits, forest=pack_trees(trees),
                          tree_class=np.asarray(tree_class, np.int64),
                          shrinkage=shrinkage, n_classes=n_classes,
                          loss_history=history)


def boosted_predict_proba(student: BoostedStudent,
                          features: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, np.float64))
    logits = boosted_predict(student.forest, student.tree_class,
                             student.shrinkage, student.init_logits, x)
    return softmax(logits)


def predict_proba(student, features: np.ndarray) -> np.ndarray:
    if isinstance(student, LinearStudent):
        return linear_predict_proba(student, features)
    if isinstance(student, BoostedStudent):
        return boosted_predict_proba(student, features)
    raise TypeError(f"unknown student type {type(student).__name__}")


def predict_arm(student, features: np.ndarray) -> np.ndarray:
    """Most probable arm per row; ties resolve to the lowest arm index."""
    return np.argmax(predict_proba(student, features), axis=1)


def agreement(student, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows where the student picks the searched arm."""
    pred = predict_arm(student, features)
    return float(np.mean(pred == np.asarray(labels)))


def gradient_check(seed: int = 0, n: int = 40, d: int = 4,
                   n_classes: int = 3, l2: float = 1e-4,
                   eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(size=(n, d))
    labels = rng.integers(0, n_classes, n)
    xb = _with_bias(x)
    y = one_hot(labels, n_classes)
    weights = rng.normal(scale=0.5, size=(n_classes, d + 1))

    analytic = linear_gradient(weights, xb, y, l2)
    worst = 0.0
    for i in range(n_classes):
        for j in range(d + 1):
            w_hi = weights.copy()
            w_lo = weights.copy()
            w_hi[i, j] += eps
            w_lo[i, j] -= eps
            numeric = (linear_loss(w_hi, xb, labels, l2)
                       - linear_loss(w_lo, xb, labels, l2)) / (2 * eps)
            denom = max(abs(numeric), abs(analytic[i, j]), 1e-8)
            worst = max(worst, abs(numeric - analytic[i, j]) / denom)
    return worst


def time_callable(fn, repeats: int = 5) -> float:
    """Median wall-clock milliseconds of fn() over the given repeats."""
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(samples))


def linear_to_dict(student: LinearStudent) -> dict:
    return {
        "format": LINEAR_FORMAT,
        "version": STUDENT_VERSION,
        "n_classes": student.n_classes,
        "weights": student.weights.tolist(),
        "mu": student.mu.tolist(),
        "sigma": student.sigma.tolist(),
        "final_loss": student.loss_history[-1] if student.loss_history
        else None,
    }


def linear_from_dict(blob: dict) -> LinearStudent:
    if blob.get("format") != LINEAR_FORMAT:
        raise ValueError(f"not a linear student file: {blob.get('format')!r}")
    if blob.get("version") != STUDENT_VERSION:
        raise ValueError(f"unsupported version {blob.get('version')!r}")
    return LinearStudent(
        weights=np.asarray(blob["weights"], np.float64),
        mu=np.asarray(blob["mu"], np.float64),
        sigma=np.asarray(blob["sigma"], np.float64),
        n_classes=blob["n_classes"],
        loss_history=[blob["final_loss"]] if blob["final_loss"] is not None
        else [])


def _finite_or_none(value: float) -> float | None:
    return None if math.isinf(value) else value


def boosted_to_dict(student: BoostedStudent) -> dict:
    f = student.forest
    return {
        "format": BOOSTED_FORMAT,
        "version": STUDENT_VERSION,
        "n_classes": student.n_classes,
        "shrinkage": student.shrinkage,
        "init_logits": [_finite_or_none(v) for v in student.init_logits],
        "tree_class": student.tree_class.tolist(),
        "arrays": {
            "feature": f.feature.tolist(),
            "threshold": f.threshold.tolist(),
            "left": f.left.tolist(),
            "right": f.right.tolist(),
            "value": f.value.tolist(),
            "offsets": f.offsets.tolist(),
        },
        "final_loss": student.loss_history[-1] if student.loss_history
        else None,
    }


def boosted_from_dict(blob: dict) -> BoostedStudent:
    if blob.get("format") != BOOSTED_FORMAT:
        raise ValueError(
            f"not a boosted student file: {blob.get('format')!r}")
    if blob.get("version") != STUDENT_VERSION:
        raise ValueError(f"unsupported version {blob.get('version')!r}")
    arrays = blob["arrays"]
    init = np.array([-np.inf if v is None else v
                     for v in blob["init_logits"]], np.float64)
    forest = PackedForest(
        feature=np.asarray(arrays["feature"], np.int64),
        threshold=np.asarray(arrays["threshold"], np.float64),
        left=np.asarray(arrays["left"], np.int64),
        right=np.asarray(arrays["right"], np.int64),
        value=np.asarray(arrays["value"], np.float64),
        offsets=np.asarray(arrays["offsets"], np.int64),
    )
    return BoostedStudent(
        init_logits=init, forest=forest,
        tree_class=np.asarray(blob["tree_class"], np.int64),
        shrinkage=blob["shrinkage"], n_classes=blob["n_classes"],
        loss_history=[blob["final_loss"]] if blob["final_loss"] is not None
        else [])


def save_student(path: str, student) -> None:
    if isinstance(student, LinearStudent):
        save_json(path, linear_to_dict(student))
    elif isinstance(student, BoostedStudent):
        save_json(path, boosted_to_dict(student))
    else:
        raise TypeError(f"unknown student type {type(student).__name__}")


def load_student(path: str):
    blob = load_json(path)
    if blob.get("format") == LINEAR_FORMAT:
        return linear_from_dict(blob)
    if blob.get("format") == BOOSTED_FORMAT:
        return boosted_from_dict(blob)
    raise ValueError(f"unknown student file format {blob.get('format')!r}")
