"""Classical benchmark: a small random forest on flattened shot amplitudes.

Plain CART trees (Gini impurity, midpoint thresholds), one bootstrap
resample per tree, sqrt(n_features) random feature subset per split,
majority vote with ties toward the lower class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .paulis import rng_stream


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None
    label: int = -1  # leaf label when feature < 0


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(X, y, features, nc):
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        left = np.zeros(nc)
        right = np.bincount(ys, minlength=nc).astype(float)
        n = len(ys)
        for i in range(n - 1):
            left[ys[i]] += 1
            right[ys[i]] -= 1
            if xs[i + 1] <= xs[i] + 1e-12:
                continue
            w = (i + 1) / n
            score = w * _gini(left) + (1 - w) * _gini(right)
            if best is None or score < best[0]:
                best = (score, f, (xs[i] + xs[i + 1]) / 2.0)
    return best


def _grow(X, y, nc, n_sub, rng, depth, max_depth):
    counts = np.bincount(y, minlength=nc)
    label = int(np.argmax(counts))
    if counts.max() == len(y) or len(y) < 2 or (max_depth is not None and depth >= max_depth):
        return _Node(label=label)
    features = rng.choice(X.shape[1], size=n_sub, replace=False)
    split = _best_split(X, y, features, nc)
    if split is None:
        return _Node(label=label)
    _, f, thr = split
    mask = X[:, f] <= thr
    if mask.all() or not mask.any():
        return _Node(label=label)
    node = _Node(feature=f, threshold=thr)
    node.left = _grow(X[mask], y[mask], nc, n_sub, rng, depth + 1, max_depth)
    node.right = _grow(X[~mask], y[~mask], nc, n_sub, rng, depth + 1, max_depth)
    return node


def _predict_tree(node: _Node, x) -> int:
    while node.feature >= 0:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.label


@dataclass
class RandomForest:
    trees: List[_Node]
    nc: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        votes = np.zeros((X.shape[0], self.nc), dtype=int)
        for tree in self.trees:
            for m in range(X.shape[0]):
                votes[m, _predict_tree(tree, X[m])] += 1
        return np.argmax(votes, axis=1)


def train_random_forest(
    X,
    y,
    n_trees: int = 20,
    seed: int = 0,
    max_depth: Optional[int] = None,
    nc: int = 2,
) -> RandomForest:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, d = X.shape
    n_sub = max(1, int(round(np.sqrt(d))))
    trees = []
    for t in range(n_trees):
        rng = rng_stream(seed, 0xF0, t)
        idx = rng.integers(0, n, size=n)  # bootstrap with replacement
        trees.append(_grow(X[idx], y[idx], nc, n_sub, rng, 0, max_depth))
    return RandomForest(trees=trees, nc=nc)
