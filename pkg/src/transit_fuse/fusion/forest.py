"""CART regression trees and a bagged random forest built on them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import InputError
from ..stats import r_squared

LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    max_depth: int | None = None
    min_leaf: int = 2
    mtry: int | None = None  # None -> ceil(n_features / 3)
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise InputError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise InputError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InputError("max_depth must be >= 0")
        if self.mtry is not None and self.mtry < 1:
            raise InputError("mtry must be >= 1")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(n_features / 3))
        return min(self.mtry, n_features)


class RegressionTree:
    """Array-backed binary tree; rows go left when ``x[feature] <= threshold``."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def split_features(self) -> np.ndarray:
        return self.feature[self.feature != LEAF]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return self.value[node]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d) -> RegressionTree:
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


def _best_split(Xn, yn, features, min_leaf):
    """Best variance-reduction split over ``features`` of the node sample.

    Returns (feature, threshold, sse) or None. Ties keep the first feature in
    ``features`` order and the leftmost cut.
    """
    n = len(yn)
    cols = Xn[:, features]
    order = np.argsort(cols, axis=0, kind="mergesort")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = yn[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    k = np.arange(1, n)[:, None]  # left size
    sum_l, sq_l = csum[:-1], csq[:-1]
    sum_r, sq_r = csum[-1] - sum_l, csq[-1] - sq_l
    sse = (sq_l - sum_l ** 2 / k) + (sq_r - sum_r ** 2 / (n - k))
    valid = xs[:-1] < xs[1:]
    valid[: min_leaf - 1] = False
    valid[n - min_leaf:] = False
    sse = np.where(valid, sse, np.inf)
    best_rows = np.argmin(sse, axis=0)
    best_vals = sse[best_rows, np.arange(len(features))]
    j = int(np.argmin(best_vals))
    if not np.isfinite(best_vals[j]):
        return None
    cut = best_rows[j]
    lo, hi = xs[cut, j], xs[cut + 1, j]
    threshold = (lo + hi) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return int(features[j]), float(threshold), float(best_vals[j])


def fit_tree(X, y, rng: np.random.Generator, mtry: int, min_leaf: int = 2,
             max_depth: int | None = None) -> RegressionTree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_features = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(np.mean(y[idx])))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if len(idx) < 2 * min_leaf or (max_depth is not None and depth >= max_depth) or np.all(yn == yn[0]):
            continue
        candidates = np.sort(rng.choice(n_features, size=mtry, replace=False))
        split = _best_split(X[idx], yn, candidates, min_leaf)
        if split is None:
            continue
        f, thr, sse = split
        parent_sse = float(np.sum((yn - yn.mean()) ** 2))
        if not sse < parent_sse - 1e-12 * max(1.0, parent_sse):
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return RegressionTree(feature, threshold, left, right, value)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per tree so results do not depend on fitting order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass
class Forest:
    trees: list[RegressionTree]
    params: ForestParams
    seed: int
    n_features: int
    feature_names: tuple[str, ...] = ()
    inbag: np.ndarray | None = field(default=None, repr=False)  # (n_trees, n_train) bootstrap counts

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        return X

    def tree_predictions(self, X) -> list[np.ndarray]:
        X = self._check(X)
        return [t.predict(X) for t in self.trees]

    def predict(self, X) -> np.ndarray:
        return average_in_order(self.tree_predictions(X))

    def r_squared(self, X, y) -> float:
        return r_squared(y, self.predict(X))

    def oob_predictions(self, X) -> np.ndarray:
        """Mean over trees whose bootstrap left the row out; NaN where none did."""
        X = self._check(X)
        if self.inbag is None or self.inbag.shape[1] != X.shape[0]:
            raise InputError("out-of-bag predictions need the training matrix")
        acc = np.zeros(X.shape[0])
        cnt = np.zeros(X.shape[0])
        for t, bag in zip(self.trees, self.inbag):
            out = bag == 0
            if out.any():
                acc[out] += t.predict(X[out])
                cnt[out] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(cnt > 0, acc / cnt, np.nan)

    def oob_r_squared(self, X, y) -> float:
        pred = self.oob_predictions(X)
        ok = ~np.isnan(pred)
        if ok.sum() < 2:
            return float("nan")
        return r_squared(np.asarray(y, dtype=float)[ok], pred[ok])

    def to_dict(self) -> dict:
        return {"params": asdict(self.params), "seed": self.seed, "n_features": self.n_features,
                "feature_names": list(self.feature_names), "trees": [t.to_dict() for t in self.trees]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d) -> Forest:
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], ForestParams(**d["params"]),
                   d["seed"], d["n_features"], tuple(d.get("feature_names", ())))


def average_in_order(predictions) -> np.ndarray:
    """Arithmetic mean accumulated in tree-index order (bit-stable)."""
    acc = np.zeros_like(predictions[0], dtype=float)
    for p in predictions:
        acc = acc + p
    return acc / len(predictions)


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0,
               feature_names=()) -> Forest:
    """Bagged CART ensemble; tree ``i`` draws everything from ``tree_rng(seed, i)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise InputError("X must be (n_samples, n_features) matching y")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("forest inputs must be finite")
    n, p = X.shape
    mtry = params.resolved_mtry(p)
    trees = []
    inbag = np.zeros((params.n_trees, n), dtype=np.int64)
    for i in range(params.n_trees):
        rng = tree_rng(seed, i)
        if params.bootstrap:
            sample = rng.integers(0, n, size=n)
            inbag[i] = np.bincount(sample, minlength=n)
        else:
            sample = np.arange(n)
            inbag[i] = 1
        trees.append(fit_tree(X[sample], y[sample], rng, mtry, params.min_leaf, params.max_depth))
    return Forest(trees, params, seed, p, tuple(feature_names), inbag)
