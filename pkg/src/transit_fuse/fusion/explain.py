"""Model inspection: permutation importance, split frequency, partial dependence."""

from __future__ import annotations

import numpy as np

from ..core import InputError
from .forest import Forest, average_in_order


def _mse(y, pred):
    d = y - pred
    return float(np.dot(d, d)) / len(y)


def permutation_importance(forest: Forest, X, y, n_repeats: int = 10, seed: int = 0) -> np.ndarray:
    """Mean increase in squared error when one column is shuffled.

    Column ``f`` is shuffled with its own stream ``(seed, f)``. Trees that
    never split on ``f`` keep their cached predictions, so a column the
    model ignores scores exactly zero.
    """
    X = forest._check(X)
    y = np.asarray(y, dtype=float)
    if n_repeats < 1:
        raise InputError("n_repeats must be >= 1")
    base_preds = forest.tree_predictions(X)
    baseline = _mse(y, average_in_order(base_preds))
    uses = [set(t.split_features().tolist()) for t in forest.trees]
    out = np.zeros(X.shape[1])
    for f in range(X.shape[1]):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), f]))
        users = [i for i, u in enumerate(uses) if f in u]
        total = 0.0
        for _ in range(n_repeats):
            Xp = X.copy()
            Xp[:, f] = X[rng.permutation(X.shape[0]), f]
            preds = list(base_preds)
            for i in users:
                preds[i] = forest.trees[i].predict(Xp)
            total += _mse(y, average_in_order(preds)) - baseline
        out[f] = total / n_repeats
    return out


def split_frequency_importance(forest: Forest) -> np.ndarray:
    """Share of all internal nodes that split on each feature; zeros if there are none."""
    counts = np.zeros(forest.n_features)
    for t in forest.trees:
        np.add.at(counts, t.split_features(), 1)
    total = counts.sum()
    return counts / total if total > 0 else counts


def partial_dependence(forest: Forest, X, feature: int, grid_size: int = 50) -> list[tuple[float, float]]:
    """Mean prediction with column ``feature`` set to each of ``grid_size`` evenly spaced values.

    A constant column yields a single point at its value.
    """
    X = forest._check(X)
    if grid_size < 2:
        raise InputError("grid_size must be >= 2")
    col = X[:, feature]
    lo, hi = float(col.min()), float(col.max())
    grid = [lo] if lo == hi else np.linspace(lo, hi, grid_size).tolist()
    base_preds = forest.tree_predictions(X)
    users = [i for i, t in enumerate(forest.trees) if feature in set(t.split_features().tolist())]
    curve = []
    for g in grid:
        Xg = X.copy()
        Xg[:, feature] = g
        preds = list(base_preds)
        for i in users:
            preds[i] = forest.trees[i].predict(Xg)
        curve.append((float(g), float(np.mean(average_in_order(preds)))))
    return curve
