"""Ridership model over station catchment profiles."""

from .explain import partial_dependence, permutation_importance, split_frequency_importance
from .features import FeatureMatrix, apc_station_totals, build_features
from .forest import Forest, ForestParams, RegressionTree, fit_forest


def fit(features: FeatureMatrix, target: str = "boardings", params: ForestParams = ForestParams(),
        seed: int = 0) -> Forest:
    """Fit a forest predicting one counter target from the station features."""
    return fit_forest(features.X, features.target(target), params, seed, features.feature_names)


def predict(forest: Forest, X):
    return forest.predict(X)


__all__ = [
    "FeatureMatrix", "Forest", "ForestParams", "RegressionTree", "apc_station_totals", "build_features",
    "fit", "fit_forest", "partial_dependence", "permutation_importance", "predict",
    "split_frequency_importance",
]
