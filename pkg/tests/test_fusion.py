import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transit_fuse.core import InputError, InsufficientDataError
from transit_fuse.coverage import FEATURE_NAMES, StationProfile
from transit_fuse.fusion import (
    Forest, ForestParams, apc_station_totals, build_features, fit_forest, partial_dependence,
    permutation_importance, split_frequency_importance,
)
from transit_fuse.fusion.forest import LEAF, RegressionTree, fit_tree


def cart_oracle(X, y, min_leaf, max_depth):
    """Exhaustive pure-Python CART returning a predict function."""
    X = [list(map(float, r)) for r in X]
    y = list(map(float, y))

    def sse(vals):
        m = sum(vals) / len(vals)
        return sum((v - m) ** 2 for v in vals)

    def grow(idx, depth):
        ys = [y[i] for i in idx]
        mean = sum(ys) / len(ys)
        if len(idx) < 2 * min_leaf or depth >= max_depth or len(set(ys)) == 1:
            return mean
        best = None
        for f in range(len(X[0])):
            vals = sorted({X[i][f] for i in idx})
            for lo, hi in zip(vals, vals[1:]):
                thr = (lo + hi) / 2
                left = [i for i in idx if X[i][f] <= thr]
                right = [i for i in idx if X[i][f] > thr]
                if len(left) < min_leaf or len(right) < min_leaf:
                    continue
                s = sse([y[i] for i in left]) + sse([y[i] for i in right])
                if best is None or s < best[0]:
                    best = (s, f, thr, left, right)
        if best is None or not best[0] < sse(ys) - 1e-12:
            return mean
        _, f, thr, left, right = best
        return (f, thr, grow(left, depth + 1), grow(right, depth + 1))

    root = grow(list(range(len(y))), 0)

    def predict(row):
        node = root
        while isinstance(node, tuple):
            f, thr, l, r = node
            node = l if row[f] <= thr else r
        return node
    return predict


def single_tree(**kw):
    return ForestParams(n_trees=1, bootstrap=False, **kw)


class TestTree:
    def test_matches_exhaustive_cart(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            X = rng.normal(size=(40, 3))
            y = np.sin(X[:, 0] * 2) + X[:, 1] ** 2 + 0.1 * rng.normal(size=40)
            forest = fit_forest(X, y, single_tree(mtry=3, min_leaf=3, max_depth=4), seed=trial)
            oracle = cart_oracle(X, y, 3, 4)
            Xt = rng.normal(size=(60, 3))
            assert forest.predict(Xt) == pytest.approx([oracle(r) for r in Xt], abs=1e-9)

    def test_constant_target_is_single_leaf(self):
        X = np.arange(20.0).reshape(10, 2)
        forest = fit_forest(X, np.full(10, 7.0), ForestParams(n_trees=5))
        assert all(t.n_nodes == 1 for t in forest.trees)
        assert forest.predict(X).tolist() == [7.0] * 10

    def test_identical_rows_with_equal_targets_share_a_leaf(self):
        X = np.array([[1.0, 2.0]] * 4 + [[5.0, 0.0]] * 4)
        y = np.array([3.0] * 4 + [9.0] * 4)
        t = fit_tree(X, y, np.random.default_rng(0), mtry=2, min_leaf=1)
        assert t.n_nodes == 3
        assert t.predict(X).tolist() == y.tolist()

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 2))
        t = fit_tree(X, rng.normal(size=50), rng, mtry=2, min_leaf=5)
        leaves = t.predict(X)
        _, counts = np.unique(leaves, return_counts=True)
        assert counts.min() >= 5

    def test_round_trip(self):
        t = RegressionTree([0, LEAF, LEAF], [0.5, 0, 0], [1, LEAF, LEAF], [2, LEAF, LEAF], [0, -1, 1])
        back = RegressionTree.from_dict(json.loads(json.dumps(t.to_dict())))
        assert back.predict([[0.0], [1.0]]).tolist() == [-1.0, 1.0]


class TestForest:
    def test_staircase_fits_well(self):
        x = np.linspace(0, 10, 200)
        X = np.column_stack([x, np.random.default_rng(2).normal(size=200)])
        y = np.floor(x)
        forest = fit_forest(X, y, ForestParams(n_trees=50), seed=3)
        assert forest.r_squared(X, y) >= 0.99

    def test_same_seed_same_model(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(30, 5)), rng.normal(size=30)
        assert fit_forest(X, y, ForestParams(n_trees=20), 8).to_json() == \
            fit_forest(X, y, ForestParams(n_trees=20), 8).to_json()

    def test_tree_streams_independent_of_forest_size(self):
        rng = np.random.default_rng(5)
        X, y = rng.normal(size=(30, 4)), rng.normal(size=30)
        small = fit_forest(X, y, ForestParams(n_trees=5), 1)
        large = fit_forest(X, y, ForestParams(n_trees=12), 1)
        assert [t.to_dict() for t in small.trees] == [t.to_dict() for t in large.trees[:5]]

    def test_row_permutation_without_bootstrap(self):
        rng = np.random.default_rng(6)
        X, y = rng.normal(size=(25, 3)), rng.normal(size=25)
        perm = rng.permutation(25)
        params = ForestParams(n_trees=3, bootstrap=False, mtry=3)
        a = fit_forest(X, y, params, 0).predict(X)
        b = fit_forest(X[perm], y[perm], params, 0).predict(X)
        assert a == pytest.approx(b, abs=1e-12)

    def test_json_round_trip_predicts_identically(self):
        rng = np.random.default_rng(7)
        X, y = rng.normal(size=(30, 4)), rng.normal(size=30)
        forest = fit_forest(X, y, ForestParams(n_trees=15), 2, ("a", "b", "c", "d"))
        back = Forest.from_dict(json.loads(forest.to_json()))
        assert back.feature_names == ("a", "b", "c", "d")
        assert back.predict(X).tolist() == forest.predict(X).tolist()

    def test_oob_predictions_use_only_left_out_trees(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(size=(30, 3))
        y = 10 * X[:, 0] + 0.1 * rng.normal(size=30)
        forest = fit_forest(X, y, ForestParams(n_trees=25), 0)
        # replay each tree's bootstrap draw from its own stream
        expected = []
        for r in range(30):
            vals = [t.predict(X[r:r + 1])[0] for i, t in enumerate(forest.trees)
                    if r not in set(np.random.default_rng(np.random.SeedSequence([0, i])).integers(0, 30, 30))]
            expected.append(sum(vals) / len(vals) if vals else np.nan)
        assert forest.oob_predictions(X) == pytest.approx(expected, abs=1e-12, nan_ok=True)

    def test_shape_and_finiteness_errors(self):
        with pytest.raises(InputError):
            fit_forest(np.ones((3, 2)), np.ones(4))
        with pytest.raises(InputError):
            fit_forest(np.array([[np.nan]] * 3), np.ones(3))
        forest = fit_forest(np.ones((3, 2)), np.ones(3), ForestParams(n_trees=1))
        with pytest.raises(InputError):
            forest.predict(np.ones((2, 3)))

    @pytest.mark.parametrize("kw", [dict(n_trees=0), dict(min_leaf=0), dict(mtry=0), dict(max_depth=-1)])
    def test_bad_params(self, kw):
        with pytest.raises(InputError):
            ForestParams(**kw)

    def test_default_mtry_is_a_third(self):
        assert ForestParams().resolved_mtry(22) == 8
        assert ForestParams(mtry=50).resolved_mtry(22) == 22


class TestImportance:
    def data(self, n=60, seed=9):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(n, 4))
        return X, 5 * X[:, 0] + X[:, 1]

    def test_split_frequency_single_split(self):
        X = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 3.0], [1.0, 4.0]])
        forest = fit_forest(X, np.array([0.0, 0, 1, 1]), single_tree(mtry=2, min_leaf=2), 0)
        assert split_frequency_importance(forest).tolist() == [1.0, 0.0]

    def test_split_frequency_all_leaves(self):
        forest = fit_forest(np.ones((5, 3)), np.arange(5.0), ForestParams(n_trees=4))
        assert split_frequency_importance(forest).tolist() == [0.0, 0.0, 0.0]

    def test_split_frequency_sums_to_one(self):
        X, y = self.data()
        assert split_frequency_importance(fit_forest(X, y, ForestParams(n_trees=20), 0)).sum() == \
            pytest.approx(1.0)

    def test_permutation_of_unused_column_is_zero(self):
        X, y = self.data()
        X[:, 3] = 0.5  # constant column can never be split on
        forest = fit_forest(X, y, ForestParams(n_trees=30), 0)
        imp = permutation_importance(forest, X, y, n_repeats=5, seed=1)
        assert imp[3] == 0.0
        assert imp[0] > imp[1] > 0

    def test_permutation_deterministic(self):
        X, y = self.data()
        forest = fit_forest(X, y, ForestParams(n_trees=10), 0)
        a = permutation_importance(forest, X, y, 3, seed=4)
        assert a.tolist() == permutation_importance(forest, X, y, 3, seed=4).tolist()

    def test_repeats_must_be_positive(self):
        X, y = self.data()
        with pytest.raises(InputError):
            permutation_importance(fit_forest(X, y, ForestParams(n_trees=2)), X, y, 0)


class TestPartialDependence:
    def test_constant_column_gives_flat_point(self):
        X = np.column_stack([np.linspace(0, 1, 30), np.full(30, 2.0)])
        forest = fit_forest(X, X[:, 0], ForestParams(n_trees=10), 0)
        curve = partial_dependence(forest, X, 1, 20)
        assert len(curve) == 1 and curve[0][0] == 2.0
        assert curve[0][1] == pytest.approx(float(np.mean(forest.predict(X))), abs=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_curve_inside_leaf_range(self, seed):
        rng = np.random.default_rng(seed)
        X, y = rng.normal(size=(25, 3)), rng.normal(size=25)
        forest = fit_forest(X, y, ForestParams(n_trees=5), seed)
        lo = min(t.value.min() for t in forest.trees)
        hi = max(t.value.max() for t in forest.trees)
        for f in range(3):
            curve = partial_dependence(forest, X, f, 10)
            assert len(curve) == 10
            assert curve[0][0] == X[:, f].min() and curve[-1][0] == X[:, f].max()
            assert all(lo - 1e-9 <= v <= hi + 1e-9 for _, v in curve)

    def test_monotone_signal_gives_monotone_curve(self):
        x = np.linspace(0, 1, 100)
        X = np.column_stack([x, np.random.default_rng(1).uniform(size=100)])
        forest = fit_forest(X, 3 * x, ForestParams(n_trees=40), 0)
        values = [v for _, v in partial_dependence(forest, X, 0, 25)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_grid_size_checked(self):
        forest = fit_forest(np.ones((3, 1)), np.ones(3), ForestParams(n_trees=1))
        with pytest.raises(InputError):
            partial_dependence(forest, np.ones((3, 1)), 0, 1)


def profile(sid, n_o=5, n_d=5):
    return StationProfile(sid, n_o, n_d, 0.1 if n_o else None, 0.2 if n_d else None, 1.0 if n_o else None,
                          1.5 if n_d else None, (0.0,) * 6 + (1.0, 0.0), (0.0,) * 6 + (1.0, 0.0))


class TestFeatures:
    def test_exclusions_listed(self):
        profiles = [profile(f"S{k:02d}") for k in range(12)] + [profile("E", n_d=0), profile("N")]
        totals = {f"S{k:02d}": (10 * k, 5 * k) for k in range(12)} | {"E": (1, 1)}
        fm = build_features(profiles, totals)
        assert len(fm.station_ids) == 12 and fm.X.shape == (12, 22)
        assert dict(fm.excluded) == {"E": "no trace observations", "N": "no counter data"}
        assert fm.feature_names == FEATURE_NAMES
        assert fm.column("n_origin").tolist() == [5.0] * 12
        assert fm.target("alightings")[3] == 15.0

    def test_too_few_stations(self):
        with pytest.raises(InsufficientDataError, match="9"):
            build_features([profile(f"S{k}") for k in range(9)], {f"S{k}": (1, 1) for k in range(9)})

    def test_counter_totals(self):
        from transit_fuse.core import APCEvent
        events = [APCEvent("K", "t", "A", 0, 3, 1), APCEvent("K", "t", "A", 9, 2, 0), APCEvent("K", "t", "B", 5, 0, 4)]
        assert apc_station_totals(events) == {"A": (5, 1), "B": (0, 4)}
