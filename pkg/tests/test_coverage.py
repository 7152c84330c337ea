import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import FRAME
from transit_fuse.chains import TrainLegContext
from transit_fuse.core import MODE_ORDER, GridCell, InputError, ProjectionFrame, Station, TravelMode, cell_centroid
from transit_fuse.coverage import (
    FEATURE_NAMES, CellFlowList, compile_cell_flows, gini, mode_vectors, radius_of_gyration, read_profiles,
    station_profiles, write_profiles,
)

W, B, C, U = TravelMode.WALKING, TravelMode.BUS, TravelMode.CYCLING, TravelMode.UNKNOWN


def c(board, alight, o=(0, 0), d=(1, 1), access=W, egress=W):
    return TrainLegContext("x", board, alight, 0, 60, GridCell(*o), GridCell(*d), access, egress, 0)


def gini_oracle(v):
    n = len(v)
    mean = sum(v) / n
    return sum(abs(a - b) for a in v for b in v) / (2 * n * n * mean)


class TestCellFlows:
    def test_origin_and_destination_sides(self):
        flows = compile_cell_flows([c("A", "B", (1, 1), (5, 5)), c("A", "B", (1, 1), (6, 6)),
                                    c("A", "C", (2, 2), (5, 5))])
        o, d = flows["A"]
        assert o.as_dict() == {GridCell(1, 1): 2, GridCell(2, 2): 1}
        assert len(d) == 0
        assert flows["B"][1].as_dict() == {GridCell(5, 5): 1, GridCell(6, 6): 1}
        assert flows["C"][0].entries == ()

    def test_listed_unused_station_gets_empty_lists(self):
        flows = compile_cell_flows([], ["Z"])
        assert len(flows["Z"][0]) == len(flows["Z"][1]) == 0

    def test_counts_sum_to_legs(self):
        ctx = [c("A", "B", (k % 3, 0), (k % 5, 0)) for k in range(17)]
        o, _ = compile_cell_flows(ctx)["A"]
        assert sum(o.counts) == 17 and len(o) == 3


class TestGini:
    def test_equal_values_give_zero(self):
        assert gini([4, 4, 4, 4]) == 0.0
        assert gini([7]) == 0.0

    def test_against_double_sum(self):
        assert gini([1, 1, 1, 1000]) == pytest.approx(gini_oracle([1, 1, 1, 1000]), abs=1e-12)

    def test_one_dominant_cell_approaches_upper_bound(self):
        assert gini([1.0, 1e-9, 1e-9, 1e-9]) == pytest.approx(0.75, abs=1e-6)

    @given(st.lists(st.integers(1, 1000), min_size=1, max_size=40))
    def test_oracle_and_bounds(self, v):
        g = gini(v)
        assert g == pytest.approx(gini_oracle(v), abs=1e-12)
        assert 0.0 <= g <= (len(v) - 1) / len(v) + 1e-12

    @given(st.lists(st.integers(1, 1000), min_size=1, max_size=40), st.floats(0.01, 100))
    def test_scale_invariant(self, v, k):
        assert gini([k * x for x in v]) == pytest.approx(gini(v), abs=1e-9)

    @pytest.mark.parametrize("bad", [[], [1, 0, 2], [3, -1]])
    def test_rejects_empty_and_nonpositive(self, bad):
        with pytest.raises(InputError):
            gini(bad)


def flows_at(station, *cells_and_counts):
    return CellFlowList(station.station_id, "origin", tuple(cells_and_counts))


class TestRadiusOfGyration:
    frame = ProjectionFrame(0.0, 0.0)

    def station_at_cell(self, cell):
        la, lo = cell_centroid(cell, self.frame)
        return Station("S", "s", la, lo)

    def test_single_cell_two_km_away(self):
        # put the station exactly 2 km north of the centroid of cell (0, 0)
        la, lo = cell_centroid(GridCell(0, 0), self.frame)
        s = Station("S", "s", la + math.degrees(2.0 / 6371.0), lo)
        assert radius_of_gyration(flows_at(s, (GridCell(0, 0), 5)), s, self.frame) == pytest.approx(2.0, abs=1e-9)

    def test_weighted_mean_of_one_and_three_km(self):
        la, lo = cell_centroid(GridCell(0, 0), self.frame)
        s = Station("S", "s", la, lo)
        # cells 4 and 12 rows north are 1 km and 3 km away at 250 m per cell
        rg = radius_of_gyration(flows_at(s, (GridCell(0, 4), 1), (GridCell(0, 12), 1)), s, self.frame)
        assert rg == pytest.approx(2.0, abs=1e-9)

    def test_random_cells_against_direct_sum(self):
        from transit_fuse.core import haversine_km
        rng = np.random.default_rng(3)
        s = Station("S", "s", 60.17, 24.94)
        entries = tuple((GridCell(int(rng.integers(-40, 200)), int(rng.integers(-40, 200))), int(rng.integers(1, 9)))
                        for _ in range(10))
        num = sum(haversine_km(cell_centroid(g, FRAME), s.coords) * n for g, n in entries)
        den = sum(n for _, n in entries)
        assert radius_of_gyration(flows_at(s, *entries), s, FRAME) == pytest.approx(num / den, rel=1e-12)

    def test_translation_keeps_rg(self):
        base = self.station_at_cell(GridCell(0, 0))
        moved = self.station_at_cell(GridCell(10, 0))
        a = radius_of_gyration(flows_at(base, (GridCell(3, 0), 2), (GridCell(-2, 0), 1)), base, self.frame)
        b = radius_of_gyration(flows_at(moved, (GridCell(13, 0), 2), (GridCell(8, 0), 1)), moved, self.frame)
        assert a == pytest.approx(b, abs=1e-9)

    def test_empty_list(self):
        s = self.station_at_cell(GridCell(0, 0))
        with pytest.raises(InputError):
            radius_of_gyration(flows_at(s), s, self.frame)


class TestModeVectors:
    def test_shares_in_fixed_order(self):
        v = mode_vectors([c("A", "B", access=W), c("A", "B", access=W), c("A", "B", access=B, egress=C),
                          c("A", "C", access=U)])
        access_a, egress_a = v["A"]
        # order: Bus, PrivateCar, Cycling, Subway, Train, Tram, Walking, Unknown
        assert access_a == (0.25, 0, 0, 0, 0, 0, 0.5, 0.25)
        assert egress_a == (0,) * 8
        assert v["B"][1] == pytest.approx((0, 0, 1 / 3, 0, 0, 0, 2 / 3, 0))

    def test_each_used_side_sums_to_one(self):
        rng = np.random.default_rng(4)
        modes = list(TravelMode)
        ctx = [c(f"S{rng.integers(3)}", f"T{rng.integers(3)}", access=modes[rng.integers(8)],
                 egress=modes[rng.integers(8)]) for _ in range(50)]
        for access, egress in mode_vectors(ctx).values():
            for vec in (access, egress):
                assert sum(vec) == pytest.approx(1.0) or sum(vec) == 0.0


class TestProfiles:
    registry = {s: Station(s, s, 60.1 + k / 100, 24.9) for k, s in enumerate("ABC")}

    def test_empty_side_metrics_are_none(self):
        (a, b, cc) = station_profiles([c("A", "B", (400, 400), (401, 400))], self.registry, FRAME)
        assert a.n_origin == 1 and a.n_destination == 0
        assert a.gini_destination is None and a.rg_destination is None
        assert not a.complete and not cc.complete
        assert len(a.feature_vector()) == len(FEATURE_NAMES) == 22

    def test_unknown_station(self):
        with pytest.raises(InputError, match="Q"):
            station_profiles([c("A", "Q")], self.registry, FRAME)

    def test_round_trip(self, tmp_path):
        ctx = [c("A", "B", (400, 400), (401, 402)), c("B", "A", (401, 402), (400, 400), B, C),
               c("A", "B", (405, 400), (401, 402))]
        profiles = station_profiles(ctx, self.registry, FRAME)
        write_profiles(tmp_path / "p.csv", profiles, ("seed: 1",))
        back = read_profiles(tmp_path / "p.csv")
        assert [p.station_id for p in back] == ["A", "B", "C"]
        for x, y in zip(profiles, back):
            assert x == y


class TestFullObservation:
    def test_cells_and_modes_equal_truth(self, full_observation):
        side = full_observation.synth.sidecar
        flows = compile_cell_flows(full_observation.contexts, side["stations"])
        modes = {s: (_tally(full_observation.contexts, s, "board"), _tally(full_observation.contexts, s, "alight"))
                 for s in side["stations"]}
        for s in side["stations"]:
            o, d = flows[s]
            assert {g.key(): n for g, n in o.entries} == side["true_origin_cells"][s]
            assert {g.key(): n for g, n in d.entries} == side["true_destination_cells"][s]
            assert modes[s] == (side["true_access_modes"][s], side["true_egress_modes"][s])
        vectors = mode_vectors(full_observation.contexts, side["stations"])
        for s in side["stations"]:
            truth = side["true_access_modes"][s]
            total = sum(truth.values())
            expected = tuple(truth.get(m.value, 0) / total for m in MODE_ORDER) if total else (0.0,) * 8
            assert vectors[s][0] == pytest.approx(expected, abs=1e-15)


def _tally(contexts, station, which):
    out = {}
    for x in contexts:
        if which == "board" and x.board_station == station:
            out[x.access_mode.value] = out.get(x.access_mode.value, 0) + 1
        elif which == "alight" and x.alight_station == station:
            out[x.egress_mode.value] = out.get(x.egress_mode.value, 0) + 1
    return dict(sorted(out.items()))
