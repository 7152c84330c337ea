import math

import pytest
from hypothesis import given, strategies as st

from transit_fuse.core import (
    MODE_ORDER, Diagnostics, GridCell, InputError, InvariantError, Leg, ProjectionFrame, Station, TravelMode,
    TripChain, APCEvent, cell_centroid, format_local_iso, haversine_km, is_weekday, local_hour,
    parse_local_iso, round_to_quarter_hour, snap_to_cell,
)

lat = st.floats(-85, 85, allow_nan=False)
lon = st.floats(-179.9, 179.9, allow_nan=False)
helsinki_lat = st.floats(59.8, 60.5, allow_nan=False)
helsinki_lon = st.floats(24.0, 25.5, allow_nan=False)


def t(hms, day="2021-09-06"):
    return parse_local_iso(f"{day}T{hms}")


class TestTravelMode:
    def test_closed_set_of_eight_in_fixed_order(self):
        assert [m.value for m in MODE_ORDER] == ["Bus", "PrivateCar", "Cycling", "Subway", "Train", "Tram",
                                                 "Walking", "Unknown"]

    def test_unknown_label_counts_a_warning(self):
        diag = Diagnostics()
        assert TravelMode.parse("scooter", diag) is TravelMode.UNKNOWN
        assert diag["unknown_mode"] == 1

    @pytest.mark.parametrize("label,mode", [("Private_Car", TravelMode.PRIVATE_CAR), ("walking", TravelMode.WALKING),
                                            ("TRAIN", TravelMode.TRAIN), ("Unknown", TravelMode.UNKNOWN)])
    def test_label_normalisation(self, label, mode):
        diag = Diagnostics()
        assert TravelMode.parse(label, diag) is mode
        assert diag.as_dict() == {}

    def test_pt_vehicle_modes(self):
        assert {m for m in TravelMode if m.is_pt_vehicle} == {TravelMode.BUS, TravelMode.SUBWAY, TravelMode.TRAIN,
                                                              TravelMode.TRAM}


class TestGrid:
    def test_origin_is_cell_zero(self):
        f = ProjectionFrame(60.0, 24.5)
        assert snap_to_cell(60.0, 24.5, f) == GridCell(0, 0)

    def test_260m_east_at_equator(self):
        f = ProjectionFrame(0.0, 0.0)
        dlon = math.degrees(260.0 / 6_371_000.0)
        assert snap_to_cell(0.0, dlon, f) == GridCell(1, 0)

    def test_hand_computed_cell(self):
        # x = R * 0.4414 deg * cos(60 deg) = 24540.72 m, y = R * 0.1719 deg = 19114.41 m
        f = ProjectionFrame(60.0, 24.5)
        assert snap_to_cell(60.1719, 24.9414, f) == GridCell(98, 76)

    @pytest.mark.parametrize("bad", [(91.0, 0.0), (0.0, 181.0), (float("nan"), 0.0)])
    def test_out_of_range_coordinates(self, bad):
        with pytest.raises(InputError):
            snap_to_cell(*bad, ProjectionFrame(0.0, 0.0))

    @given(st.integers(-400, 400), st.integers(-400, 400))
    def test_snap_idempotent_on_centroids(self, ix, iy):
        f = ProjectionFrame(60.0, 24.5)
        c = GridCell(ix, iy)
        assert snap_to_cell(*cell_centroid(c, f), f) == c

    @given(helsinki_lat, helsinki_lon, st.floats(0, 249.0))
    def test_small_shift_moves_at_most_one_cell(self, la, lo, dx):
        f = ProjectionFrame(60.0, 24.5)
        a = snap_to_cell(la, lo, f)
        x, y = f.to_xy(la, lo)
        b = snap_to_cell(*f.to_latlon(x + dx, y), f)
        assert b.iy == a.iy or abs(b.iy - a.iy) <= 1
        assert 0 <= b.ix - a.ix <= 1

    def test_cell_key_round_trip(self):
        assert GridCell.from_key(GridCell(-3, 17).key()) == GridCell(-3, 17)


class TestHaversine:
    def test_identical_points(self):
        assert haversine_km((60.17, 24.94), (60.17, 24.94)) == 0.0

    def test_antipodal(self):
        assert haversine_km((0, 0), (0, 180)) == pytest.approx(math.pi * 6371.0, abs=0.01)

    def test_helsinki_pair_against_chord_oracle(self):
        # 40-digit chord-length computation on the unit sphere
        assert haversine_km((60.1719, 24.9414), (60.1988, 24.9337)) == pytest.approx(3.0212844376625589, abs=1e-6)

    @given(lat, lon, lat, lon)
    def test_symmetric_and_non_negative(self, a1, o1, a2, o2):
        d = haversine_km((a1, o1), (a2, o2))
        assert d >= 0
        assert d == pytest.approx(haversine_km((a2, o2), (a1, o1)), abs=1e-9)

    @given(lat, lon, lat, lon, lat, lon)
    def test_triangle_inequality(self, a1, o1, a2, o2, a3, o3):
        ab = haversine_km((a1, o1), (a2, o2))
        bc = haversine_km((a2, o2), (a3, o3))
        ac = haversine_km((a1, o1), (a3, o3))
        assert ac <= ab + bc + 1e-6


class TestTime:
    @pytest.mark.parametrize("raw,expected", [("12:07:00", "12:00:00"), ("12:08:00", "12:15:00"),
                                              ("12:07:30", "12:15:00"), ("23:53:00", "00:00:00")])
    def test_quarter_hour_examples(self, raw, expected):
        out = format_local_iso(round_to_quarter_hour(t(raw)))
        assert out.endswith(expected)

    @given(st.integers(1_500_000_000, 1_700_000_000), st.integers(-12, 14))
    def test_quarter_hour_properties(self, ts, hours):
        off = hours * 3600
        r = round_to_quarter_hour(ts, off)
        assert (r + off) % 900 == 0
        assert abs(r - ts) <= 450

    def test_rounding_happens_in_local_time(self):
        off = 1800 + 3 * 3600  # a half-hour offset shifts the UTC grid
        ts = parse_local_iso("2021-09-06T12:07:00", off)
        assert format_local_iso(round_to_quarter_hour(ts, off), off) == "2021-09-06T12:00:00"

    def test_iso_round_trip_with_offset(self):
        ts = parse_local_iso("2021-09-06T08:15:00", 10800)
        assert format_local_iso(ts, 10800) == "2021-09-06T08:15:00"
        assert local_hour(ts, 10800) == 8
        assert local_hour(ts) == 5

    def test_weekday(self):
        assert is_weekday(t("10:00:00", "2021-09-06"))  # Monday
        assert not is_weekday(t("10:00:00", "2021-09-04"))  # Saturday


class TestValueTypes:
    def test_leg_rejects_reversed_times(self):
        with pytest.raises(InputError):
            Leg("d", TravelMode.WALKING, 100, 50, GridCell(0, 0), GridCell(0, 0))

    def test_non_pt_leg_cannot_carry_stations(self):
        with pytest.raises(InputError):
            Leg("d", TravelMode.WALKING, 0, 50, GridCell(0, 0), GridCell(0, 0), "S1", "S2")

    def test_chain_needs_legs_of_one_device(self):
        leg = Leg("a", TravelMode.WALKING, 0, 1, GridCell(0, 0), GridCell(0, 0))
        with pytest.raises(InvariantError):
            TripChain("a", ())
        with pytest.raises(InvariantError):
            TripChain("b", (leg,))

    def test_apc_event_rejects_negative_counts(self):
        with pytest.raises(InputError):
            APCEvent("K", "K1", "PSL", 0, -1, 0)

    def test_station_coordinates_checked(self):
        with pytest.raises(InputError):
            Station("X", "x", 95.0, 0.0)
