"""Synthetic ground truth: a toy radial rail network, simulated journeys, exact
counter data, a Bernoulli-sampled coarsened trace file and a truth sidecar.

Randomness is split into independent streams so that days can be simulated
in any order: the network uses ``SeedSequence([seed, NETWORK_STREAM])`` and
day ``d`` (0-based from ``start_date``) uses ``SeedSequence([seed, d])``.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .core import (
    APCEvent, ConfigError, GridCell, ProjectionFrame, Station, TravelMode, cell_centroid,
    haversine_km, snap_to_cell, CELL_SIZE_M,
)
from .ingest import RawLegRecord, anonymize, write_apc_file, write_station_registry, write_trace_file
from .tables import write_json

NETWORK_STREAM = 1_000_003
KM_PER_DEG = math.pi * 6371.0 / 180.0

DEFAULT_ACCESS = {"Walking": 0.45, "Bus": 0.22, "Cycling": 0.08, "PrivateCar": 0.1, "Tram": 0.07,
                  "Subway": 0.04, "Unknown": 0.04}
DEFAULT_EGRESS = {"Walking": 0.55, "Bus": 0.18, "Cycling": 0.06, "PrivateCar": 0.04, "Tram": 0.09,
                  "Subway": 0.05, "Unknown": 0.03}
SPEED_KMH = {TravelMode.WALKING: 4.8, TravelMode.CYCLING: 15.0, TravelMode.BUS: 18.0, TravelMode.TRAM: 16.0,
             TravelMode.SUBWAY: 32.0, TravelMode.PRIVATE_CAR: 28.0, TravelMode.UNKNOWN: 10.0}


@dataclass(frozen=True)
class PlantSpec:
    """Knobs of the planted ridership signal."""

    n_cells_min: int = 10
    n_cells_max: int = 120
    destination_sigma: float = 0.2
    catchment_km: float = 3.0
    cycling_share: tuple[float, float] = (0.05, 0.35)


@dataclass(frozen=True)
class SynthConfig:
    start_date: str = "2021-09-01"
    n_days: int = 30
    journeys_per_day: int = 2000
    weekend_factor: float = 0.3
    opt_in_rate: float = 0.025
    apc_imputation_rate: float = 0.02
    imputation_noise_sigma: float = 0.1
    n_lines: int = 3
    stations_per_line: int = 6
    station_spacing_km: float = 2.0
    headway_min: int = 10
    runtime_min: int = 3
    service_start_h: float = 5.0
    service_end_h: float = 23.0
    center_lat: float = 60.1719
    center_lon: float = 24.9414
    catchment_km: float = 2.0
    access_modes: dict = field(default_factory=lambda: dict(DEFAULT_ACCESS))
    egress_modes: dict = field(default_factory=lambda: dict(DEFAULT_EGRESS))
    missing_access_rate: float = 0.05
    missing_egress_rate: float = 0.05
    return_trip_rate: float = 0.0
    allow_transfers: bool = True
    plant: PlantSpec | None = None

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(f"synth config: {msg}")
        try:
            date.fromisoformat(self.start_date)
        except (TypeError, ValueError):
            bad(f"start_date {self.start_date!r} is not ISO-8601")
        if self.n_days < 1:
            bad("n_days must be >= 1")
        if self.journeys_per_day < 0:
            bad("journeys_per_day must be >= 0")
        if not 0.0 <= self.opt_in_rate <= 1.0:
            bad("opt_in_rate must be in [0, 1]")
        if not 0.0 <= self.apc_imputation_rate < 1.0:
            bad("apc_imputation_rate must be in [0, 1)")
        for name in ("weekend_factor", "imputation_noise_sigma", "catchment_km"):
            if getattr(self, name) < 0:
                bad(f"{name} must be >= 0")
        for name in ("missing_access_rate", "missing_egress_rate", "return_trip_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad(f"{name} must be in [0, 1]")
        if not 2 <= self.n_lines <= 4:
            bad("n_lines must be between 2 and 4")
        if self.stations_per_line < 2:
            bad("stations_per_line must be >= 2 (three stations per line with the hub)")
        if not 1 <= self.headway_min < 30:
            bad("headway_min must be in [1, 30) so transfers stay inside one chain")
        if self.runtime_min < 1 or self.station_spacing_km <= 0:
            bad("runtime_min and station_spacing_km must be positive")
        if not 0 <= self.service_start_h < self.service_end_h <= 24:
            bad("service hours must satisfy 0 <= start < end <= 24")
        if self.service_end_h - self.service_start_h < 6:
            bad("service day must be at least 6 hours")
        for name in ("access_modes", "egress_modes"):
            dist = getattr(self, name)
            if not dist or sum(dist.values()) <= 0 or any(v < 0 for v in dist.values()):
                bad(f"{name} needs non-negative weights with a positive sum")
            for label in dist:
                mode = TravelMode.parse(label)
                if mode is TravelMode.UNKNOWN and label.strip().lower() != "unknown":
                    bad(f"{name}: unknown mode {label!r}")
                if mode is TravelMode.TRAIN:
                    bad(f"{name}: Train is not a feeder mode")
        if self.plant is not None:
            p = self.plant
            if not 1 <= p.n_cells_min < p.n_cells_max:
                bad("plant cell range must satisfy 1 <= min < max")
            lo, hi = p.cycling_share
            if not 0 <= lo <= hi < 1:
                bad("plant cycling_share must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"synth config: unknown keys {sorted(unknown)}")
        d = dict(d)
        if d.get("plant") is not None and not isinstance(d["plant"], PlantSpec):
            plant = dict(d["plant"])
            if "cycling_share" in plant:
                plant["cycling_share"] = tuple(plant["cycling_share"])
            d["plant"] = PlantSpec(**plant)
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.plant is not None:
            d["plant"]["cycling_share"] = list(self.plant.cycling_share)
        return d


def plant_relationship(config: SynthConfig | None = None, **overrides) -> SynthConfig:
    """Config whose station boardings are proportional to planted catchment breadth.

    Each station gets a planted number of origin cells; its daily boardings
    are an exact quota proportional to that number. Alightings follow a
    second planted cell count, and a per-station cycling access share is
    drawn independently of everything as a known irrelevant feature.
    """
    config = config or SynthConfig()
    settings = dict(plant=config.plant or PlantSpec(), allow_transfers=False, missing_access_rate=0.0,
                    missing_egress_rate=0.0, return_trip_rate=0.0, weekend_factor=0.0, n_lines=4,
                    stations_per_line=10, journeys_per_day=2500, opt_in_rate=0.5)
    settings.update(overrides)
    return replace(config, **settings)


@dataclass
class ToyNetwork:
    stations: list[Station]
    lines: dict[str, list[str]]  # line id -> station ids, hub first
    population: dict[str, float]
    attraction: dict[str, float]
    hub: str
    planted: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate station ids in network")
        for line, members in self.lines.items():
            if len(members) < 3:
                raise ConfigError(f"line {line} has fewer than 3 stations")
            if members[0] != self.hub:
                raise ConfigError(f"line {line} does not start at the hub")
        reachable = {sid for members in self.lines.values() for sid in members}
        if reachable != set(ids):
            raise ConfigError("network has stations outside every line")

    @property
    def by_id(self) -> dict[str, Station]:
        return {s.station_id: s for s in self.stations}

    def line_of(self, station_id: str) -> str | None:
        """Home line of a non-hub station (None for the hub)."""
        if station_id == self.hub:
            return None
        for line, members in self.lines.items():
            if station_id in members:
                return line
        raise KeyError(station_id)


@dataclass
class TrueJourney:
    journey_id: int
    device_tag: str
    day: str
    opt_in: bool
    legs: list  # (mode, t0, t1, lat0, lon0, lat1, lon1, board, alight, route, trip)
    device_day_id: str | None = None

    @property
    def train_legs(self):
        return [leg for leg in self.legs if leg[0] is TravelMode.TRAIN]


@dataclass
class SynthOutput:
    network: ToyNetwork
    apc_events: list[APCEvent]
    trace_records: list[RawLegRecord]
    journeys: list[TrueJourney]
    sidecar: dict
    paths: dict[str, Path] = field(default_factory=dict)


def _offset_point(lat, lon, dx_km, dy_km):
    return lat + dy_km / KM_PER_DEG, lon + dx_km / (KM_PER_DEG * math.cos(math.radians(lat)))


def build_network(config: SynthConfig, seed: int, frame: ProjectionFrame) -> ToyNetwork:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), NETWORK_STREAM]))
    hub = Station("HUB", "Central", config.center_lat, config.center_lon)
    stations = [hub]
    lines = {}
    for li in range(config.n_lines):
        line = chr(ord("A") + li)
        theta = 2 * math.pi * li / config.n_lines + rng.uniform(-0.25, 0.25)
        members = [hub.station_id]
        dist = 0.0
        for k in range(1, config.stations_per_line + 1):
            dist += config.station_spacing_km * rng.uniform(0.8, 1.2)
            lat, lon = _offset_point(hub.lat, hub.lon, dist * math.cos(theta), dist * math.sin(theta))
            st = Station(f"{line}{k}", f"Line {line} stop {k}", round(lat, 6), round(lon, 6))
            stations.append(st)
            members.append(st.station_id)
        lines[line] = members
    population = {s.station_id: float(rng.lognormal(0.0, 0.7)) for s in stations}
    attraction = {s.station_id: float(rng.lognormal(0.0, 0.7)) for s in stations}
    attraction[hub.station_id] *= 4.0
    net = ToyNetwork(stations, lines, population, attraction, hub.station_id)
    if config.plant is not None:
        net.planted = _plant(config.plant, net, rng, frame)
    return net


def _cells_within(station: Station, radius_km: float, frame: ProjectionFrame) -> list[GridCell]:
    centre = snap_to_cell(station.lat, station.lon, frame)
    reach = int(math.ceil(radius_km * 1000 / CELL_SIZE_M)) + 1
    cells = []
    for ix in range(centre.ix - reach, centre.ix + reach + 1):
        for iy in range(centre.iy - reach, centre.iy + reach + 1):
            c = GridCell(ix, iy)
            if haversine_km(cell_centroid(c, frame), station.coords) <= radius_km:
                cells.append(c)
    return cells


def _plant(spec: PlantSpec, net: ToyNetwork, rng, frame) -> dict:
    ids = [s.station_id for s in net.stations]
    n = len(ids)
    # well separated, distinct breadths so boarding ranks follow the plant exactly
    breadth = np.rint(np.linspace(spec.n_cells_min, spec.n_cells_max, n)).astype(int)
    breadth = breadth[rng.permutation(n)]
    size = (breadth - spec.n_cells_min) / (spec.n_cells_max - spec.n_cells_min)
    dest = np.clip(np.rint(breadth * rng.lognormal(0.0, spec.destination_sigma, n)),
                   spec.n_cells_min, spec.n_cells_max).astype(int)
    dest_size = (dest - spec.n_cells_min) / (spec.n_cells_max - spec.n_cells_min)
    cycling = rng.uniform(*spec.cycling_share, size=n)
    origin_cells, dest_cells, origin_w, dest_w, access, egress = {}, {}, {}, {}, {}, {}
    for k, sid in enumerate(ids):
        st = net.by_id[sid]
        # catchment radius and cell-weight spread grow with station size, with noise
        r_o = spec.catchment_km * (0.55 + 0.35 * size[k] + 0.1 * rng.uniform())
        r_d = spec.catchment_km * (0.55 + 0.35 * dest_size[k] + 0.1 * rng.uniform())
        pool_o = _cells_within(st, r_o, frame)
        pool_d = _cells_within(st, r_d, frame)
        if len(pool_o) < breadth[k] or len(pool_d) < dest[k]:
            raise ConfigError("plant catchment too small for the requested cell counts")
        origin_cells[sid] = [pool_o[i] for i in sorted(rng.choice(len(pool_o), breadth[k], replace=False))]
        dest_cells[sid] = [pool_d[i] for i in sorted(rng.choice(len(pool_d), dest[k], replace=False))]
        origin_w[sid] = rng.lognormal(0.0, 0.2 + 0.8 * size[k], breadth[k])
        dest_w[sid] = rng.lognormal(0.0, 0.2 + 0.8 * dest_size[k], dest[k])
        s, t, c = size[k], dest_size[k], cycling[k]
        access[sid] = {"Cycling": c, "Walking": (1 - c) * (0.2 + 0.5 * s),
                       "Bus": (1 - c) * (0.5 - 0.3 * s), "PrivateCar": (1 - c) * (0.3 - 0.2 * s)}
        egress[sid] = {"Walking": 0.3 + 0.3 * t, "Bus": 0.4 - 0.25 * t, "PrivateCar": 0.2 - 0.15 * t,
                       "Cycling": 0.1 + 0.1 * t}
    return {"n_origin": dict(zip(ids, breadth.tolist())), "n_destination": dict(zip(ids, dest.tolist())),
            "cycling_share": dict(zip(ids, cycling.tolist())), "origin_cells": origin_cells,
            "destination_cells": dest_cells, "origin_weights": origin_w, "destination_weights": dest_w,
            "access": access, "egress": egress}


class _Timetable:
    """Radial lines: trips leave each terminus every ``headway`` from service start."""

    def __init__(self, config: SynthConfig, net: ToyNetwork):
        self.headway = config.headway_min * 60
        self.runtime = config.runtime_min * 60
        self.start = int(config.service_start_h * 3600)
        self.n_trips = int((config.service_end_h * 3600 - self.start) // self.headway) + 1
        self.lines = net.lines
        self.pos = {line: {sid: p for p, sid in enumerate(members)} for line, members in net.lines.items()}

    def n_stops(self, line):
        return len(self.lines[line])

    def stop_index(self, line, direction, pos):
        return pos if direction == "out" else self.n_stops(line) - 1 - pos

    def ride(self, line, board, alight, ready):
        """(trip index, direction, board idx, alight idx, depart, arrive) of the first usable trip."""
        pb, pa = self.pos[line][board], self.pos[line][alight]
        direction = "out" if pa > pb else "in"
        ib, ia = self.stop_index(line, direction, pb), self.stop_index(line, direction, pa)
        k = max(0, -(-(ready - self.start - ib * self.runtime) // self.headway))
        if k >= self.n_trips:
            return None
        depart = self.start + k * self.headway + ib * self.runtime
        return k, direction, ib, ia, depart, depart + (ia - ib) * self.runtime


def _choice(rng, weights: dict):
    keys = list(weights)
    p = np.array([weights[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _quota(total: int, weights) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    q = np.floor(raw).astype(int)
    rem = total - q.sum()
    order = np.lexsort((np.arange(len(w)), -(raw - q)))
    q[order[:rem]] += 1
    return q


def _departure_seconds(rng, config: SynthConfig) -> int:
    u = rng.uniform()
    if u < 0.55:
        h = rng.normal(7.75, 0.9)
    elif u < 0.85:
        h = rng.normal(16.5, 1.1)
    else:
        h = rng.uniform(6.0, 20.0)
    lo = config.service_start_h + 0.25
    hi = config.service_end_h - 2.5
    return int(min(max(h, lo), hi) * 3600)


def _point_near(rng, station: Station, radius_km: float):
    r = radius_km * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * math.pi)
    return _offset_point(station.lat, station.lon, r * math.cos(a), r * math.sin(a))


def _point_in_cell(rng, cell: GridCell, frame: ProjectionFrame):
    x = (cell.ix + rng.uniform(0.05, 0.95)) * CELL_SIZE_M
    y = (cell.iy + rng.uniform(0.05, 0.95)) * CELL_SIZE_M
    return frame.to_latlon(x, y)


def _feeder_leg(mode, t0, a, b, station_id, towards_station):
    dur = int(haversine_km(a, b) / SPEED_KMH[mode] * 3600) + 120
    if mode.is_pt_vehicle:
        stop = f"F-{station_id}-{mode.value}"
        board, alight = (stop, station_id) if towards_station else (station_id, stop)
        route = f"{mode.value}-feeder"
    else:
        board = alight = route = None
    if towards_station:
        return (mode, t0 - dur, t0, a[0], a[1], b[0], b[1], board, alight, route, None)
    return (mode, t0, t0 + dur, a[0], a[1], b[0], b[1], board, alight, route, None)


class _Simulator:
    def __init__(self, config: SynthConfig, net: ToyNetwork, frame: ProjectionFrame, utc_offset: int):
        self.config = config
        self.net = net
        self.st = net.by_id
        self.frame = frame
        self.utc_offset = utc_offset
        self.tt = _Timetable(config, net)
        self.ids = [s.station_id for s in net.stations]
        self.access = {k: v for k, v in config.access_modes.items()}
        self.egress = {k: v for k, v in config.egress_modes.items()}
        self._dest_cache = {}

    def _routes(self, i, j):
        """Train legs (line, board, alight) from i to j."""
        li, lj, hub = self.net.line_of(i), self.net.line_of(j), self.net.hub
        if li is None:
            return [(lj, i, j)]
        if lj is None or li == lj:
            return [(li, i, j)]
        return [(li, i, hub), (lj, hub, j)]

    def _destination(self, rng, i):
        if i not in self._dest_cache:
            if self.config.allow_transfers:
                cand = [j for j in self.ids if j != i]
            else:
                line = self.net.line_of(i) or next(iter(self.net.lines))
                cand = [j for j in self.net.lines[line] if j != i]
            w = np.array([self.net.attraction[j] / max(1.0, haversine_km(self.st[i].coords, self.st[j].coords))
                          for j in cand])
            self._dest_cache[i] = (cand, w / w.sum())
        cand, p = self._dest_cache[i]
        return cand[int(rng.choice(len(cand), p=p))]

    def _modes(self, rng, i, j):
        cfg = self.config
        plant = self.net.planted
        a_dist = plant["access"][i] if plant else self.access
        e_dist = plant["egress"][j] if plant else self.egress
        access = None if rng.uniform() < cfg.missing_access_rate else TravelMode.parse(_choice(rng, a_dist))
        egress = None if rng.uniform() < cfg.missing_egress_rate else TravelMode.parse(_choice(rng, e_dist))
        return access, egress

    def journey(self, rng, day_start, i, j, home, work, depart, counts):
        """Legs of one door-to-door journey, or None if the timetable cannot serve it."""
        access, egress = self._modes(rng, i, j)
        legs = []
        t = day_start + depart
        if access is not None:
            leg = _feeder_leg(access, 0, home, self.st[i].coords, i, True)
            dur = leg[2] - leg[1]
            legs.append((leg[0], t, t + dur) + leg[3:])
            t += dur
        for line, b, a in self._routes(i, j):
            ride = self.tt.ride(line, b, a, t - day_start)
            if ride is None:
                return None
            k, direction, ib, ia, dep, arr = ride
            legs.append((TravelMode.TRAIN, day_start + dep, day_start + arr, *self.st[b].coords,
                         *self.st[a].coords, b, a, line, (line, direction, k, ib, ia)))
            t = day_start + arr
        if egress is not None:
            legs.append(_feeder_leg(egress, t, self.st[j].coords, work, j, False))
        for leg in legs:
            if leg[0] is TravelMode.TRAIN:
                counts.append(leg[10])
        return legs

    def endpoints(self, rng, i, j):
        plant = self.net.planted
        if plant:
            oc = plant["origin_cells"][i]
            dc = plant["destination_cells"][j]
            ow = plant["origin_weights"][i]
            dw = plant["destination_weights"][j]
            home = _point_in_cell(rng, oc[int(rng.choice(len(oc), p=ow / ow.sum()))], self.frame)
            work = _point_in_cell(rng, dc[int(rng.choice(len(dc), p=dw / dw.sum()))], self.frame)
        else:
            home = _point_near(rng, self.st[i], self.config.catchment_km)
            work = _point_near(rng, self.st[j], self.config.catchment_km)
        return home, work

    def od_pairs(self, rng, n):
        """Origin/destination station pairs for ``n`` journeys of one day."""
        if not self.net.planted:
            pop = np.array([self.net.population[s] for s in self.ids])
            origins = rng.choice(len(self.ids), size=n, p=pop / pop.sum())
            return [(self.ids[o], self._destination(rng, self.ids[o])) for o in origins]
        plant = self.net.planted
        boardings = _quota(n, [plant["n_origin"][s] for s in self.ids])
        first_line = next(iter(self.net.lines))
        groups = defaultdict(list)
        for s in self.ids:
            groups[self.net.line_of(s) or first_line].append(s)
        pairs = []
        for line in sorted(groups):
            members = groups[line]
            b_tokens = [s for s in members for _ in range(boardings[self.ids.index(s)])]
            a_quota = _quota(len(b_tokens), [plant["n_destination"][s] for s in members])
            a_tokens = np.array([s for s, q in zip(members, a_quota) for _ in range(q)], dtype=object)
            rng.shuffle(a_tokens)
            pairs.extend(zip(b_tokens, _derange(rng, b_tokens, list(a_tokens))))
        order = rng.permutation(len(pairs))
        return [pairs[k] for k in order]


def _derange(rng, left, right):
    """Reorder ``right`` so that no position matches ``left``, by random swaps."""
    right = list(right)
    n = len(right)
    for _ in range(100 * n + 100):
        clashes = [p for p in range(n) if left[p] == right[p]]
        if not clashes:
            return right
        for p in clashes:
            q = int(rng.integers(n))
            if right[q] != left[p] and left[q] != right[p]:
                right[p], right[q] = right[q], right[p]
    raise ConfigError("could not pair origins and destinations; one station dominates demand")


def trip_id(line: str, direction: str, day: str, k: int) -> str:
    """Counter trip id, e.g. ``Ao0906-012`` for the 13th outbound line A trip on 6 September."""
    return f"{line}{direction[0]}{day[5:7]}{day[8:10]}-{k:03d}"


def _day_epoch(day: date, utc_offset: int) -> int:
    return (day - date(1970, 1, 1)).days * 86400 - utc_offset


def generate(config: SynthConfig, seed: int, frame: ProjectionFrame | None = None, out_dir=None,
             utc_offset: int = 0, preamble=()) -> SynthOutput:
    """Simulate ``config.n_days`` days and optionally write the four output files.

    Files written to ``out_dir``: ``apc.csv``, ``traces.csv``, ``stations.csv``
    and ``sidecar.json``. Sidecar aggregates (OD, modes, cell tallies) cover
    weekdays only, the study scope; hourly boardings/alightings cover all days.
    """
    frame = frame or ProjectionFrame(config.center_lat, config.center_lon)
    net = build_network(config, seed, frame)
    sim = _Simulator(config, net, frame, utc_offset)
    tt = sim.tt
    start = date.fromisoformat(config.start_date)

    apc_events: list[APCEvent] = []
    journeys: list[TrueJourney] = []
    jid = 0
    for d in range(config.n_days):
        day = start + timedelta(days=d)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), d]))
        weekday = day.weekday() < 5
        n = config.journeys_per_day if weekday else int(round(config.journeys_per_day * config.weekend_factor))
        day_start = _day_epoch(day, utc_offset)
        counts = []
        for pi, (i, j) in enumerate(sim.od_pairs(rng, n)):
            home, work = sim.endpoints(rng, i, j)
            opt_in = bool(rng.uniform() < config.opt_in_rate)
            tag = f"dev-{day.isoformat()}-{pi:06d}"
            depart = _departure_seconds(rng, config)
            legs = sim.journey(rng, day_start, i, j, home, work, depart, counts)
            if legs is None:
                continue
            journeys.append(TrueJourney(jid, tag, day.isoformat(), opt_in, legs))
            jid += 1
            if rng.uniform() < config.return_trip_rate:
                back = legs[-1][2] - day_start + int(rng.uniform(4, 9) * 3600)
                if back <= (config.service_end_h - 2.5) * 3600:
                    legs2 = sim.journey(rng, day_start, j, i, work, home, back, counts)
                    if legs2 is not None:
                        journeys.append(TrueJourney(jid, tag, day.isoformat(), opt_in, legs2))
                        jid += 1
        apc_events.extend(_apc_for_day(rng, config, tt, day, day_start, counts))

    trace_records = _coarsened_trace(journeys, seed, frame, utc_offset)
    sidecar = build_sidecar(config, net, journeys, frame, utc_offset)
    out = SynthOutput(net, apc_events, trace_records, journeys, sidecar)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out.paths = {
            "apc_file": out_dir / "apc.csv",
            "trace_file": out_dir / "traces.csv",
            "station_registry": out_dir / "stations.csv",
            "sidecar_file": out_dir / "sidecar.json",
        }
        write_apc_file(out.paths["apc_file"], apc_events, utc_offset, preamble)
        write_trace_file(out.paths["trace_file"], trace_records, utc_offset, preamble)
        write_station_registry(out.paths["station_registry"], net.stations, preamble)
        write_json(out.paths["sidecar_file"], sidecar, {"preamble": list(preamble)} if preamble else None)
    return out


def _apc_for_day(rng, config, tt, day, day_start, counts):
    board = {}
    alight = {}
    for line in tt.lines:
        for direction in ("out", "in"):
            board[line, direction] = np.zeros((tt.n_trips, tt.n_stops(line)), dtype=np.int64)
            alight[line, direction] = np.zeros((tt.n_trips, tt.n_stops(line)), dtype=np.int64)
    for line, direction, k, ib, ia in counts:
        board[line, direction][k, ib] += 1
        alight[line, direction][k, ia] += 1
    events = []
    day_iso = day.isoformat()
    for line in tt.lines:
        members = tt.lines[line]
        for direction in ("out", "in"):
            stops = members if direction == "out" else members[::-1]
            b_all, a_all = board[line, direction], alight[line, direction]
            for k in range(tt.n_trips):
                imputed = bool(rng.uniform() < config.apc_imputation_rate)
                b, a = b_all[k], a_all[k]
                if imputed:
                    b = np.rint(b * rng.lognormal(0.0, config.imputation_noise_sigma, len(b))).astype(np.int64)
                    a = np.rint(a * rng.lognormal(0.0, config.imputation_noise_sigma, len(a))).astype(np.int64)
                dep = day_start + tt.start + k * tt.headway
                tid = trip_id(line, direction, day_iso, k)
                for s, sid in enumerate(stops):
                    events.append(APCEvent(line, tid, sid, dep + s * tt.runtime, int(b[s]), int(a[s]), imputed))
    return events


def _coarsened_trace(journeys, seed, frame, utc_offset) -> list[RawLegRecord]:
    """Opted-in journeys run through the privacy coarsening and re-serialised.

    Coordinates become cell centroids, so re-reading and re-coarsening the
    file reproduces the same cells.
    """
    raw = []
    owners = []
    for jr in journeys:
        if not jr.opt_in:
            continue
        for leg in jr.legs:
            mode, t0, t1, la0, lo0, la1, lo1, board, alight, route, _ = leg
            raw.append(RawLegRecord(jr.device_tag, jr.day, mode, t0, t1, la0, lo0, la1, lo1, board, alight, route))
            owners.append(jr)
    legs = anonymize(raw, seed, frame, utc_offset)
    out = []
    for r, leg, jr in zip(raw, legs, owners):
        jr.device_day_id = leg.device_day_id
        s_lat, s_lon = cell_centroid(leg.start_cell, frame)
        e_lat, e_lon = cell_centroid(leg.end_cell, frame)
        out.append(RawLegRecord(leg.device_day_id, r.date, leg.mode, leg.start_time, leg.end_time,
                                s_lat, s_lon, e_lat, e_lon, leg.board_station, leg.alight_station, leg.route_id))
    return out


def _is_weekday(day: str) -> bool:
    return date.fromisoformat(day).weekday() < 5


def build_sidecar(config: SynthConfig, net: ToyNetwork, journeys, frame, utc_offset) -> dict:
    """Truth tallies computed straight from the simulated journeys."""
    ids = [s.station_id for s in net.stations]
    pos = {s: k for k, s in enumerate(ids)}
    od = np.zeros((len(ids), len(ids)), dtype=np.int64)
    hourly_b = defaultdict(lambda: defaultdict(lambda: [0] * 24))
    hourly_a = defaultdict(lambda: defaultdict(lambda: [0] * 24))
    access = {s: Counter() for s in ids}
    egress = {s: Counter() for s in ids}
    o_cells = {s: Counter() for s in ids}
    d_cells = {s: Counter() for s in ids}
    records = []
    for jr in journeys:
        first, last = jr.legs[0], jr.legs[-1]
        o_cell = snap_to_cell(first[3], first[4], frame)
        d_cell = snap_to_cell(last[5], last[6], frame)
        trains = []
        weekday = _is_weekday(jr.day)
        n_legs = len(jr.legs)
        for k, leg in enumerate(jr.legs):
            if leg[0] is not TravelMode.TRAIN:
                continue
            b, a = leg[7], leg[8]
            hb = (leg[1] + utc_offset) // 3600 % 24
            ha = (leg[2] + utc_offset) // 3600 % 24
            hourly_b[b][jr.day][hb] += 1
            hourly_a[a][jr.day][ha] += 1
            line, direction, k_trip = leg[10][:3]
            trains.append([b, a, leg[1], leg[2], trip_id(line, direction, jr.day, k_trip)])
            if weekday:
                od[pos[b], pos[a]] += 1
                access[b][jr.legs[k - 1][0].value if k > 0 else TravelMode.UNKNOWN.value] += 1
                egress[a][jr.legs[k + 1][0].value if k + 1 < n_legs else TravelMode.UNKNOWN.value] += 1
                o_cells[b][o_cell.key()] += 1
                d_cells[a][d_cell.key()] += 1
        records.append([jr.journey_id, jr.day, jr.device_tag, int(jr.opt_in), jr.device_day_id,
                        o_cell.key(), d_cell.key(), trains])

    planted = {}
    if net.planted:
        p = net.planted
        planted = {
            "signal": {"boardings": "n_origin"},
            "irrelevant": ["access_Cycling"],
            "planted_n_origin": p["n_origin"],
            "planted_n_destination": p["n_destination"],
            "planted_cycling_share": p["cycling_share"],
        }

    def nested(d):
        return {s: {day: v for day, v in sorted(d[s].items())} for s in ids if s in d}

    return {
        "scope": "aggregates cover weekdays; true_boardings/true_alightings cover every day",
        "config": config.to_dict(),
        "frame": {"lat0": frame.lat0, "lon0": frame.lon0},
        "stations": ids,
        "lines": net.lines,
        "true_boardings": nested(hourly_b),
        "true_alightings": nested(hourly_a),
        "true_od": {"stations": ids, "counts": od.tolist()},
        "true_access_modes": {s: dict(sorted(access[s].items())) for s in ids},
        "true_egress_modes": {s: dict(sorted(egress[s].items())) for s in ids},
        "true_origin_cells": {s: dict(sorted(o_cells[s].items())) for s in ids},
        "true_destination_cells": {s: dict(sorted(d_cells[s].items())) for s in ids},
        "opt_in_ids": [jr.journey_id for jr in journeys if jr.opt_in],
        "journeys": records,
        "planted_features": planted,
    }
