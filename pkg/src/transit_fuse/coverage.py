"""Station catchment metrics: cell counts, Gini index, radius of gyration, mode vectors."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import MODE_ORDER, GridCell, InputError, ProjectionFrame, Station, cell_centroid, haversine_km
from .tables import read_table, write_table

MODE_NAMES = tuple(m.value for m in MODE_ORDER)
METRIC_NAMES = ("n_origin", "n_destination", "gini_origin", "gini_destination", "rg_origin", "rg_destination")
FEATURE_NAMES = (tuple(f"access_{m}" for m in MODE_NAMES) + tuple(f"egress_{m}" for m in MODE_NAMES)
                 + METRIC_NAMES)


@dataclass(frozen=True)
class CellFlowList:
    station_id: str
    side: str
    entries: tuple[tuple[GridCell, int], ...]

    def __len__(self):
        return len(self.entries)

    @property
    def counts(self) -> list[int]:
        return [n for _, n in self.entries]

    def as_dict(self) -> dict[GridCell, int]:
        return dict(self.entries)


def compile_cell_flows(contexts, stations: Sequence[str] = ()) -> dict[str, tuple[CellFlowList, CellFlowList]]:
    """Per station: origin cells of legs boarding there, destination cells of legs alighting there.

    Stations listed in ``stations`` but never used get empty lists.
    """
    origins = {s: Counter() for s in stations}
    destinations = {s: Counter() for s in stations}
    for c in contexts:
        origins.setdefault(c.board_station, Counter())[c.origin_cell] += 1
        destinations.setdefault(c.alight_station, Counter())[c.destination_cell] += 1
    out = {}
    for s in sorted(set(origins) | set(destinations)):
        out[s] = (CellFlowList(s, "origin", tuple(sorted(origins.get(s, Counter()).items()))),
                  CellFlowList(s, "destination", tuple(sorted(destinations.get(s, Counter()).items()))))
    return out


def gini(values) -> float:
    """Gini index of positive values, mean-absolute-difference definition.

    Uses the sorted-sum identity ``G = 2 sum(i x_(i)) / (n sum x) - (n + 1) / n``
    which equals ``sum_ij |x_i - x_j| / (2 n^2 mean)``.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        raise InputError("Gini index undefined for an empty list")
    if np.any(x <= 0):
        raise InputError("Gini index needs strictly positive values")
    if x[0] == x[-1]:
        return 0.0
    i = np.arange(1, n + 1)
    g = 2.0 * float(np.dot(i, x)) / (n * float(x.sum())) - (n + 1.0) / n
    return max(0.0, g)


def radius_of_gyration(entries: CellFlowList, station: Station, frame: ProjectionFrame) -> float:
    """Flow-weighted mean distance (km) from cell centroids to the station.

    This is a weighted mean, not the root-mean-square spread that the name
    usually denotes in mobility work.
    """
    if not entries.entries:
        raise InputError(f"radius of gyration undefined: no cells for {entries.station_id}")
    num = 0.0
    den = 0
    for cell, n in entries.entries:
        num += haversine_km(cell_centroid(cell, frame), station.coords) * n
        den += n
    return num / den


def _normalise(counter: Counter) -> tuple[float, ...]:
    total = sum(counter.values())
    if total == 0:
        return (0.0,) * len(MODE_ORDER)
    return tuple(counter.get(m, 0) / total for m in MODE_ORDER)


def mode_vectors(contexts, stations: Sequence[str] = ()) -> dict[str, tuple[tuple[float, ...], tuple[float, ...]]]:
    """Access/egress mode shares per station in the fixed eight-mode order."""
    access = {s: Counter() for s in stations}
    egress = {s: Counter() for s in stations}
    for c in contexts:
        access.setdefault(c.board_station, Counter())[c.access_mode] += 1
        egress.setdefault(c.alight_station, Counter())[c.egress_mode] += 1
    return {s: (_normalise(access.get(s, Counter())), _normalise(egress.get(s, Counter())))
            for s in sorted(set(access) | set(egress))}


@dataclass(frozen=True)
class StationProfile:
    station_id: str
    n_origin: int
    n_destination: int
    gini_origin: float | None
    gini_destination: float | None
    rg_origin: float | None
    rg_destination: float | None
    access_modes: tuple[float, ...]
    egress_modes: tuple[float, ...]

    @property
    def complete(self) -> bool:
        return self.n_origin > 0 and self.n_destination > 0

    def feature_vector(self) -> tuple:
        """Values in :data:`FEATURE_NAMES` order; metrics of an empty side are None."""
        return (tuple(self.access_modes) + tuple(self.egress_modes)
                + (self.n_origin, self.n_destination, self.gini_origin, self.gini_destination,
                   self.rg_origin, self.rg_destination))


def station_profiles(contexts, registry: Mapping[str, Station], frame: ProjectionFrame) -> list[StationProfile]:
    """One profile per registry station, sorted by station id."""
    contexts = list(contexts)
    unknown = ({c.board_station for c in contexts} | {c.alight_station for c in contexts}) - set(registry)
    if unknown:
        raise InputError(f"stations missing from the registry: {', '.join(sorted(unknown))}")
    flows = compile_cell_flows(contexts, list(registry))
    modes = mode_vectors(contexts, list(registry))
    profiles = []
    for sid in sorted(registry):
        o, d = flows[sid]
        station = registry[sid]
        profiles.append(StationProfile(
            station_id=sid,
            n_origin=len(o),
            n_destination=len(d),
            gini_origin=gini(o.counts) if len(o) else None,
            gini_destination=gini(d.counts) if len(d) else None,
            rg_origin=radius_of_gyration(o, station, frame) if len(o) else None,
            rg_destination=radius_of_gyration(d, station, frame) if len(d) else None,
            access_modes=modes[sid][0],
            egress_modes=modes[sid][1],
        ))
    return profiles


PROFILE_HEADER = ("station_id",) + FEATURE_NAMES


def write_profiles(path, profiles: Iterable[StationProfile], preamble=()):
    write_table(path, PROFILE_HEADER, ((p.station_id,) + p.feature_vector() for p in profiles), preamble)


def read_profiles(path) -> list[StationProfile]:
    header, rows = read_table(path)
    if tuple(header) != PROFILE_HEADER:
        raise InputError(f"{path}: unexpected profile columns")
    out = []
    for row in rows:
        v = [None if cell == "" else cell for cell in row[1:]]
        fl = [None if c is None else float(c) for c in v]
        out.append(StationProfile(row[0], int(fl[16]), int(fl[17]), fl[18], fl[19], fl[20], fl[21],
                                  tuple(fl[:8]), tuple(fl[8:16])))
    return out


CELL_FLOW_HEADER = ("station_id", "side", "cell", "count")


def write_cell_flows(path, flows: Mapping[str, tuple[CellFlowList, CellFlowList]], preamble=()):
    rows = ((fl.station_id, fl.side, cell.key(), n)
            for sid in sorted(flows) for fl in flows[sid] for cell, n in fl.entries)
    write_table(path, CELL_FLOW_HEADER, rows, preamble)
