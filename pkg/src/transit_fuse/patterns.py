"""Within-network patterns: OD matrix, travel time, distance and flow distributions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Diagnostics, InputError, Station, haversine_km
from .tables import write_json, write_table

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ODMatrix:
    stations: tuple[str, ...]
    counts: np.ndarray

    def index(self, station_id: str) -> int:
        return self.stations.index(station_id)

    def __getitem__(self, pair):
        i, j = pair
        return self.counts[self.index(i), self.index(j)]

    def row_sums(self) -> dict[str, float]:
        return dict(zip(self.stations, self.counts.sum(axis=1).tolist()))

    def column_sums(self) -> dict[str, float]:
        return dict(zip(self.stations, self.counts.sum(axis=0).tolist()))


@dataclass(frozen=True)
class DistributionSummary:
    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def defined(self) -> bool:
        return self.n > 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.n else float("nan")

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if self.n else float("nan")

    def as_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean if self.n else None, "max": self.max if self.n else None,
                "bins": {"edges": self.bin_edges.tolist(), "counts": self.counts.tolist()}}


def _summary(values, edges) -> DistributionSummary:
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    counts = np.histogram(values, bins=edges)[0] if len(edges) >= 2 else np.zeros(0, dtype=int)
    return DistributionSummary(values, edges, counts.astype(int))


def _linear_edges(values, width):
    if len(values) == 0:
        return []
    lo = math.floor(min(values) / width) * width
    hi = (math.floor(max(values) / width) + 1) * width
    return np.arange(lo, hi + width / 2, width)


def _log_edges(values, per_decade=4):
    if len(values) == 0:
        return []
    lo = math.floor(math.log10(min(values)) * per_decade)
    hi = math.floor(math.log10(max(values)) * per_decade) + 1
    return 10.0 ** (np.arange(lo, hi + 1) / per_decade)


def build_od(contexts, stations: Sequence[str] | None = None) -> ODMatrix:
    """Count train legs by (board, alight) station pair."""
    if stations is None:
        stations = sorted({c.board_station for c in contexts} | {c.alight_station for c in contexts})
    stations = tuple(stations)
    pos = {s: i for i, s in enumerate(stations)}
    counts = np.zeros((len(stations), len(stations)), dtype=np.int64)
    for c in contexts:
        try:
            counts[pos[c.board_station], pos[c.alight_station]] += 1
        except KeyError as exc:
            raise InputError(f"station {exc.args[0]!r} not in the OD station list") from None
    return ODMatrix(stations, counts)


def scale_od(od: ODMatrix, apc_boardings: Mapping[str, float],
             diagnostics: Diagnostics | None = None) -> ODMatrix:
    """Split each station's counted boardings over destinations in trace proportions."""
    rows = od.counts.sum(axis=1)
    missing = [s for s, r in zip(od.stations, rows) if r > 0 and s not in apc_boardings]
    if missing:
        raise InputError(f"no counter boardings for stations: {', '.join(missing)}")
    scaled = np.zeros(od.counts.shape, dtype=float)
    for i, s in enumerate(od.stations):
        if rows[i] == 0:
            if apc_boardings.get(s, 0):
                log.warning("station %s has counter boardings but no trace departures; row left at zero", s)
                if diagnostics is not None:
                    diagnostics.warn("od_zero_row")
            continue
        scaled[i] = apc_boardings[s] * (od.counts[i] / rows[i])
    return ODMatrix(od.stations, scaled)


def travel_time_distribution(contexts, diagnostics: Diagnostics | None = None) -> DistributionSummary:
    """Alight minus board time, in minutes, on 1-minute bins."""
    minutes = []
    for c in contexts:
        duration = c.alight_time - c.board_time
        if duration <= 0:
            if diagnostics is not None:
                diagnostics.warn("nonpositive_travel_time")
            log.warning("context of %s has non-positive travel time; excluded", c.device_day_id)
            continue
        minutes.append(duration / 60.0)
    return _summary(minutes, _linear_edges(minutes, 1.0))


def travel_distance_distribution(contexts, registry: Mapping[str, Station]) -> DistributionSummary:
    """Great-circle distance between board and alight stations, on 1-km bins."""
    km = []
    for c in contexts:
        try:
            a, b = registry[c.board_station], registry[c.alight_station]
        except KeyError as exc:
            raise InputError(f"station {exc.args[0]!r} missing from the registry") from None
        km.append(haversine_km(a.coords, b.coords))
    return _summary(km, _linear_edges(km, 1.0))


def flow_distribution(od: ODMatrix) -> DistributionSummary:
    """Nonzero OD entries, on quarter-decade logarithmic bins."""
    flows = od.counts[od.counts > 0].astype(float)
    return _summary(flows, _log_edges(flows))


def write_od(path, od: ODMatrix, preamble=()):
    write_table(path, ("station",) + od.stations,
                ((s,) + tuple(row.tolist()) for s, row in zip(od.stations, od.counts)), preamble)


def write_distribution(path, summary: DistributionSummary, manifest=None, unit=None):
    body = summary.as_dict()
    if unit:
        body = {"unit": unit, **body}
    write_json(path, body, manifest)
