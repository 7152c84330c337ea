"""Station feature matrix for the ridership model."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..core import APCEvent, InsufficientDataError
from ..coverage import FEATURE_NAMES, StationProfile

log = logging.getLogger(__name__)

MIN_STATIONS = 10


@dataclass(frozen=True)
class FeatureMatrix:
    station_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    X: np.ndarray
    boardings: np.ndarray
    alightings: np.ndarray
    excluded: tuple[tuple[str, str], ...] = ()  # (station_id, reason)

    def target(self, name: str) -> np.ndarray:
        if name == "boardings":
            return self.boardings
        if name == "alightings":
            return self.alightings
        raise ValueError(f"unknown target {name!r}")

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]


def apc_station_totals(events: Iterable[APCEvent]) -> dict[str, tuple[int, int]]:
    """Summed (boardings, alightings) per station."""
    acc = defaultdict(lambda: [0, 0])
    for e in events:
        acc[e.station_id][0] += e.boardings
        acc[e.station_id][1] += e.alightings
    return {s: (b, a) for s, (b, a) in sorted(acc.items())}


def build_features(profiles: Sequence[StationProfile], apc_totals: Mapping[str, tuple[int, int]],
                   min_stations: int = MIN_STATIONS) -> FeatureMatrix:
    """Stack complete station profiles that also have counter totals.

    Stations without trace observations on either side, or without counter
    data, are left out and listed in ``excluded``.
    """
    ids, rows, b, a, excluded = [], [], [], [], []
    for p in sorted(profiles, key=lambda p: p.station_id):
        if p.station_id not in apc_totals:
            excluded.append((p.station_id, "no counter data"))
        elif not p.complete:
            excluded.append((p.station_id, "no trace observations"))
        else:
            ids.append(p.station_id)
            rows.append([float(v) for v in p.feature_vector()])
            b.append(apc_totals[p.station_id][0])
            a.append(apc_totals[p.station_id][1])
    for sid, why in excluded:
        log.info("feature matrix: excluded %s (%s)", sid, why)
    if len(ids) < min_stations:
        raise InsufficientDataError(f"{len(ids)} stations usable for fusion, need {min_stations}")
    return FeatureMatrix(tuple(ids), FEATURE_NAMES, np.array(rows, dtype=float).reshape(len(ids), len(FEATURE_NAMES)),
                         np.array(b, dtype=float), np.array(a, dtype=float), tuple(excluded))
