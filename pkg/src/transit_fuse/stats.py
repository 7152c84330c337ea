"""Correlation/regression primitives and the trace-vs-counter validation harness."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as _sps

from .core import APCEvent, Diagnostics, InputError, InsufficientDataError, local_hour
from .tables import write_table

log = logging.getLogger(__name__)

SPATIAL = ("route", "station")
TEMPORAL = ("weekday", "hour")
EVENTS = ("boardings", "alightings", "both")
# row layout of the validation table: route level pools both event types
VALIDATION_ROWS = (
    ("route", "weekday", "both"),
    ("route", "hour", "both"),
    ("station", "weekday", "boardings"),
    ("station", "weekday", "alightings"),
    ("station", "hour", "boardings"),
    ("station", "hour", "alightings"),
)
SIGNIFICANCE = 0.001


class UndefinedCorrelationError(InputError):
    pass


class SingularFitError(InputError):
    pass


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("x and y must be 1-D sequences of equal length")
    if len(x) < 2:
        raise InsufficientDataError("need at least 2 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("non-finite observation")
    return x, y


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _t_pvalue(r, n):
    if n <= 2:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * _sps.t.sf(abs(t), n - 2))


def _corr(x, y):
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for zero-variance input")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def pearson(x, y) -> tuple[float, float]:
    """Product-moment correlation and its two-sided t-approximation p-value."""
    x, y = _pair(x, y)
    r = _corr(x, y)
    return r, _t_pvalue(r, len(x))


def spearman(x, y) -> tuple[float, float]:
    """Rank correlation with averaged ties and t-approximation p-value."""
    x, y = _pair(x, y)
    rho = _corr(average_ranks(x), average_ranks(y))
    return rho, _t_pvalue(rho, len(x))


def ols_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line ``y = slope * x + intercept`` and its R^2.

    A target with zero variance gets R^2 = 0 rather than NaN.
    """
    x, y = _pair(x, y)
    dx = x - x.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise SingularFitError("x has zero variance")
    slope = float(np.dot(dx, y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    return slope, intercept, r_squared(y, slope * x + intercept)


def r_squared(y, y_hat) -> float:
    y = np.asarray(y, dtype=float)
    resid = y - np.asarray(y_hat, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    return 1.0 - float(np.dot(resid, resid)) / ss_tot


@dataclass(frozen=True)
class ValidationReport:
    spatial: str
    temporal: str
    event: str
    n: int
    spearman: float
    spearman_p: float
    pearson: float
    pearson_p: float
    r_squared: float
    slope: float
    intercept: float
    dropped_units: tuple[str, ...] = ()

    @property
    def p_flags(self) -> str:
        flags = []
        for name, p in (("spearman", self.spearman_p), ("pcc", self.pearson_p)):
            if p < SIGNIFICANCE:
                flags.append(f"{name}*")
        return " ".join(flags)


def _check_axes(spatial, temporal, event):
    if spatial not in SPATIAL or temporal not in TEMPORAL or event not in EVENTS:
        raise InputError(f"bad aggregation ({spatial}, {temporal}, {event})")


def count_apc(events: Iterable[APCEvent], spatial: str, temporal: str, event: str,
              utc_offset: int = 0) -> dict[tuple, int]:
    """Aggregate counter rows into ``{(unit, [event,] [hour]): count}``.

    ``weekday`` sums over every day present; ``hour`` keys by local hour of day.
    Keys are created for zero counts as well, since the counters observed them.
    """
    _check_axes(spatial, temporal, event)
    kinds = ("boardings", "alightings") if event == "both" else (event,)
    out = defaultdict(int)
    for e in events:
        unit = e.route_id if spatial == "route" else e.station_id
        for kind in kinds:
            key = (unit,)
            if event == "both":
                key += (kind,)
            if temporal == "hour":
                key += (local_hour(e.timestamp, utc_offset),)
            out[key] += e.boardings if kind == "boardings" else e.alightings
    return dict(out)


def count_trace(contexts, spatial: str, temporal: str, event: str, utc_offset: int = 0,
                diagnostics: Diagnostics | None = None) -> dict[tuple, int]:
    """Same keys as :func:`count_apc`, counting train-leg contexts."""
    _check_axes(spatial, temporal, event)
    kinds = ("boardings", "alightings") if event == "both" else (event,)
    out = defaultdict(int)
    for c in contexts:
        if spatial == "route" and c.route_id is None:
            if diagnostics is not None:
                diagnostics.warn("train_leg_missing_route")
            continue
        for kind in kinds:
            if spatial == "route":
                unit = c.route_id
            else:
                unit = c.board_station if kind == "boardings" else c.alight_station
            key = (unit,)
            if event == "both":
                key += (kind,)
            if temporal == "hour":
                key += (local_hour(c.board_time if kind == "boardings" else c.alight_time, utc_offset),)
            out[key] += 1
    return dict(out)


def paired_series(trace_counts: Mapping[tuple, float], apc_counts: Mapping[tuple, float]):
    """Align two count tables.

    Spatial units (first key element) present on only one side are dropped
    and returned; inside shared units a key missing on one side counts 0.
    """
    trace_units = {k[0] for k in trace_counts}
    apc_units = {k[0] for k in apc_counts}
    shared = trace_units & apc_units
    dropped = tuple(sorted(map(str, trace_units ^ apc_units)))
    keys = sorted(k for k in set(trace_counts) | set(apc_counts) if k[0] in shared)
    x = np.array([trace_counts.get(k, 0) for k in keys], dtype=float)
    y = np.array([apc_counts.get(k, 0) for k in keys], dtype=float)
    return keys, x, y, dropped


def validate_counts(trace_counts, apc_counts, spatial, temporal, event) -> ValidationReport:
    keys, x, y, dropped = paired_series(trace_counts, apc_counts)
    if dropped:
        log.info("validation %s/%s/%s: dropped %d units present on one side only: %s",
                 spatial, temporal, event, len(dropped), ", ".join(dropped))
    if len(keys) < 2:
        raise InsufficientDataError(f"{spatial}/{temporal}/{event}: fewer than 2 shared keys")
    rho, rho_p = spearman(x, y)
    r, r_p = pearson(x, y)
    # counter totals regressed on trace totals: the slope is the scaling factor
    slope, intercept, r2 = ols_fit(x, y)
    return ValidationReport(spatial, temporal, event, len(keys), rho, rho_p, r, r_p, r2,
                            slope, intercept, dropped)


def validate(contexts, apc_events, spatial="station", temporal="weekday", event="boardings",
             utc_offset: int = 0, diagnostics: Diagnostics | None = None) -> ValidationReport:
    return validate_counts(count_trace(contexts, spatial, temporal, event, utc_offset, diagnostics),
                           count_apc(apc_events, spatial, temporal, event, utc_offset),
                           spatial, temporal, event)


def validation_table(contexts, apc_events, utc_offset: int = 0,
                     diagnostics: Diagnostics | None = None) -> list[ValidationReport]:
    """All six aggregation combinations; rows that lack data are logged and skipped."""
    reports = []
    for spatial, temporal, event in VALIDATION_ROWS:
        try:
            reports.append(validate(contexts, apc_events, spatial, temporal, event, utc_offset, diagnostics))
        except InputError as exc:
            log.warning("validation row %s/%s/%s skipped: %s", spatial, temporal, event, exc)
            if diagnostics is not None:
                diagnostics.warn("validation_row_skipped")
    return reports


REPORT_HEADER = ("spatial", "temporal", "event", "spearman", "pcc", "r_squared", "slope", "intercept",
                 "n", "p_flags")


def write_validation(path, reports: Sequence[ValidationReport], preamble=()):
    write_table(path, REPORT_HEADER, ((r.spatial, r.temporal, r.event, r.spearman, r.pearson, r.r_squared,
                                       r.slope, r.intercept, r.n, r.p_flags) for r in reports), preamble)
