"""Readers/writers for the counter, trace and station files, plus privacy coarsening.

All three formats are comma-separated text with an exact header row. Lines
starting with ``#`` before the header are treated as a manifest block and
skipped by the readers.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from datetime import date as _date
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    APCEvent, Diagnostics, InputError, Leg, ParseError, ProjectionFrame, Station,
    TravelMode, check_coordinates, format_local_iso, is_weekday, parse_local_iso,
    round_to_quarter_hour, snap_to_cell,
)
from .tables import write_table

APC_HEADER = ("route_id", "trip_id", "station_id", "timestamp", "boardings", "alightings", "imputed")
TRACE_HEADER = ("device_tag", "date", "mode", "start_time", "end_time", "start_lat", "start_lon",
                "end_lat", "end_lon", "board_station", "alight_station", "route_id")
STATION_HEADER = ("station_id", "name", "lat", "lon")

_TRUE = {"true", "1", "yes", "t"}
_FALSE = {"false", "0", "no", "f"}


@dataclass(frozen=True)
class RawLegRecord:
    """One trace-file row before coarsening."""

    device_tag: str
    date: str
    mode: TravelMode
    start_time: int
    end_time: int
    start_lat: float
    start_lon: float
    end_lat: float
    end_lon: float
    board_station: str | None = None
    alight_station: str | None = None
    route_id: str | None = None


def _data_rows(path, header):
    """Yield (line_number, fields) for each data row after validating the header."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path}: not UTF-8 text") from None
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        lineno += 1
    if lineno >= len(lines) or not lines[lineno].strip():
        raise ParseError(path, lineno + 1, "missing header row")
    got = tuple(f.strip() for f in lines[lineno].rstrip("\r").split(","))
    if got != header:
        raise ParseError(path, lineno + 1, f"header {','.join(got)!r} does not match {','.join(header)!r}")
    for i in range(lineno + 1, len(lines)):
        line = lines[i].rstrip("\r")
        if not line.strip():
            continue
        fields = next(csv.reader([line]))
        if len(fields) != len(header):
            raise ParseError(path, i + 1, f"expected {len(header)} fields, got {len(fields)}")
        yield i + 1, [f.strip() for f in fields]


def _parse_int(path, lineno, name, text):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, lineno, f"{name} {text!r} is not an integer") from None


def _parse_float(path, lineno, name, text):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"{name} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise ParseError(path, lineno, f"{name} is not finite")
    return value


def _parse_time(path, lineno, name, text, utc_offset):
    try:
        return parse_local_iso(text, utc_offset)
    except ValueError:
        raise ParseError(path, lineno, f"{name} {text!r} is not ISO-8601") from None


def parse_apc_file(path, stations=None, utc_offset: int = 0) -> list[APCEvent]:
    """Read a passenger-counter file.

    Parameters
    ----------
    path : path-like
        File with the ``route_id,...,imputed`` header.
    stations : container of str, optional
        Known station ids. Rows naming any other station make the whole
        parse fail with an error listing the unknown ids.
    utc_offset : int
        Seconds to subtract from the local timestamps to get UTC.
    """
    events = []
    unknown = set()
    for lineno, f in _data_rows(path, APC_HEADER):
        route_id, trip_id, station_id, ts, b, a, imputed = f
        if not route_id or not trip_id or not station_id:
            raise ParseError(path, lineno, "empty identifier field")
        boardings = _parse_int(path, lineno, "boardings", b)
        alightings = _parse_int(path, lineno, "alightings", a)
        if boardings < 0 or alightings < 0:
            raise ParseError(path, lineno, "negative passenger count")
        flag = imputed.lower()
        if flag not in _TRUE | _FALSE:
            raise ParseError(path, lineno, f"imputed {imputed!r} is not a boolean")
        if stations is not None and station_id not in stations:
            unknown.add(station_id)
        events.append(APCEvent(route_id, trip_id, station_id,
                               _parse_time(path, lineno, "timestamp", ts, utc_offset),
                               boardings, alightings, flag in _TRUE))
    if unknown:
        raise InputError(f"{path}: unknown station ids: {', '.join(sorted(unknown))}")
    return events


def parse_trace_file(path, utc_offset: int = 0, diagnostics: Diagnostics | None = None) -> list[RawLegRecord]:
    records = []
    for lineno, f in _data_rows(path, TRACE_HEADER):
        tag, day, mode, t0, t1, slat, slon, elat, elon, board, alight, route = f
        if not tag:
            raise ParseError(path, lineno, "empty device_tag")
        try:
            _date.fromisoformat(day)
        except ValueError:
            raise ParseError(path, lineno, f"date {day!r} is not ISO-8601") from None
        start = _parse_time(path, lineno, "start_time", t0, utc_offset)
        end = _parse_time(path, lineno, "end_time", t1, utc_offset)
        if start > end:
            raise ParseError(path, lineno, "end_time before start_time")
        coords = [_parse_float(path, lineno, n, v) for n, v in
                  zip(("start_lat", "start_lon", "end_lat", "end_lon"), (slat, slon, elat, elon))]
        try:
            check_coordinates(coords[0], coords[1])
            check_coordinates(coords[2], coords[3])
        except InputError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        records.append(RawLegRecord(tag, day, TravelMode.parse(mode, diagnostics), start, end, *coords,
                                    board or None, alight or None, route or None))
    return records


def parse_station_registry(path) -> dict[str, Station]:
    stations = {}
    for lineno, (sid, name, lat, lon) in _data_rows(path, STATION_HEADER):
        if sid in stations:
            raise ParseError(path, lineno, f"duplicate station_id {sid!r}")
        try:
            stations[sid] = Station(sid, name, _parse_float(path, lineno, "lat", lat),
                                    _parse_float(path, lineno, "lon", lon))
        except InputError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, lineno, str(exc)) from None
    return stations


def write_apc_file(path, events: Iterable[APCEvent], utc_offset: int = 0, preamble=()):
    rows = ((e.route_id, e.trip_id, e.station_id, format_local_iso(e.timestamp, utc_offset),
             e.boardings, e.alightings, e.imputed) for e in events)
    write_table(path, APC_HEADER, rows, preamble)


def write_trace_file(path, records: Iterable[RawLegRecord], utc_offset: int = 0, preamble=()):
    rows = ((r.device_tag, r.date, r.mode.value, format_local_iso(r.start_time, utc_offset),
             format_local_iso(r.end_time, utc_offset), r.start_lat, r.start_lon, r.end_lat, r.end_lon,
             r.board_station, r.alight_station, r.route_id) for r in records)
    write_table(path, TRACE_HEADER, rows, preamble)


def write_station_registry(path, stations: Iterable[Station], preamble=()):
    write_table(path, STATION_HEADER, ((s.station_id, s.name, s.lat, s.lon) for s in stations), preamble)


def device_day_id(device_tag: str, day: str, seed: int) -> str:
    """Keyed hash of (device, date): stable within a day, unlinkable across days."""
    h = hashlib.blake2b(f"{device_tag}\x1f{day}".encode(), key=str(seed).encode(), digest_size=10)
    return h.hexdigest()


def anonymize(records: Sequence[RawLegRecord], seed: int, frame: ProjectionFrame,
              utc_offset: int = 0) -> list[Leg]:
    """Coarsen raw trace records into legs.

    Device tags become per-day opaque ids, every endpoint is snapped to its
    grid cell, and legs outside PT vehicles get quarter-hour timestamps.
    Record order is preserved.
    """
    ids = {}
    legs = []
    for r in records:
        key = (r.device_tag, r.date)
        if key not in ids:
            ids[key] = device_day_id(r.device_tag, r.date, seed)
        if r.mode.is_pt_vehicle:
            start, end = r.start_time, r.end_time
            board, alight, route = r.board_station, r.alight_station, r.route_id
        else:
            start = round_to_quarter_hour(r.start_time, utc_offset)
            end = round_to_quarter_hour(r.end_time, utc_offset)
            board = alight = route = None
        legs.append(Leg(ids[key], r.mode, start, end,
                        snap_to_cell(r.start_lat, r.start_lon, frame),
                        snap_to_cell(r.end_lat, r.end_lon, frame),
                        board, alight, route))
    return legs


def _record_time(item):
    for attr in ("timestamp", "start_time", "board_time"):
        if hasattr(item, attr):
            return getattr(item, attr)
    raise TypeError(f"cannot determine a timestamp for {type(item).__name__}")


def filter_weekdays(items, utc_offset: int = 0) -> list:
    """Keep Monday-Friday items, judged by local time of their first timestamp."""
    return [it for it in items if is_weekday(_record_time(it), utc_offset)]
