"""Domain types, grid geometry and time handling shared by every stage."""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
EARTH_RADIUS_KM = 6_371.0
CELL_SIZE_M = 250.0
QUARTER_HOUR_S = 900


class TransitFuseError(Exception):
    """Base class for all errors raised by the package."""


class InputError(TransitFuseError, ValueError):
    """Bad user input: malformed files, out-of-range values, bad config."""


class ParseError(InputError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ConfigError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class InvariantError(TransitFuseError):
    """An internal consistency check failed."""


class TravelMode(enum.Enum):
    BUS = "Bus"
    PRIVATE_CAR = "PrivateCar"
    CYCLING = "Cycling"
    SUBWAY = "Subway"
    TRAIN = "Train"
    TRAM = "Tram"
    WALKING = "Walking"
    UNKNOWN = "Unknown"

    @property
    def is_pt_vehicle(self) -> bool:
        return self in PT_VEHICLE_MODES

    @classmethod
    def parse(cls, label: str, diagnostics: Diagnostics | None = None) -> TravelMode:
        """Map a mode label onto the closed set; anything unrecognised is Unknown.

        Matching ignores case, whitespace, underscores and hyphens, so
        ``"private_car"`` and ``"PrivateCar"`` are the same mode.
        """
        key = "".join(ch for ch in label.lower() if ch.isalnum())
        mode = _MODE_LOOKUP.get(key)
        if mode is None:
            if diagnostics is not None:
                diagnostics.warn("unknown_mode", f"unrecognised mode label {label!r} mapped to Unknown")
            return cls.UNKNOWN
        return mode


MODE_ORDER = tuple(TravelMode)
PT_VEHICLE_MODES = frozenset({TravelMode.BUS, TravelMode.SUBWAY, TravelMode.TRAIN, TravelMode.TRAM})
_MODE_LOOKUP = {m.value.lower(): m for m in TravelMode}
_MODE_LOOKUP.update({"car": TravelMode.PRIVATE_CAR, "walk": TravelMode.WALKING,
                     "bicycle": TravelMode.CYCLING, "bike": TravelMode.CYCLING,
                     "metro": TravelMode.SUBWAY, "other": TravelMode.UNKNOWN})


class Diagnostics:
    """Counts non-fatal anomalies (skipped rows, coerced labels) for the run manifest."""

    def __init__(self):
        self.counts = Counter()

    def warn(self, key: str, message: str | None = None) -> None:
        self.counts[key] += 1
        if message:
            log.warning(message)

    def __getitem__(self, key):
        return self.counts[key]

    def as_dict(self) -> dict[str, int]:
        return dict(sorted(self.counts.items()))


@dataclass(frozen=True, order=True)
class GridCell:
    ix: int
    iy: int

    def key(self) -> str:
        return f"{self.ix},{self.iy}"

    @classmethod
    def from_key(cls, key: str) -> GridCell:
        ix, iy = key.split(",")
        return cls(int(ix), int(iy))


@dataclass(frozen=True)
class ProjectionFrame:
    """Local equirectangular frame anchored at (lat0, lon0)."""

    lat0: float
    lon0: float

    def __post_init__(self):
        check_coordinates(self.lat0, self.lon0)

    def to_xy(self, lat: float, lon: float) -> tuple[float, float]:
        x = EARTH_RADIUS_M * math.radians(lon - self.lon0) * math.cos(math.radians(self.lat0))
        y = EARTH_RADIUS_M * math.radians(lat - self.lat0)
        return x, y

    def to_latlon(self, x: float, y: float) -> tuple[float, float]:
        lat = self.lat0 + math.degrees(y / EARTH_RADIUS_M)
        lon = self.lon0 + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(self.lat0))))
        return lat, lon

    def describe(self) -> str:
        return f"equirectangular lat0={self.lat0!r} lon0={self.lon0!r} cell={CELL_SIZE_M:g}m"


def check_coordinates(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InputError(f"non-finite coordinate ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0:
        raise InputError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise InputError(f"longitude {lon} outside [-180, 180]")


def snap_to_cell(lat: float, lon: float, frame: ProjectionFrame) -> GridCell:
    check_coordinates(lat, lon)
    x, y = frame.to_xy(lat, lon)
    return GridCell(math.floor(x / CELL_SIZE_M), math.floor(y / CELL_SIZE_M))


def cell_centroid(cell: GridCell, frame: ProjectionFrame) -> tuple[float, float]:
    """(lat, lon) of the centre of ``cell``."""
    return frame.to_latlon((cell.ix + 0.5) * CELL_SIZE_M, (cell.iy + 0.5) * CELL_SIZE_M)


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two (lat, lon) pairs in kilometres."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


# Timestamps are integer Unix seconds. Local wall-clock time is
# UTC + utc_offset seconds; files carry local ISO-8601 without offset.

def round_to_quarter_hour(t: int, utc_offset: int = 0) -> int:
    """Nearest local quarter-hour boundary; exactly 7.5 minutes past rounds up."""
    local = t + utc_offset
    return (local + QUARTER_HOUR_S // 2) // QUARTER_HOUR_S * QUARTER_HOUR_S - utc_offset


def parse_local_iso(text: str, utc_offset: int = 0) -> int:
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is not None:
        return int(dt.timestamp())
    return int(dt.replace(tzinfo=timezone.utc).timestamp()) - utc_offset


def format_local_iso(t: int, utc_offset: int = 0) -> str:
    return datetime.fromtimestamp(t + utc_offset, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def local_datetime(t: int, utc_offset: int = 0) -> datetime:
    return datetime(1970, 1, 1) + timedelta(seconds=t + utc_offset)


def local_hour(t: int, utc_offset: int = 0) -> int:
    return (t + utc_offset) // 3600 % 24


def local_date(t: int, utc_offset: int = 0) -> str:
    return local_datetime(t, utc_offset).date().isoformat()


def is_weekday(t: int, utc_offset: int = 0) -> bool:
    return local_datetime(t, utc_offset).weekday() < 5


@dataclass(frozen=True)
class Station:
    station_id: str
    name: str
    lat: float
    lon: float

    def __post_init__(self):
        check_coordinates(self.lat, self.lon)

    @property
    def coords(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class Leg:
    device_day_id: str
    mode: TravelMode
    start_time: int
    end_time: int
    start_cell: GridCell
    end_cell: GridCell
    board_station: str | None = None
    alight_station: str | None = None
    route_id: str | None = None

    def __post_init__(self):
        if self.start_time > self.end_time:
            raise InputError(f"leg of {self.device_day_id} ends before it starts")
        # PT legs with missing stations are tolerated here; chain extraction skips them
        if not self.mode.is_pt_vehicle and (self.board_station or self.alight_station):
            raise InputError(f"{self.mode.value} leg of {self.device_day_id} carries station ids")


@dataclass(frozen=True)
class TripChain:
    device_day_id: str
    legs: tuple[Leg, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.legs:
            raise InvariantError("trip chain needs at least one leg")
        if any(leg.device_day_id != self.device_day_id for leg in self.legs):
            raise InvariantError(f"chain {self.device_day_id} mixes device-days")


@dataclass(frozen=True)
class APCEvent:
    route_id: str
    trip_id: str
    station_id: str
    timestamp: int
    boardings: int
    alightings: int
    imputed: bool = False

    def __post_init__(self):
        if self.boardings < 0 or self.alightings < 0:
            raise InputError(f"negative count at {self.station_id} on trip {self.trip_id}")
