"""Run configuration: one YAML file drives every command."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .core import ConfigError, ProjectionFrame
from .fusion.forest import ForestParams
from .synthgen import SynthConfig, plant_relationship

OD_SCALING = ("apc", "none")
_TOP_KEYS = {"seed", "paths", "frame", "dwell_gap_s", "utc_offset_s", "od_scaling", "forest", "importance",
             "pdp", "synth"}
_PATH_KEYS = {"apc", "traces", "stations", "out"}


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration.

    Relative paths are resolved against the directory holding the config file.
    """

    source: Path
    raw: dict
    seed: int | None
    apc: Path
    traces: Path
    stations: Path
    out: Path
    frame: ProjectionFrame
    dwell_gap: int = 1800
    utc_offset: int = 0
    od_scaling: str = "apc"
    forest: ForestParams = field(default_factory=ForestParams)
    importance_repeats: int = 10
    pdp_grid: int = 50
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical JSON form of the parsed YAML."""
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()

    def manifest(self, seed: int | None) -> dict:
        return {"tool": "transit-fuse", "version": __version__, "config_sha256": self.config_hash,
                "seed": seed, "frame": self.frame.describe()}

    def preamble(self, seed: int | None) -> tuple[str, ...]:
        """Header lines written (behind ``#``) at the top of every delimited output."""
        return tuple(f"{k}: {v}" for k, v in self.manifest(seed).items())


def _section(d, key, default=None) -> dict:
    v = d.get(key, default if default is not None else {})
    if not isinstance(v, dict):
        raise ConfigError(f"config section {key!r} must be a mapping")
    return v


def _int(d, key, default):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"config key {key!r} must be an integer, got {v!r}")
    return v


def build_synth(d: dict) -> SynthConfig:
    """``preset: planted`` starts from :func:`plant_relationship`; other keys override."""
    d = dict(d)
    preset = d.pop("preset", None)
    try:
        if preset is None:
            return SynthConfig.from_dict(d)
        if preset != "planted":
            raise ConfigError(f"unknown synth preset {preset!r}")
        base = plant_relationship()
        merged = {**base.to_dict(), **d}
        return SynthConfig.from_dict(merged)
    except TypeError as exc:
        raise ConfigError(f"synth config: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    base = path.resolve().parent
    paths = _section(raw, "paths")
    bad_paths = set(paths) - _PATH_KEYS
    if bad_paths:
        raise ConfigError(f"{path}: unknown path keys {sorted(bad_paths)}")
    resolved = {k: base / str(paths.get(k, default)) for k, default in
                (("apc", "data/apc.csv"), ("traces", "data/traces.csv"), ("stations", "data/stations.csv"),
                 ("out", "out"))}
    frame_d = _section(raw, "frame")
    try:
        frame = ProjectionFrame(float(frame_d["lat0"]), float(frame_d["lon0"]))
    except KeyError:
        raise ConfigError(f"{path}: frame needs lat0 and lon0") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad frame: {exc}") from None
    seed = raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError(f"{path}: seed must be a non-negative integer")
    od_scaling = raw.get("od_scaling", "apc")
    if od_scaling not in OD_SCALING:
        raise ConfigError(f"{path}: od_scaling must be one of {OD_SCALING}")
    dwell = _int(raw, "dwell_gap_s", 1800)
    if dwell <= 0:
        raise ConfigError(f"{path}: dwell_gap_s must be positive")
    offset = _int(raw, "utc_offset_s", 0)
    if abs(offset) > 14 * 3600:
        raise ConfigError(f"{path}: utc_offset_s out of range")
    try:
        forest = ForestParams(**_section(raw, "forest"))
    except TypeError as exc:
        raise ConfigError(f"{path}: forest: {exc}") from None
    repeats = _int(_section(raw, "importance"), "n_repeats", 10)
    grid = _int(_section(raw, "pdp"), "grid_size", 50)
    if repeats < 1 or grid < 2:
        raise ConfigError(f"{path}: importance.n_repeats must be >= 1 and pdp.grid_size >= 2")
    return RunConfig(source=path, raw=raw, seed=seed, frame=frame, dwell_gap=dwell, utc_offset=offset,
                     od_scaling=od_scaling, forest=forest, importance_repeats=repeats, pdp_grid=grid,
                     synth=build_synth(_section(raw, "synth")), **resolved)
