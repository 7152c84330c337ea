"""Trip-chain assembly and per-train-leg context extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    QUARTER_HOUR_S, Diagnostics, GridCell, InputError, Leg, TravelMode, TripChain,
    format_local_iso,
)
from .tables import write_table

DEFAULT_DWELL_GAP = 30 * 60


class OverlappingLegsError(InputError):
    def __init__(self, device_day_id):
        self.device_day_id = device_day_id
        super().__init__(f"overlapping legs for device-day {device_day_id}")


@dataclass(frozen=True)
class TrainLegContext:
    device_day_id: str
    board_station: str
    alight_station: str
    board_time: int
    alight_time: int
    origin_cell: GridCell
    destination_cell: GridCell
    access_mode: TravelMode
    egress_mode: TravelMode
    chain_index: int
    leg_index: int = 0
    route_id: str | None = None


def assemble_chains(legs: Sequence[Leg], dwell_gap: int = DEFAULT_DWELL_GAP,
                    overlap_tolerance: int = QUARTER_HOUR_S) -> list[TripChain]:
    """Split each device-day's legs into chains at gaps of ``dwell_gap`` seconds or more.

    Legs of one device-day must arrive in travel order (the order of the
    trace file). Because off-network legs carry quarter-hour timestamps,
    a leg may appear to start up to ``overlap_tolerance`` seconds before the
    previous one ends; such apparent overlaps count as a zero gap. Anything
    larger raises :class:`OverlappingLegsError`.
    """
    by_device = {}
    for leg in legs:
        by_device.setdefault(leg.device_day_id, []).append(leg)

    chains = []
    for device in sorted(by_device):
        group = by_device[device]
        current = [group[0]]
        for prev, nxt in zip(group, group[1:]):
            if (nxt.start_time < prev.end_time - overlap_tolerance
                    or nxt.start_time < prev.start_time - overlap_tolerance):
                raise OverlappingLegsError(device)
            if nxt.start_time - prev.end_time >= dwell_gap:
                chains.append(TripChain(device, tuple(current)))
                current = []
            current.append(nxt)
        chains.append(TripChain(device, tuple(current)))
    return chains


def extract_train_contexts(chains: Iterable[TripChain],
                           diagnostics: Diagnostics | None = None) -> list[TrainLegContext]:
    """One context per usable train leg.

    Every train leg in a chain inherits the chain's first start cell as
    origin and last end cell as destination; access/egress are the modes of
    the neighbouring legs, or Unknown at the chain boundary.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    out = []
    for ci, chain in enumerate(chains):
        legs = chain.legs
        for li, leg in enumerate(legs):
            if leg.mode is not TravelMode.TRAIN:
                continue
            if not leg.board_station or not leg.alight_station:
                diagnostics.warn("train_leg_missing_station",
                                 f"train leg of {chain.device_day_id} lacks board/alight station; skipped")
                continue
            if leg.board_station == leg.alight_station:
                diagnostics.warn("train_leg_same_station",
                                 f"train leg of {chain.device_day_id} boards and alights at {leg.board_station}")
                continue
            if leg.start_time >= leg.end_time:
                diagnostics.warn("train_leg_nonpositive_duration",
                                 f"train leg of {chain.device_day_id} has non-positive duration")
                continue
            out.append(TrainLegContext(
                device_day_id=chain.device_day_id,
                board_station=leg.board_station,
                alight_station=leg.alight_station,
                board_time=leg.start_time,
                alight_time=leg.end_time,
                origin_cell=legs[0].start_cell,
                destination_cell=legs[-1].end_cell,
                access_mode=legs[li - 1].mode if li > 0 else TravelMode.UNKNOWN,
                egress_mode=legs[li + 1].mode if li + 1 < len(legs) else TravelMode.UNKNOWN,
                chain_index=ci,
                leg_index=li,
                route_id=leg.route_id,
            ))
    return out


CONTEXT_HEADER = ("device_day_id", "chain_index", "leg_index", "route_id", "board_station", "alight_station",
                  "board_time", "alight_time", "origin_cell", "destination_cell", "access_mode", "egress_mode")


def write_contexts(path, contexts: Iterable[TrainLegContext], utc_offset: int = 0, preamble=()):
    """Debug dump of train-leg contexts, one row each."""
    write_table(path, CONTEXT_HEADER, (
        (c.device_day_id, c.chain_index, c.leg_index, c.route_id, c.board_station, c.alight_station,
         format_local_iso(c.board_time, utc_offset), format_local_iso(c.alight_time, utc_offset),
         c.origin_cell.key(), c.destination_cell.key(), c.access_mode.value, c.egress_mode.value)
        for c in contexts), preamble)
