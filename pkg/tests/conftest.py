from __future__ import annotations

from dataclasses import dataclass

import pytest

from transit_fuse.chains import assemble_chains, extract_train_contexts
from transit_fuse.core import Diagnostics, GridCell, Leg, ProjectionFrame, TravelMode
from transit_fuse.ingest import anonymize, filter_weekdays
from transit_fuse.synthgen import SynthConfig, generate, plant_relationship

FRAME = ProjectionFrame(60.0, 24.5)

# acceptance results, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def frame():
    return FRAME


def make_leg(device="d", mode=TravelMode.WALKING, start=0, end=60, a=(0, 0), b=(0, 0),
             board=None, alight=None, route=None):
    return Leg(device, mode, start, end, GridCell(*a), GridCell(*b), board, alight, route)


def train(device, start, end, board, alight, a=(0, 0), b=(0, 0), route="R"):
    return make_leg(device, TravelMode.TRAIN, start, end, a, b, board, alight, route)


@dataclass
class Pipeline:
    synth: object
    legs: list
    chains: list
    contexts: list  # weekday train-leg contexts
    apc: list  # weekday counter rows
    diagnostics: Diagnostics


def run_pipeline(config: SynthConfig, seed: int, weekdays_only: bool = True) -> Pipeline:
    """Generate, then push the trace through coarsening, chains and contexts in memory."""
    synth = generate(config, seed, FRAME)
    diag = Diagnostics()
    legs = anonymize(synth.trace_records, seed, FRAME)
    chains = assemble_chains(legs)
    ctx = extract_train_contexts(chains, diag)
    apc = synth.apc_events
    if weekdays_only:
        ctx = filter_weekdays(ctx)
        apc = filter_weekdays(apc)
    return Pipeline(synth, legs, chains, ctx, apc, diag)


@pytest.fixture(scope="session")
def full_observation():
    """Every passenger opted in, exact counters, 50k journeys including return trips."""
    cfg = SynthConfig(n_days=30, journeys_per_day=1620, weekend_factor=0.5, opt_in_rate=1.0,
                      apc_imputation_rate=0.0, return_trip_rate=0.3)
    return run_pipeline(cfg, seed=5)


@pytest.fixture(scope="session")
def september_run():
    """200k journeys over the 22 weekdays of September 2021 at p = 0.025."""
    cfg = SynthConfig(n_days=30, journeys_per_day=9091, weekend_factor=0.0, opt_in_rate=0.025)
    return run_pipeline(cfg, seed=7)


@pytest.fixture(scope="session")
def planted_run():
    return run_pipeline(plant_relationship(), seed=11)
