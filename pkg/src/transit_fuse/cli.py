"""``transit-fuse <command> --config <path> [--seed N] [--out DIR]``.

Exit status: 0 on success, 1 on bad input (files, config, too little data),
2 on an internal invariant violation or unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .chains import assemble_chains, extract_train_contexts, write_contexts
from .config import RunConfig, load_config
from .core import ConfigError, Diagnostics, InputError, InvariantError
from .coverage import compile_cell_flows, station_profiles, write_cell_flows, write_profiles
from .fusion import apc_station_totals, build_features, fit, partial_dependence, permutation_importance
from .fusion import split_frequency_importance
from .ingest import anonymize, filter_weekdays, parse_apc_file, parse_station_registry, parse_trace_file
from .patterns import (build_od, flow_distribution, scale_od, travel_distance_distribution,
                       travel_time_distribution, write_distribution, write_od)
from .stats import validation_table, write_validation
from .synthgen import generate
from .tables import write_table

log = logging.getLogger("transit_fuse")

TARGETS = ("boardings", "alightings")


class Run:
    """Shared state of one command: config, seed, output dir and lazily loaded inputs."""

    def __init__(self, config: RunConfig, seed: int | None, out: Path):
        if seed is None:
            raise ConfigError("no seed: set `seed` in the config or pass --seed")
        self.config = config
        self.seed = seed
        self.out = out
        self.diagnostics = Diagnostics()
        self.counts: dict[str, int] = {}
        self.written: list[Path] = []
        self.results: dict = {}

    @property
    def preamble(self):
        return self.config.preamble(self.seed)

    @property
    def manifest(self):
        return self.config.manifest(self.seed)

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.written.append(p)
        return p

    @cached_property
    def registry(self):
        reg = parse_station_registry(self.config.stations)
        self.counts["stations"] = len(reg)
        return reg

    @cached_property
    def apc(self):
        events = parse_apc_file(self.config.apc, self.registry, self.config.utc_offset)
        weekday = filter_weekdays(events, self.config.utc_offset)
        self.counts["apc_rows"] = len(events)
        self.counts["apc_rows_weekday"] = len(weekday)
        self.counts["apc_boardings_weekday"] = sum(e.boardings for e in weekday)
        self.counts["apc_alightings_weekday"] = sum(e.alightings for e in weekday)
        return weekday

    @cached_property
    def contexts(self):
        cfg = self.config
        records = parse_trace_file(cfg.traces, cfg.utc_offset, self.diagnostics)
        legs = anonymize(records, self.seed, cfg.frame, cfg.utc_offset)
        chains = assemble_chains(legs, cfg.dwell_gap)
        ctx = extract_train_contexts(chains, self.diagnostics)
        weekday = filter_weekdays(ctx, cfg.utc_offset)
        self.counts["trace_legs"] = len(legs)
        self.counts["trip_chains"] = len(chains)
        self.counts["train_legs"] = len(ctx)
        self.counts["train_legs_weekday"] = len(weekday)
        return weekday


def cmd_generate(run: Run) -> None:
    out = generate(run.config.synth, run.seed, run.config.frame, run.out, run.config.utc_offset, run.preamble)
    run.written.extend(out.paths.values())
    run.counts.update(journeys=len(out.journeys), opted_in=len(out.sidecar["opt_in_ids"]),
                      trace_legs=len(out.trace_records), apc_rows=len(out.apc_events),
                      stations=len(out.network.stations))


def cmd_validate(run: Run) -> None:
    cfg = run.config
    write_contexts(run.path("train_legs.csv"), run.contexts, cfg.utc_offset, run.preamble)
    reports = validation_table(run.contexts, run.apc, cfg.utc_offset, run.diagnostics)
    if not reports:
        raise InputError("no validation row could be computed: trace or counter data are empty")
    write_validation(run.path("validation.csv"), reports, run.preamble)
    run.results["validation"] = reports


def cmd_patterns(run: Run) -> None:
    od = build_od(run.contexts, sorted(run.registry))
    write_od(run.path("od.csv"), od, run.preamble)
    if run.config.od_scaling == "apc":
        boardings = {s: b for s, (b, _) in apc_station_totals(run.apc).items()}
        write_od(run.path("od_scaled.csv"), scale_od(od, boardings, run.diagnostics), run.preamble)
    summaries = {
        "travel_time": (travel_time_distribution(run.contexts, run.diagnostics), "min"),
        "travel_distance": (travel_distance_distribution(run.contexts, run.registry), "km"),
        "flow": (flow_distribution(od), "trips per OD pair"),
    }
    for name, (summary, unit) in summaries.items():
        write_distribution(run.path(f"{name}.json"), summary, run.manifest, unit)
    run.results["od"] = od
    run.results["distributions"] = summaries


def cmd_coverage(run: Run) -> None:
    cfg = run.config
    profiles = station_profiles(run.contexts, run.registry, cfg.frame)
    write_profiles(run.path("profiles.csv"), profiles, run.preamble)
    write_cell_flows(run.path("cell_flows.csv"), compile_cell_flows(run.contexts, sorted(run.registry)),
                     run.preamble)
    run.results["profiles"] = profiles


def cmd_fuse(run: Run) -> None:
    cfg = run.config
    profiles = run.results.get("profiles") or station_profiles(run.contexts, run.registry, cfg.frame)
    fm = build_features(profiles, apc_station_totals(run.apc))
    for sid, why in fm.excluded:
        run.diagnostics.warn("fusion_excluded_station", f"{sid}: {why}")
    names = fm.feature_names
    write_table(run.path("fusion_matrix.csv"), ("station_id",) + names + TARGETS,
                ((sid,) + tuple(row.tolist()) + (b, a)
                 for sid, row, b, a in zip(fm.station_ids, fm.X, fm.boardings, fm.alightings)), run.preamble)
    fit_rows, imp_rows, pdp_rows = [], [], []
    fused = {}
    for target in TARGETS:
        y = fm.target(target)
        forest = fit(fm, target, cfg.forest, run.seed)
        model = {"manifest": run.manifest, "target": target, **forest.to_dict()}
        run.path(f"model_{target}.json").write_text(json.dumps(model, separators=(",", ":")) + "\n",
                                                    encoding="utf-8")
        pfi = permutation_importance(forest, fm.X, y, cfg.importance_repeats, run.seed)
        freq = split_frequency_importance(forest)
        fit_rows.append((target, len(y), forest.r_squared(fm.X, y), forest.oob_r_squared(fm.X, y)))
        imp_rows.extend((target, n, p, f) for n, p, f in zip(names, pfi, freq))
        curves = {}
        for k, name in enumerate(names):
            curves[name] = partial_dependence(forest, fm.X, k, cfg.pdp_grid)
            pdp_rows.extend((target, name, g, v) for g, v in curves[name])
        fused[target] = (forest, pfi, freq, curves)
    write_table(run.path("fit.csv"), ("target", "n_stations", "train_r_squared", "oob_r_squared"), fit_rows,
                run.preamble)
    write_table(run.path("importance.csv"), ("target", "feature", "permutation", "split_frequency"), imp_rows,
                run.preamble)
    write_table(run.path("pdp.csv"), ("target", "feature", "grid_value", "mean_prediction"), pdp_rows,
                run.preamble)
    run.results["features"] = fm
    run.results["fusion"] = fused


def _figures(run: Run) -> None:
    from . import plotting

    fig_dir = run.out / "figures"
    res = run.results
    if "distributions" in res:
        labels = {"travel_time": ("travel time (min)", False), "travel_distance": ("distance (km)", False),
                  "flow": ("trips per OD pair", True)}
        for name, (summary, _) in res["distributions"].items():
            xlabel, log_x = labels[name]
            run.written.append(plotting.plot_distribution(summary, fig_dir / f"{name}.png", xlabel, log_x))
    if "validation" in res:
        from .stats import count_apc, count_trace, paired_series
        for target in TARGETS:
            rep = next((r for r in res["validation"]
                        if (r.spatial, r.temporal, r.event) == ("station", "weekday", target)), None)
            if rep is None:
                continue
            _, x, y, _ = paired_series(count_trace(run.contexts, "station", "weekday", target, run.config.utc_offset),
                                       count_apc(run.apc, "station", "weekday", target, run.config.utc_offset))
            run.written.append(plotting.plot_scatter(x, y, rep.slope, rep.intercept,
                                                     fig_dir / f"scaling_{target}.png",
                                                     f"trace {target}", f"counter {target}"))
    if "fusion" in res:
        names = res["features"].feature_names
        for target, (_, pfi, freq, curves) in res["fusion"].items():
            run.written.append(plotting.plot_importance(names, pfi, fig_dir / f"importance_{target}.png",
                                                        f"permutation importance, {target}"))
            run.written.append(plotting.plot_importance(names, freq, fig_dir / f"split_frequency_{target}.png",
                                                        f"split frequency, {target}"))
            top = [names[k] for k in np.argsort(-pfi, kind="stable")[:6]]
            run.written.append(plotting.plot_pdp({n: curves[n] for n in top}, fig_dir / f"pdp_{target}.png",
                                                 f"predicted {target}"))


def cmd_report(run: Run) -> None:
    """Every analysis step, figures, then ``report.txt`` with the manifest and all tables.

    A step that fails on its input is recorded as skipped; the others still run.
    """
    skipped = []
    for name, step in (("validate", cmd_validate), ("patterns", cmd_patterns), ("coverage", cmd_coverage),
                       ("fuse", cmd_fuse)):
        try:
            step(run)
        except InputError as exc:
            skipped.append((name, str(exc)))
            run.diagnostics.warn(f"report_step_skipped_{name}", str(exc))
    _figures(run)
    tables = [p for p in run.written if p.suffix in (".csv", ".json") and not p.name.startswith("model_")]
    lines = [f"# {line}" for line in run.preamble]
    lines += ["", "## config", yaml.safe_dump(run.config.raw, sort_keys=True).rstrip(), "", "## counts"]
    lines += [f"{k}: {v}" for k, v in sorted(run.counts.items())]
    lines += ["", "## warnings"]
    lines += [f"{k}: {v}" for k, v in sorted(run.diagnostics.as_dict().items())] or ["none"]
    lines += ["", "## skipped steps"]
    lines += [f"{name}: {why}" for name, why in skipped] or ["none"]
    lines += ["", "## figures"]
    lines += [str(p.relative_to(run.out)) for p in run.written if p.suffix == ".png"] or ["none"]
    for p in tables:
        body = [ln for ln in p.read_text(encoding="utf-8").splitlines() if not ln.startswith("# ")]
        lines += ["", f"## {p.name}"] + body
    report = run.path("report.txt")
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")


HELP = {"generate": "simulate a network and write counter, trace, station and truth files",
        "validate": "correlate trace counts with counter counts",
        "patterns": "OD matrix and travel time, distance and flow distributions",
        "coverage": "per-station catchment profiles and cell flows",
        "fuse": "fit ridership forests, importances and partial dependence",
        "report": "run every analysis step and write figures and report.txt"}

COMMANDS = {"generate": cmd_generate, "validate": cmd_validate, "patterns": cmd_patterns,
            "coverage": cmd_coverage, "fuse": cmd_fuse, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transit-fuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="output directory (default: paths.out of the config)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        run = Run(config, args.seed if args.seed is not None else config.seed, args.out or config.out)
        COMMANDS[args.command](run)
    except InputError as exc:
        print(f"transit-fuse: error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"transit-fuse: invariant violated: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001 - last-resort guard, reported as internal failure
        traceback.print_exc()
        return 2
    for p in run.written:
        log.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
