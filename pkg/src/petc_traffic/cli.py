"""Command-line entry point and pipeline orchestration.

Stages run in the order partition, bounds, reach, abstract, simulate, verify;
asking for a stage runs everything it depends on.  Every artifact embeds the
configuration hash.  With ``--stage-cache`` the bounds table already present
in the output directory is reused when its hash matches.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialization as ser
from .abstraction import AbstractionError, assemble, export
from .bounds import BoundsError, BoundsTable, compute_bounds
from .config import ConfigError, RunConfig
from .reach import compute_reach
from .sim import ConfigMismatch, disturbance_mix, random_states, simulate_batch, verify

log = logging.getLogger("petc_traffic")

STAGES = ("partition", "bounds", "reach", "abstract", "simulate", "verify")
REPORTED_EPSILON_S = 0.15  # precision reported for the reference example

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _jobs(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("PETC_TRAFFIC_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer PETC_TRAFFIC_JOBS=%r", env)
    return 1


@dataclass
class PipelineResult:
    """Machine-readable summary, exit status and the in-memory artifacts by stage name."""

    summary: dict
    status: int
    artifacts: dict = field(default_factory=dict)


def run_pipeline(cfg: RunConfig, stages=STAGES, out: Path | str | None = None, jobs: int = 1,
                 stage_cache: bool = False, formats=("json", "dot")) -> PipelineResult:
    """Run ``stages`` (plus their prerequisites), writing artifacts to ``out`` if given."""
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    last = max(STAGES.index(s) for s in stages)
    todo = STAGES[:last + 1]
    out = Path(out) if out is not None else None
    h = cfg.hash
    system = cfg.system()
    part = cfg.partition()
    summary = {"config_hash": h, "stages": list(todo)}
    res = PipelineResult(summary, EXIT_OK, {"system": system, "partition": part})

    def write(name, obj):
        if out is not None:
            ser.write_json(out / name, {**obj, "config_hash": h})

    write("partition.json", part.dump())
    if "bounds" not in todo:
        return res

    table = None
    bpath = out / "bounds.json" if out is not None else None
    if stage_cache and bpath is not None and bpath.exists():
        cached = ser.read_json(bpath)
        if cached.get("config_hash") == h:
            table = BoundsTable.from_dict(cached)
            log.info("reusing cached bounds table %s", bpath)
        else:
            log.info("cached bounds table is stale (hash mismatch); recomputing")
    if table is None:
        t0 = time.perf_counter()
        table = compute_bounds(system, part, cfg.bounds_config(), jobs)
        table.config_hash = h
        log.info("bounds: %.1f s", time.perf_counter() - t0)
    res.artifacts["bounds"] = table
    write("bounds.json", table.to_dict())
    if out is not None and "csv" in formats:
        (out / "bounds.csv").write_text(table.to_csv(), encoding="utf-8")
    summary["l_bar"] = table.l_bar
    summary["maei_steps"] = {str(k): v for k, v in table.maei_steps().items()}
    if "reach" not in todo:
        return res

    t0 = time.perf_counter()
    reach = compute_reach(system, part, table, cfg.arc_segments, jobs, h)
    log.info("reach: %.1f s", time.perf_counter() - t0)
    res.artifacts["reach"] = reach
    write("reach.json", reach.dump())
    summary["edges"] = len(reach.edges())
    if "abstract" not in todo:
        return res

    meta = {"sigma": system.sigma, "W": system.W, "l_bar": table.l_bar, "config_hash": h}
    abs_ = assemble(part, table, reach.transitions, meta)
    res.artifacts["abstraction"] = abs_
    if out is not None:
        if "json" in formats:
            export(abs_, out / "abstraction.json", "json")
        if "dot" in formats:
            export(abs_, out / "abstraction.dot", "dot")
    summary["epsilon_s"] = abs_.epsilon
    summary["reference_epsilon_s"] = REPORTED_EPSILON_S
    summary["states"] = len(abs_.regions)
    if "simulate" not in todo:
        return res

    sim = cfg.simulation
    ss = np.random.SeedSequence(int(sim["seed"]))
    start_seq, dist_seq = ss.spawn(2)
    N = int(sim["n_traces"])
    X0 = random_states(part, N, np.random.default_rng(start_seq), sim["r_min"], sim["r_max"])
    signals, seeds = disturbance_mix(sim["disturbances"], N, system.W, dist_seq,
                                     system.plant.n_w)
    t0 = time.perf_counter()
    traces = simulate_batch(system, part, table.maei_steps(), X0, signals, float(sim["T"]),
                            int(sim["substeps"]), seeds=seeds, config_hash=h)
    log.info("simulate: %.1f s", time.perf_counter() - t0)
    res.artifacts["traces"] = traces
    n_events = sum(len(t.events) for t in traces)
    write("traces.json", {"seed": int(sim["seed"]),
                          "traces": [t.to_dict() for t in traces]})
    summary["traces"] = N
    summary["events"] = n_events
    if "verify" not in todo:
        return res

    rep = verify(traces, abs_, reach, part)
    res.artifacts["verify"] = rep
    write("verify.json", {**rep.summary(),
                          "interval_violations": [list(map(str, v)) for v in rep.interval_violations],
                          "edge_violations": [list(map(str, v)) for v in rep.edge_violations],
                          "pipe_violations": [list(map(str, v)) for v in rep.pipe_violations]})
    summary["verify"] = rep.summary()
    if not rep.passed:
        res.status = EXIT_FAIL
    return res


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--out", default=None, help="output directory for artifacts")
    common.add_argument("--format", choices=("json", "dot", "csv"), action="append",
                        help="export format; repeatable (default json and dot)")
    common.add_argument("--seed", type=int, default=None, help="simulation seed override")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default $PETC_TRAFFIC_JOBS or 1)")
    common.add_argument("--stage-cache", action="store_true",
                        help="reuse a matching bounds table from --out")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="petc-traffic",
                description="Inter-event time bounds and traffic abstractions of PETC loops.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"partition": "write the state-space partition",
             "bounds": "compute regional inter-event bounds",
             "reach": "compute flow pipes and transitions",
             "abstract": "assemble and export the abstraction",
             "simulate": "simulate the closed loop",
             "verify": "simulate and check runs against the abstraction",
             "pipeline": "run every stage"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    path = Path(args.config)
    if not path.is_file():
        parser.print_usage(sys.stderr)
        print(f"petc-traffic: error: config file not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = RunConfig.load(path)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"petc-traffic: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stages = STAGES if args.command == "pipeline" else (args.command,)
    formats = tuple(args.format) if args.format else ("json", "dot")
    try:
        res = run_pipeline(cfg, stages, args.out, _jobs(args.jobs), args.stage_cache, formats)
    except (BoundsError, AbstractionError, ConfigMismatch) as exc:
        print(f"petc-traffic: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(ser.dumps(res.summary), end="")
    return res.status


if __name__ == "__main__":
    sys.exit(main())
