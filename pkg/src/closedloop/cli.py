"""Command-line front end: ``closedloop run | batch | sweep``."""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import run_single, run_traces, summarize, with_parameter

OUT_ENV = "CLOSEDLOOP_OUT"
PARAM_ALIASES = {"tr": "t_r_over_dt", "gamma": "noise_sigma"}


def parse_grid(spec: str) -> list:
    """``start:step:end`` inclusive; ``a:s:a`` gives the single point ``a``."""
    try:
        start, step, end = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must look like start:step:end, got {spec!r}") from None
    if min(start, end) < 0 or not all(np.isfinite([start, step, end])):
        raise ValueError("grid values must be finite and nonnegative")
    if end < start:
        raise ValueError("grid end must be >= start")
    if end == start:
        return [start]
    if step <= 0:
        raise ValueError("grid step must be > 0")
    n = int(np.floor((end - start) / step + 1e-9))
    return [round(start + k * step, 12) for k in range(n + 1)]


def _experiment(args):
    cfg = io.load_config(args.config) if args.config else {}
    exp = io.experiment_from_config(cfg, args.algorithm)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        if args.runs < 1:
            raise io.ConfigError("--runs must be >= 1")
        changes["runs"] = args.runs
    if args.sub_steps is not None:
        changes["distortion"] = dataclasses.replace(exp.distortion, sub_steps=args.sub_steps)
    return exp.replace(**changes) if changes else exp, cfg


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if "output" in cfg and "dir" in cfg["output"]:
        return Path(cfg["output"]["dir"])
    return Path(os.environ.get(OUT_ENV, "results"))


def _write_run(out: Path, exp, trace, stem: str):
    io.write_trace(out / f"{stem}.csv", trace)
    if trace.terminal_pulse is not None:
        io.write_pulse(out / f"{stem}_pulse.csv", exp.system, trace.terminal_pulse)


def _summary_line(trace) -> str:
    return (f"final_measured={io.fmt(trace.final_measured)} final_exact={io.fmt(trace.final_exact)} "
            f"evals={trace.total_evals} stop={trace.stop_reason}")


def cmd_run(args) -> int:
    exp, cfg = _experiment(args)
    out = _out_dir(args, cfg)
    trace = run_single(exp, args.run_index)
    _write_run(out, exp, trace, "trace")
    print(_summary_line(trace))
    return 0


def _batch(exp, out: Path, workers: int, point: int = 0):
    traces = run_traces(exp, point, workers)
    for t in traces:
        _write_run(out / "runs", exp, t, f"trace_{t.run_index:04d}")
    summary = summarize(traces, exp.stopping.threshold_infidelity or 0.0)
    io.write_summary(out / "summary.json", summary)
    return summary


def cmd_batch(args) -> int:
    exp, cfg = _experiment(args)
    out = _out_dir(args, cfg)
    s = _batch(exp, out, args.threads)
    print(f"runs={s.runs} success_rate={io.fmt(s.success_rate)} "
          f"mean_evals={io.fmt(s.mean_evals) if s.mean_evals is not None else 'na'} "
          f"mean_final_exact={io.fmt(s.mean_final_exact)}")
    return 0


def cmd_sweep(args) -> int:
    exp, cfg = _experiment(args)
    values = parse_grid(args.grid)
    param = PARAM_ALIASES[args.param]
    out = _out_dir(args, cfg)
    rows = []
    for p, v in enumerate(values):
        point = with_parameter(exp, param, v)
        s = _batch(point, out / f"point_{p:02d}", args.threads, point=p)
        rows.append((v, s))
        print(f"{args.param}={io.fmt(v)} success_rate={io.fmt(s.success_rate)} "
              f"mean_evals={io.fmt(s.mean_evals) if s.mean_evals is not None else 'na'}")
    io.atomic_write(out / "sweep.csv", io.sweep_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="closedloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="experiment config (JSON)")
        p.add_argument("--algorithm", choices=("grape", "nmplus", "de"))
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        p.add_argument("--sub-steps", type=int, dest="sub_steps", help="distortion sub-slices per slice")
        p.add_argument("--threads", type=int, default=1, help="worker processes")

    p = sub.add_parser("run", help="one optimisation run")
    common(p)
    p.add_argument("--run-index", type=int, default=1, dest="run_index")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="seeded batch of runs plus summary")
    common(p)
    p.add_argument("--runs", type=int)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("sweep", help="batch per grid point of t_r/dt or noise sigma")
    common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--param", choices=tuple(PARAM_ALIASES), required=True)
    p.add_argument("--grid", required=True, help="start:step:end")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "sweep":
            parse_grid(args.grid)
        return args.func(args)
    except (io.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
