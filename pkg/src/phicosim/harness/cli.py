"""Command-line entry point.

Exit codes: 0 success (an unstable verdict is a successful run), 1 usage or
configuration error, 2 runtime failure. ``PHICOSIM_OUT`` sets the default
output directory (otherwise ``./out``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..errors import ConfigError, CosimError
from .experiment import run_experiment
from .output import (emit_csv, emit_events, emit_metrics, emit_report, emit_timings, load_metrics,
                     report_text)
from .scenario import load_raw, load_scenario, validate
from .sweep import sweep, sweep_csv

ENV_OUT = "PHICOSIM_OUT"
STRATEGIES = ("time-stepped", "global-event-driven", "master-slave", "model-exchange")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(arg, name) -> Path:
    base = Path(arg) if arg else Path(os.environ.get(ENV_OUT, "out")) / name
    base.mkdir(parents=True, exist_ok=True)
    return base


def _parse_values(text: str) -> list:
    out = []
    for item in (x.strip() for x in text.split(",")):
        if not item:
            continue
        try:
            v = int(item)
        except ValueError:
            try:
                v = float(item)
            except ValueError:
                v = {"true": True, "false": False}.get(item.lower(), item)
        out.append(v)
    return out


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_experiment(scenario, seed=args.seed, strategy=args.strategy,
                            pacing=False if args.no_pacing else None)
    out = _out_dir(args.out, scenario.name)
    emit_csv(result.trace, out / "trace.csv")
    emit_csv(result.exchanges, out / "exchanges.csv")
    emit_events(result.events, out / "events.csv")
    emit_metrics(result.metrics, out / "metrics.json")
    emit_report(result.metrics, out / "report.txt")
    if result.timings:
        emit_timings(result.timings, out / "timing.csv")
    if not args.no_plots:
        from .plotting import plot_run
        plot_run(result.trace, out, result.oracle, result.metrics.onset)
    print(report_text(result.metrics), end="")
    print(f"outputs written to {out}")
    return 0


def cmd_sweep(args) -> int:
    if len(args.axis) != len(args.values):
        raise ConfigError("give one --values list per --axis")
    raw = load_raw(args.scenario)
    scenario = validate(raw)
    axes = [(a, _parse_values(v)) for a, v in zip(args.axis, args.values)]
    result = sweep(raw, axes, pacing=not args.no_pacing and scenario.pacing.enabled)
    out = _out_dir(args.out, f"{scenario.name}-sweep")
    (out / "sweep.csv").write_text(sweep_csv(result), encoding="utf-8", newline="\n")
    if result.cells and not args.no_plots:
        from .plotting import plot_sweep
        plot_sweep(result.rows(), axes[0][0], args.metric, out / "sweep.png")
    for row in result.rows():
        params = " ".join(f"{k}={row[k]}" for k in result.axes)
        status = row["error"] or row["verdict"]
        print(f"[{row['index']}] {params} -> {status}")
    print(f"{len(result.cells)} cell(s) written to {out / 'sweep.csv'}")
    return 0


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({scenario.name}, hash {scenario.digest()[:12]})")
    return 0


def cmd_report(args) -> int:
    try:
        metrics = load_metrics(args.metrics)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.metrics}: {exc.strerror}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{args.metrics}: not a metrics file ({exc})") from None
    print(report_text(metrics), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phicosim", description="Co-simulation of power circuits, networks and virtual PHIL loops.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<name> or ./out/<name>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--strategy", choices=STRATEGIES)
    r.add_argument("--no-pacing", action="store_true", help="ignore the scenario's pacing section")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("scenario")
    s.add_argument("--axis", action="append", required=True, help="dotted scenario path (repeatable)")
    s.add_argument("--values", action="append", required=True, help="comma-separated values, one list per --axis")
    s.add_argument("--out")
    s.add_argument("--metric", default="rms_i_fb", help="column plotted against the first axis")
    s.add_argument("--no-pacing", action="store_true")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("report", help="print the report for a metrics.json file")
    m.add_argument("metrics")
    m.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CosimError, OSError, ArithmeticError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
