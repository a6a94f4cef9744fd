"""CSV traces, event logs, metrics JSON and text reports.

Numbers are formatted explicitly so files are byte-identical across runs:
time as seconds with 9 decimals, signals as ``%.8e`` (9 significant digits),
``,`` separators and LF line endings.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

from ..timebase import format_seconds
from ..trace import LogEntry, Trace
from .metrics import Metrics


def _num(v: float) -> str:
    return f"{v + 0.0:.8e}"  # folds -0.0 into 0.0


def _write(path, text: str) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def _unit(u: str) -> str:
    return u if u else "1"


def csv_text(trace: Trace) -> str:
    header = ["time (s)"] + [f"{n} ({_unit(trace.units[n])})" for n in trace.names]
    lines = [",".join(header)]
    cols = [trace.columns[n] for n in trace.names]
    for i, t in enumerate(trace.times):
        lines.append(",".join([format_seconds(t)] + [_num(c[i]) for c in cols]))
    return "\n".join(lines) + "\n"


def emit_csv(trace: Trace, path) -> None:
    """Write ``trace`` as CSV: header ``name (unit)``, then one line per sample."""
    _write(path, csv_text(trace))


def _value(v) -> str:
    if isinstance(v, float):
        return _num(v)
    return str(v)


def emit_events(entries: Iterable[LogEntry], path) -> None:
    lines = ["time (s),kind,source,data"]
    for e in entries:
        data = ";".join(f"{k}={_value(v)}" for k, v in e.data)
        lines.append(f"{format_seconds(e.t)},{e.kind},{e.source},{data}")
    _write(path, "\n".join(lines) + "\n")


def emit_timings(timings, path) -> None:
    lines = ["step,wall (s),budget (s),overrun,drift (s)"]
    for t in timings:
        lines.append(f"{t.step},{_num(t.wall)},{_num(t.budget)},{int(t.overrun)},{_num(t.drift)}")
    _write(path, "\n".join(lines) + "\n")


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def emit_metrics(metrics: Metrics, path) -> None:
    _write(path, json.dumps(_clean(metrics.to_dict()), indent=2, sort_keys=True) + "\n")


def load_metrics(path) -> Metrics:
    with open(path, encoding="utf-8") as fh:
        return Metrics.from_dict(json.load(fh))


def _fmt(v, unit="", digits=4) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{digits}g}{unit}"
    return f"{v}{unit}"


def report_text(m: Metrics) -> str:
    lines = [
        f"scenario        {m.name}",
        f"scenario hash   {m.scenario_hash}",
        f"seed            {m.seed}",
        f"strategy        {m.strategy}",
        "",
        f"verdict         {m.verdict}",
    ]
    if m.verdict != "stable":
        lines.append(f"onset           {_fmt(m.onset, ' s', 9)} ({m.onset_signal})")
    lines.append(f"metric window   {_fmt(m.window[0], ' s', 9)} .. {_fmt(m.window[1], ' s', 9)}")
    for sig in sorted(m.rms_error):
        lines.append(f"rms error       {sig:<8}{_fmt(m.rms_error[sig], ' %')}")
    lines += [
        f"amplitude error {_fmt(m.amplitude_error, ' %')}",
        f"phase error     {_fmt(m.phase_error, ' deg')}",
        f"loop delay      {_fmt(m.loop_delay, ' s', 9)}",
        f"residual delay  {_fmt(m.residual_delay, ' s', 9)}",
        "",
        f"messages sent   {m.messages_sent}",
        f"dropped         {m.messages_dropped}",
        f"stale commands  {m.stale_commands}",
        f"crossings       {m.crossings}",
        f"overruns        {m.overruns}",
        f"real-time factor {_fmt(m.achieved_rt_factor)}",
    ]
    for n in m.notes:
        lines.append(f"note: {n}")
    return "\n".join(lines) + "\n"


def emit_report(metrics: Metrics, path) -> None:
    """Human-readable summary of ``metrics`` including scenario hash and seed."""
    _write(path, report_text(metrics))
