"""Acceptance criteria, one test each, run at their stated tolerances.

Each test prints a single ``PASS``/``FAIL`` line with the measured value.
"""

import math
import time

import numpy as np
import pytest

from conftest import SCENARIOS, divider_raw
from phicosim.commsim import Delivered, Flow, Jitter, LinkModel, NetworkFederate, transmit
from phicosim.harness.experiment import run_experiment
from phicosim.harness.output import csv_text, emit_csv, emit_report
from phicosim.harness.scenario import load_raw, load_scenario, validate
from phicosim.pacing import PacingPolicy, pace
from phicosim.phil import Impedance, Verdict, predict_itm_stability
from phicosim.powersim import CircuitModel, L, R, V, step
from phicosim.timebase import from_seconds

MS = 1_000_000


@pytest.fixture
def verdict(request, capsys):
    """Print one PASS/FAIL line for the criterion, then fail the test if needed."""
    def check(ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}")
        assert ok, detail
    return check


def test_01_divider_matches_monolithic(verdict):
    raw = divider_raw(1.0, 2.0, value=10.0, duration=0.05)
    raw["metrics"] = {"warmup": 0.01}
    res = run_experiment(validate(raw))
    err = res.metrics.rms_error
    v_end, i_end = res.trace.column("v_ref")[-1], res.trace.column("i_fb")[-1]
    ok = (res.metrics.verdict == "stable" and err["v_ref"] < 0.5 and err["i_fb"] < 0.5
          and abs(v_end - 20 / 3) < 1e-3 and abs(i_end - 10 / 3) < 1e-3)
    verdict(ok, f"v={v_end:.4f} V i={i_end:.4f} A rms v={err['v_ref']:.2e}% i={err['i_fb']:.2e}% (< 0.5%)")


def test_02_itm_stability_boundary(verdict):
    ratios = [0.2, 0.5, 0.8, 0.95, 1.05, 1.2, 2.0, 5.0]
    dt = 50e-6
    rows, ok = [], True
    for r in ratios:
        res = run_experiment(validate(divider_raw(r, 1.0, delay=dt, duration=0.05)))
        observed = res.metrics.verdict
        pred = predict_itm_stability(Impedance(r), Impedance(1.0), f_max=1 / (2 * dt))
        expected = "stable" if r < 1 else "unstable"
        good = observed == expected and pred.verdict is not Verdict.MARGINAL and pred.verdict.value == observed
        ok &= good
        rows.append(f"{r}:{observed[0]}/{pred.verdict.value[0]}")
    verdict(ok, "ratio:time/screen " + " ".join(rows))


def test_03_dim_and_pcd_rescue(verdict):
    raw = divider_raw(2.0, 1.0, amplitude=10.0, value=0.0, duration=0.1, algorithm="dim", zstar={"r": 1.0})
    raw["metrics"] = {"warmup": 0.02}
    itm = run_experiment(validate(divider_raw(2.0, 1.0, amplitude=10.0, value=0.0, duration=0.1))).metrics
    dim = run_experiment(validate(raw)).metrics
    raw.update(phil={**raw["phil"], "algorithm": "pcd", "zab": {"r": 10.0}})
    del raw["phil"]["zstar"]
    pcd = run_experiment(validate(raw)).metrics
    dim_err = dim.rms_error.get("i_fb", math.inf)
    ok = (itm.verdict == "unstable" and dim.verdict == "stable" and dim_err < 1.0
          and pcd.verdict == "stable")
    verdict(ok, f"itm={itm.verdict} dim={dim.verdict} err={dim_err:.3g}% (< 1%) "
                f"pcd={pcd.verdict} err={pcd.rms_error.get('i_fb', math.nan):.3g}% (reported)")


def test_04_phase_advance(verdict):
    raw = load_raw(SCENARIOS / "phase_advance.toml")
    comp = run_experiment(validate(raw)).metrics
    raw["phil"]["compensator"] = {"method": "none"}
    plain = run_experiment(validate(raw)).metrics
    ok = (abs(abs(plain.phase_error) - 18.0) <= 1.0 and abs(comp.phase_error) < 1.0
          and abs(comp.amplitude_error) < 1.0)
    verdict(ok, f"uncompensated {plain.phase_error:.3f} deg (18 +/- 1); compensated "
                f"{comp.phase_error:.3f} deg (< 1), amplitude {comp.amplitude_error:.3f}% (< 1)")


def test_05_integrator_order(verdict):
    def max_err(dt):
        model = CircuitModel.from_netlist([V("vs", "s", "0", 10.0), R("r", "s", "a", 1.0),
                                           L("l", "a", "0", 1e-3)], dt=dt)
        worst = 0.0
        while model.t < 5 * MS:
            model, out = step(model, {})
            worst = max(worst, abs(out["i_l"] - 10 * (1 - math.exp(-model.t * 1e-9 / 1e-3))))
        return worst

    ratio = max_err(20e-6) / max_err(10e-6)
    verdict(3.5 <= ratio <= 4.5, f"error ratio {ratio:.4f} in [3.5, 4.5]")


def rows(trace):
    # the exchanged data only; GED also keeps its entry-order log on the trace
    return trace.times, trace.columns, trace.units


def test_06_strategy_equivalence(verdict):
    raw = load_raw(SCENARIOS / "remote_control.toml")
    raw["network"]["links"][0].update(jitter={"kind": "none"}, loss_probability=0.0)
    s = validate(raw)
    ts = run_experiment(s, strategy="time-stepped")
    ged = run_experiment(s, strategy="global-event-driven")
    ms = run_experiment(s, strategy="master-slave")
    me = run_experiment(s, strategy="model-exchange")
    same_ts = rows(ts.exchanges) == rows(ged.exchanges) and ts.trace == ged.trace
    same_ms = rows(ms.exchanges) == rows(me.exchanges) and len(ms.exchanges) > 0
    verdict(same_ts and same_ms, f"TS==GED over {len(ts.exchanges)} rows: {same_ts}; "
                                 f"MS==ME over {len(ms.exchanges)} events: {same_ms}")


def test_07_network_statistics(verdict):
    def run(seed):
        link = LinkModel("wan", jitter=Jitter("uniform", 0.0, 2e-3), loss_probability=0.3, seed=seed)
        outs = [transmit(link, k, k * 10 * MS) for k in range(10_000)]
        extra = [o.extra_delay for o in outs if isinstance(o, Delivered)]
        return outs, 1 - len(extra) / len(outs), float(np.mean(extra)) / 1e6

    outs, drop, mean_ms = run(2024)
    again = run(2024)[0] == outs
    ok = abs(drop - 0.3) <= 0.015 and abs(mean_ms - 1.0) <= 0.05 and again
    verdict(ok, f"drop {drop:.4f} (0.3 +/- 0.015), extra {mean_ms:.4f} ms (1 +/- 0.05), rerun identical {again}")


def test_08_staleness(verdict):
    n = 10_000
    link = LinkModel("wan", base_latency=8e-3, jitter=Jitter("uniform", 0.0, 6e-3), seed=8)
    flow = Flow("cmd", "wan", "meas", "cmd", "V", period=10 * MS, max_age=10 * MS)
    t_end = n * 10 * MS
    net = NetworkFederate("network", [link], [flow], t_end=t_end - 1)
    net.advance_to(t_end + 20 * MS, {"meas": 1.0})
    delivered = sum(1 for e in net.log if e.kind == "delivered")
    frac = net.stale_count / delivered
    ok = delivered == n and abs(frac - 2 / 3) <= 0.03
    verdict(ok, f"{net.stale_count}/{delivered} stale = {frac:.4f} (2/3 +/- 0.03)")


def test_09_pacing(verdict):
    t0 = time.perf_counter()
    timings = pace(lambda k: None, 1e-3, PacingPolicy(rt_factor=1.0), 1.0)
    wall = time.perf_counter() - t0
    overruns = sum(t.overrun for t in timings)

    raw = divider_raw(duration=0.1)
    raw["pacing"] = {"enabled": True}
    s = validate(raw)
    paced, free = run_experiment(s), run_experiment(s, pacing=False)
    identical = (csv_text(paced.trace) == csv_text(free.trace) and paced.timings and not free.timings)
    ok = abs(wall - 1.0) <= 0.05 and overruns == 0 and identical
    verdict(ok, f"wall {wall:.4f} s (1 +/- 0.05), overruns {overruns}, paced==unpaced trace {identical}")


def test_10_determinism(verdict, scenario_files, tmp_path):
    differing = []
    for path in scenario_files:
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{path.stem}-{rep}"
            out.mkdir()
            res = run_experiment(load_scenario(path), pacing=False)
            emit_csv(res.trace, out / "trace.csv")
            emit_csv(res.exchanges, out / "exchanges.csv")
            emit_report(res.metrics, out / "report.txt")
            blobs.append([(out / f).read_bytes() for f in ("trace.csv", "exchanges.csv", "report.txt")])
        if blobs[0] != blobs[1]:
            differing.append(path.name)
    verdict(not differing, f"{len(scenario_files)} scenarios, differing: {differing or 'none'}")
