"""Assemble federates from a scenario, run them and measure the result."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import kernel
from ..commsim import Flow, Jitter, LinkModel, NetworkFederate
from ..compensation import CompensatorConfig, window_length
from ..errors import DegenerateReference, Diverged
from ..kernel import Coupling, EmbeddedFederate
from ..pacing import Pacer, PacingPolicy
from ..phil import AmplifierModel, Impedance, PhilFederate, PhilLink, PhilLoop
from ..powersim import CircuitFederate, CircuitModel, Element, ThresholdDetector, solve_monolithic
from ..timebase import from_seconds, to_seconds
from ..trace import Trace
from .metrics import Metrics, detect_instability, phasor_errors, rms_error
from .scenario import GRID, NETWORK, CircuitSpec, PhilSpec, Scenario, federate_ports, omega, validate

log = logging.getLogger(__name__)

# loop signal -> oracle column
COMPARED = {"v_ref": "v", "i_fb": "i"}


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace  # grid recording, one row per committed power step
    metrics: Metrics
    exchanges: Trace  # kernel exchange table
    events: list = field(default_factory=list)
    oracle: Optional[Trace] = None
    timings: list = field(default_factory=list)


def elements(circuit: CircuitSpec) -> list[Element]:
    return [Element(e.kind, e.name, e.a, e.b, e.value, e.amplitude, omega(e), e.phase, e.port, e.initial)
            for e in circuit.elements]


def phil_link(s: Scenario) -> PhilLink:
    p = s.phil
    amp = p.amplifier
    amplifier = AmplifierModel.preset(
        amp.family, gain=amp.gain, slew_rate=amp.slew_rate, saturation=amp.saturation,
        **{k: v for k, v in (("delay", amp.delay), ("bandwidth", amp.bandwidth)) if v is not None})
    c = p.compensator
    comp = CompensatorConfig(c.method, c.fc, c.order, c.horizon, c.f0, c.advance)
    return PhilLink(p.algorithm, amplifier, p.sensor_delay, comp, Impedance(p.zab.r, p.zab.l),
                    Impedance(p.zstar.r, p.zstar.l), s.sim.coupling_node, s.hut.coupling_node)


def with_phil_defaults(s: Scenario) -> Scenario:
    if s.has_loop and s.phil is None:
        return s.model_copy(update={"phil": PhilSpec()})
    return s


def oracle_for(s: Scenario) -> Optional[Trace]:
    """Monolithic reference run, when the scenario splits one uncontrolled circuit."""
    if not s.has_loop:
        return None
    if any(e.port for e in s.sim.elements):
        return None
    return solve_monolithic(elements(s.sim), s.sim.coupling_node, elements(s.hut), s.hut.coupling_node,
                            from_seconds(s.duration), s.dt, sim_ground=s.sim.ground, hut_ground=s.hut.ground)


def _network(s: Scenario, seed: int) -> NetworkFederate:
    links = [LinkModel(l.id, l.base_latency, Jitter(l.jitter.kind, l.jitter.lo, l.jitter.hi, l.jitter.mean,
                                                        l.jitter.stddev),
                       l.loss_probability, seed, l.fifo) for l in s.network.links]
    flows = [Flow(f.id, f.link, f.source, f.target, f.unit, from_seconds(f.period), from_seconds(f.offset),
                  None if f.max_age is None else from_seconds(f.max_age), f.stale_policy, f.gain, f.bias)
             for f in s.network.flows]
    return NetworkFederate(NETWORK, links, flows, from_seconds(s.duration))


def _guard(limits: dict[str, float], pacer: Optional[Pacer]):
    def guard(t, out, recording):
        for name, v in out.items():
            if not math.isfinite(v):
                raise Diverged(t, name, v)
        for name, limit in limits.items():
            if abs(out[name]) > limit:
                raise Diverged(t, name, out[name])
        if pacer is not None:
            pacer.mark(t)
    return guard


def _limits(s: Scenario, oracle: Optional[Trace], grid_outputs) -> dict[str, float]:
    g = s.metrics.growth_factor
    if oracle is not None:
        out = {}
        for sig, col in COMPARED.items():
            peak = float(np.max(np.abs(oracle.column(col))))
            if peak > 0:
                out[sig] = g * peak
        return out
    if s.metrics.reference_amplitude is not None:
        return {p: g * s.metrics.reference_amplitude for p in grid_outputs}
    return {}


def _grid(s: Scenario, guard) -> tuple:
    detectors = [ThresholdDetector(t.signal, t.level, t.direction) for t in s.thresholds]
    if s.has_loop:
        loop = PhilLoop(elements(s.sim), elements(s.hut), phil_link(s), s.dt, s.sim.ground, s.hut.ground)
        return PhilFederate(GRID, loop, detectors, guard), loop
    model = CircuitModel.from_netlist(elements(s.sim), s.sim.ground, s.dt)
    return CircuitFederate(GRID, model, detectors, guard), None


def _embedded(fed) -> EmbeddedFederate:
    """Host-stepped wrapper whose state is the grid federate itself."""
    def stepper(state, inputs, dt):
        out = state.advance_to(state.time + from_seconds(dt), inputs)
        return state, out
    return EmbeddedFederate(fed.name, stepper, fed, list(fed.inputs.values()), list(fed.outputs.values()))


def _couplings(s: Scenario) -> list[Coupling]:
    out = []
    for c in s.couplings:
        sf, _, sp = c.source.partition(".")
        kf, _, kp = c.sink.partition(".")
        out.append(Coupling((sf, sp), (kf, kp), link_id=c.link))
    return out


def _finish_grid(fed, net, couplings, t_end):
    """Bring a host-stepped grid to ``t_end`` with the inputs it last saw."""
    if fed.time >= t_end:
        return
    inputs = fed.initial_inputs()
    for c in couplings:
        if c.sink[0] == fed.name and c.source[0] == NETWORK:
            inputs[c.sink[1]] = net.values[c.source[1]]
    fed.advance_to(t_end, inputs)


def run_experiment(scenario: Scenario, *, seed: int | None = None, strategy: str | None = None,
                   pacing: bool | None = None) -> RunResult:
    """Run one scenario. Divergence ends the run early with an ``unstable`` verdict."""
    s = with_phil_defaults(scenario)
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if strategy is not None:
        updates["sync"] = s.sync.model_copy(update={"strategy": strategy,
                                                    "interval": s.sync.interval if strategy == "time-stepped" else None})
    if updates:
        # re-validate so an override cannot produce an inconsistent scenario
        s = validate(s.model_copy(update=updates).model_dump(mode="json"))
    paced = s.pacing.enabled if pacing is None else pacing
    t_end = from_seconds(s.duration)

    oracle = oracle_for(s)
    pacer = Pacer(PacingPolicy(s.pacing.rt_factor, s.pacing.overrun_policy, s.pacing.max_overruns)) if paced else None
    guard = _guard(_limits(s, oracle, list(federate_ports(s)[GRID][1])), pacer)
    grid, loop = _grid(s, guard)
    net = _network(s, s.seed) if s.network is not None else None
    feds = [grid] + ([net] if net is not None else [])
    couplings = _couplings(s)
    strat = s.sync.strategy

    diverged = None
    try:
        if strat == "time-stepped":
            exchanges = kernel.run_time_stepped(feds, couplings, from_seconds(s.sync.interval or s.dt), t_end)
        elif strat == "global-event-driven":
            exchanges = kernel.run_global_event_driven(feds, couplings, t_end)
        elif strat == "master-slave":
            exchanges = kernel.run_master_slave(net, [grid], couplings, t_end)
            _finish_grid(grid, net, couplings, t_end)
        else:
            exchanges = kernel.run_model_exchange(net, _embedded(grid), couplings, t_end)
            _finish_grid(grid, net, couplings, t_end)
    except Diverged as exc:
        diverged = exc
        exchanges = exc.trace if exc.trace is not None else Trace()

    trace = grid.recording
    if diverged is not None:
        trace.truncate(diverged.t)
        exchanges.truncate(diverged.t)

    events = sorted(grid.log + (net.log if net is not None else []), key=lambda e: e.t)
    metrics = _measure(s, trace, oracle, loop, net, grid, diverged, strat)
    if pacer is not None:
        metrics.overruns = pacer.overruns
        metrics.achieved_rt_factor = pacer.achieved_rt_factor
    return RunResult(s, trace, metrics, exchanges, events, oracle, pacer.timings if pacer else [])


def warmup_seconds(s: Scenario) -> float:
    """Configured warm-up, extended to cover a phasor compensator's first period."""
    w = s.metrics.warmup
    if s.phil is not None and s.phil.compensator.method == "phase-advance":
        w = max(w, window_length(s.phil.compensator.f0, s.dt) * s.dt)
    return w


def metric_window(s: Scenario, times: list[int]) -> slice:
    start = from_seconds(warmup_seconds(s))
    if s.metrics.steady_window is not None:
        start = max(start, from_seconds(s.duration - s.metrics.steady_window))
    i0 = next((i for i, t in enumerate(times) if t >= start), len(times))
    return slice(i0, len(times))


def _measure(s, trace, oracle, loop, net, grid, diverged, strat) -> Metrics:
    m = Metrics(name=s.name, seed=s.seed, scenario_hash=s.digest(), strategy=strat)
    m.crossings = sum(1 for e in grid.log if e.kind == "crossing")
    if net is not None:
        m.messages_sent = sum(l.sent for l in net.links.values())
        m.messages_dropped = sum(l.dropped for l in net.links.values())
        m.stale_commands = net.stale_count
    if loop is not None:
        m.loop_delay = loop.loop_delay
        m.residual_delay = loop.residual_delay
    if diverged is not None:
        m.verdict = "unstable"
        m.onset = to_seconds(diverged.t)
        m.onset_signal = diverged.signal
        m.notes.append("run stopped at divergence; accuracy metrics not computed")
        return m
    if oracle is None:
        return m

    # a completed run may still violate the rule on samples the guard did not see
    step = from_seconds(s.dt)
    idx = [t // step for t in trace.times]
    for sig, col in COMPARED.items():
        ref = oracle.column(col)
        peak = float(np.max(np.abs(ref)))
        if peak > 0:
            st = detect_instability(trace.column(sig), trace.times, peak, s.metrics.growth_factor, sig)
            if not st.stable:
                m.verdict, m.onset, m.onset_signal = "unstable", to_seconds(st.onset), sig
                return m

    win = metric_window(s, trace.times)
    if win.start >= len(trace.times):
        m.notes.append("metric window is empty")
        return m
    t0, t1 = trace.times[win.start], trace.times[-1]
    m.window = (to_seconds(t0), to_seconds(t1))
    for sig, col in COMPARED.items():
        ref = oracle.column(col)[idx]
        try:
            m.rms_error[sig] = rms_error(trace.column(sig)[win], ref[win])
        except DegenerateReference:
            m.rms_error[sig] = None
            m.notes.append(f"rms_error[{sig}]: reference is identically zero")
    if s.metrics.f0 is not None:
        try:
            m.amplitude_error, m.phase_error = phasor_errors(
                trace.column("i_fb")[win], oracle.column("i")[idx][win], s.dt, s.metrics.f0)
        except DegenerateReference:
            m.notes.append("phasor errors: reference has no component at f0")
    return m
