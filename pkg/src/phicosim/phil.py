"""Virtual power-hardware-in-the-loop: amplifier, sensors and interface algorithms.

A PHIL loop splits one circuit into a simulated side (``sim``) and a
hardware-under-test side (``hut``) joined at a coupling node on each side.
The power interface carries a forward quantity from the simulator through
the amplifier to the HuT and feeds a measured quantity back through sensor
delay and an optional compensator. Port equations per algorithm:

``itm-voltage``
    sim: current source ``i_fb`` from the coupling node to ground.
    hut: amplifier voltage source at the port. Feedback: ``i_fb = i_hut``.
``itm-current``
    sim: voltage source ``v_fb`` at the coupling node; its current is the
    forward command. hut: amplifier current source into the port.
    Feedback: ``v_fb = v_port``.
``pcd``
    sim: linking impedance ``Zab`` from the coupling node to a voltage
    source ``v_fb``. hut: amplifier voltage source behind its own copy of
    ``Zab``. Feedback: ``v_fb = v_port`` (the HuT terminal voltage).
``dim``
    sim: damping branch ``Z*`` from the coupling node to ground in parallel
    with a current source ``j``. hut: as ``itm-voltage``. Feedback:
    ``j = i_hut - i_Z*(v_port)`` where ``i_Z*`` is the current a replica of
    ``Z*`` would draw at the measured voltage, so ``i_fb = i_hut`` once the
    two sides agree and ``j`` vanishes when ``Z*`` equals the HuT impedance.

A zero ``Zab`` or ``Z*`` removes the duplicated / damping branch and the
loop runs as ``itm-voltage``.

Each step solves the scalar loop equation ``x = g(x)`` for the value fed
back into the simulated side at the new time. With any delay in the loop
``g`` does not depend on ``x``; without delay the loop is algebraic and is
solved exactly (it is affine unless amplifier limits are active).
"""

from __future__ import annotations

import dataclasses
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .compensation import CompensatorConfig, compensate, initial_state
from .errors import ConfigError, DegenerateImpedance, NonFinite
from .kernel import ContinuousFederate, Port
from .powersim import DEFAULT_DT, CircuitModel, Element, I, L, R, V, build_state_space, detect_threshold
from .trace import Trace, log_entry

ALGORITHMS = ("itm-voltage", "itm-current", "pcd", "dim")

# artifact defaults encoding the qualitative ranking linear < switched-mode < generator delay
FAMILY_PRESETS = {
    "linear": {"delay": 10e-6, "bandwidth": 20e3},
    "switched-mode": {"delay": 100e-6, "bandwidth": 2e3},
    "generator": {"delay": 2e-3, "bandwidth": 500.0},
}

IDEAL_BANDWIDTH = 1e6


@dataclass(frozen=True)
class AmplifierModel:
    """Power amplifier: gain, pure delay, first-order bandwidth, slew and saturation.

    ``delay`` in seconds, ``bandwidth`` in Hz, ``slew_rate`` in units/s,
    ``saturation`` as a symmetric bound.
    """

    family: str = "linear"
    gain: float = 1.0
    delay: float = 0.0
    bandwidth: float = IDEAL_BANDWIDTH
    slew_rate: float | None = None
    saturation: float | None = None

    def __post_init__(self):
        if self.family not in FAMILY_PRESETS:
            raise ConfigError(f"unknown amplifier family {self.family!r}")
        if not self.gain > 0:
            raise ConfigError("amplifier gain must be > 0")
        if self.delay < 0:
            raise ConfigError("amplifier delay must be >= 0")
        if not self.bandwidth > 0:
            raise ConfigError("amplifier bandwidth must be > 0")
        if self.slew_rate is not None and not self.slew_rate > 0:
            raise ConfigError("slew_rate must be > 0")
        if self.saturation is not None and not self.saturation > 0:
            raise ConfigError("saturation must be > 0")

    @classmethod
    def preset(cls, family: str, **overrides) -> "AmplifierModel":
        if family not in FAMILY_PRESETS:
            raise ConfigError(f"unknown amplifier family {family!r}")
        return cls(family=family, **{**FAMILY_PRESETS[family], **overrides})

    @classmethod
    def ideal(cls, delay: float = 0.0) -> "AmplifierModel":
        return cls(family="linear", delay=delay, bandwidth=IDEAL_BANDWIDTH)

    def delay_samples(self, dt: float) -> int:
        return int(round(self.delay / dt))


@dataclass(frozen=True)
class AmplifierState:
    fifo: tuple[float, ...] = ()
    filtered: float = 0.0
    slewed: float = 0.0


def amplifier_initial(model: AmplifierModel, dt: float) -> AmplifierState:
    return AmplifierState(fifo=(0.0,) * model.delay_samples(dt))


def amplifier_step(model: AmplifierModel, state: AmplifierState, x: float,
                   dt: float) -> tuple[AmplifierState, float]:
    """``saturate(slew_limit(lowpass(gain * delayed(x))))``.

    The delay is a FIFO of ``round(delay / dt)`` samples. The low-pass is the
    exact discretisation of a first-order lag driven by the current sample,
    so an unbounded bandwidth is a pass-through.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if state.fifo:
        delayed = state.fifo[0]
        fifo = state.fifo[1:] + (x,)
    else:
        delayed, fifo = x, ()
    alpha = math.exp(-2.0 * math.pi * model.bandwidth * dt)
    filtered = alpha * state.filtered + (1.0 - alpha) * model.gain * delayed
    out = filtered
    if model.slew_rate is not None:
        limit = model.slew_rate * dt
        out = state.slewed + min(max(out - state.slewed, -limit), limit)
    slewed = out
    if model.saturation is not None:
        out = min(max(out, -model.saturation), model.saturation)
    return AmplifierState(fifo, filtered, slewed), out


@dataclass(frozen=True)
class Impedance:
    """Series R-L pair."""

    r: float = 0.0
    l: float = 0.0

    def __post_init__(self):
        if self.r < 0 or self.l < 0:
            raise ConfigError("impedance components must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.r == 0 and self.l == 0

    def at(self, omega: float) -> complex:
        return complex(self.r, omega * self.l)


@dataclass(frozen=True)
class PhilLink:
    """Configuration of the power interface between the two circuits."""

    algorithm: str = "itm-voltage"
    amplifier: AmplifierModel = field(default_factory=AmplifierModel)
    sensor_delay: float = 0.0
    compensator: CompensatorConfig = field(default_factory=CompensatorConfig)
    zab: Impedance = field(default_factory=Impedance)
    zstar: Impedance = field(default_factory=Impedance)
    sim_node: str = "pcc"
    hut_node: str = "pcc"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown interface algorithm {self.algorithm!r}")
        if self.sensor_delay < 0:
            raise ConfigError("sensor_delay must be >= 0")

    @property
    def effective_algorithm(self) -> str:
        if self.algorithm == "pcd" and self.zab.is_zero:
            return "itm-voltage"
        if self.algorithm == "dim" and self.zstar.is_zero:
            return "itm-voltage"
        return self.algorithm


@dataclass(frozen=True)
class LoopSample:
    t: int
    v_ref: float
    v_amp: float
    i_hut: float
    i_fb: float


LOOP_SIGNALS = (("v_ref", "V"), ("v_amp", "V"), ("i_hut", "A"), ("i_fb", "A"))

# interface element names; user netlists must not use the "__" prefix
IFC, AMP, ZA, ZB, ZS_R, ZS_L = "__ifc", "__amp", "__zab_r", "__zab_l", "__zs_r", "__zs_l"


def _series(prefix_r, prefix_l, a, b, z: Impedance, mid):
    if z.r > 0 and z.l > 0:
        return [R(prefix_r, a, mid, z.r), L(prefix_l, mid, b, z.l)]
    if z.l > 0:
        return [L(prefix_l, a, b, z.l)]
    return [R(prefix_r, a, b, z.r)]


def _first_current(elements, names):
    present = {e.name for e in elements}
    for n in names:
        if n in present:
            return f"i_{n}"
    raise ConfigError("no branch to measure")


def build_loop_circuits(sim: Sequence[Element], hut: Sequence[Element], link: PhilLink,
                        sim_ground: str = "0", hut_ground: str = "0"):
    """Insert the interface elements for ``link`` into both netlists.

    Returns ``(sim_elements, hut_elements, probes)`` where ``probes`` names the
    model outputs holding ``v_ref``, ``fwd``, ``i_fb`` (sim side) and
    ``v_port``, ``i_hut`` (hut side).
    """
    for e in list(sim) + list(hut):
        if e.name.startswith("__"):
            raise ConfigError(f"element names starting with '__' are reserved ({e.name!r})")
    algo = link.effective_algorithm
    sn, hn = link.sim_node, link.hut_node
    if sn == sim_ground or hn == hut_ground:
        raise ConfigError("coupling nodes must not be ground")
    sim_el, hut_el = list(sim), list(hut)
    probes = {"v_ref": f"v_{sn}", "v_port": f"v_{hn}"}
    if algo == "itm-voltage":
        sim_el.append(I(IFC, sn, sim_ground, port=IFC))
        hut_el.append(V(AMP, hn, hut_ground, port=AMP))
        probes.update(fwd=f"v_{sn}", i_fb=f"i_{IFC}", i_hut=f"i_{AMP}", i_hut_sign=-1.0)
    elif algo == "itm-current":
        sim_el.append(V(IFC, sn, sim_ground, port=IFC))
        hut_el.append(I(AMP, hut_ground, hn, port=AMP))
        probes.update(fwd=f"i_{IFC}", i_fb=f"i_{IFC}", i_hut=f"i_{AMP}", i_hut_sign=1.0)
    elif algo == "pcd":
        sim_el += _series(ZA, ZB, sn, "__pcd_s", link.zab, "__pcd_sm")
        sim_el.append(V(IFC, "__pcd_s", sim_ground, port=IFC))
        hut_el.append(V(AMP, "__pcd_h", hut_ground, port=AMP))
        zab_h = _series(ZA, ZB, "__pcd_h", hn, link.zab, "__pcd_hm")
        hut_el += zab_h
        probes.update(fwd=f"v_{sn}", i_fb=_first_current(sim_el, (ZA, ZB)),
                      i_hut=_first_current(zab_h, (ZA, ZB)), i_hut_sign=1.0)
    else:  # dim
        sim_el += _series(ZS_R, ZS_L, sn, sim_ground, link.zstar, "__dim_m")
        sim_el.append(I(IFC, sn, sim_ground, port=IFC))
        hut_el.append(V(AMP, hn, hut_ground, port=AMP))
        probes.update(fwd=f"v_{sn}", i_fb=None, i_zs=_first_current(sim_el, (ZS_R, ZS_L)),
                      i_hut=f"i_{AMP}", i_hut_sign=-1.0)
    return sim_el, hut_el, probes


def _replica(z: Impedance, dt: float) -> CircuitModel:
    """Stand-alone copy of the damping impedance driven by a voltage port."""
    elements = [V("drive", "n", "0", port="v")] + _series("zr", "zl", "n", "0", z, "m")
    model = CircuitModel.from_netlist(elements, "0", dt)
    return model


@dataclass(eq=False)
class LoopState:
    sim: CircuitModel
    hut: CircuitModel
    amp: object
    sensors: tuple
    comps: tuple
    replica: CircuitModel | None
    feedback: float = 0.0
    comp_valid: bool = True


class PhilLoop:
    """Both circuits plus interface state, advanced one native step at a time."""

    def __init__(self, sim: Sequence[Element], hut: Sequence[Element], link: PhilLink,
                 dt: float = DEFAULT_DT, sim_ground: str = "0", hut_ground: str = "0"):
        self.link = link
        self.dt = dt
        self.algorithm = link.effective_algorithm
        sim_el, hut_el, self.probes = build_loop_circuits(sim, hut, link, sim_ground, hut_ground)
        sim_model = CircuitModel(build_state_space(sim_el, sim_ground), dt)
        hut_model = CircuitModel(build_state_space(hut_el, hut_ground), dt)
        self.sim_index = sim_model.system.output_index
        self.hut_index = hut_model.system.output_index
        self.sensor_samples = int(round(link.sensor_delay / dt))
        self.amp_samples = link.amplifier.delay_samples(dt)
        # DIM feeds back current and voltage; the rest one quantity
        self.channels = 2 if self.algorithm == "dim" else 1
        comps = tuple(initial_state(link.compensator, dt) for _ in range(self.channels))
        sensors = tuple((0.0,) * self.sensor_samples for _ in range(self.channels))
        self.state = LoopState(
            sim=sim_model, hut=hut_model, amp=amplifier_initial(link.amplifier, dt),
            sensors=sensors, comps=comps,
            replica=_replica(link.zstar, dt) if self.algorithm == "dim" else None,
        )
        self.external_ports = [e.port for e in sim_model.system.sources if e.port not in (None, IFC)]
        self.ext_units = {e.port: ("A" if e.kind == "I" else "V") for e in sim_model.system.sources
                          if e.port not in (None, IFC)}
        self.sample = self._sample(self.state, {})

    @property
    def algebraic(self) -> bool:
        return self.amp_samples == 0 and self.sensor_samples == 0

    @property
    def loop_delay(self) -> float:
        """Total loop delay in seconds after quantisation."""
        return (self.amp_samples + self.sensor_samples) * self.dt

    @property
    def residual_delay(self) -> float:
        """Requested minus realised delay (seconds) lost to quantisation."""
        return (self.link.amplifier.delay + self.link.sensor_delay) - self.loop_delay

    @property
    def t(self) -> int:
        return self.state.sim.t

    def sim_outputs(self) -> dict[str, float]:
        return self.state.sim.outputs()

    def hut_outputs(self) -> dict[str, float]:
        return self.state.hut.outputs()

    def _measure(self, y_hut):
        i_hut = self.probes["i_hut_sign"] * y_hut[self.hut_index[self.probes["i_hut"]]]
        v_port = y_hut[self.hut_index[self.probes["v_port"]]]
        return i_hut, v_port

    def _sample(self, state, ext):
        y_sim = state.sim.output_vector()
        y_hut = state.hut.output_vector()
        i_hut, v_port = self._measure(y_hut)
        return LoopSample(state.sim.t, y_sim[self.sim_index[self.probes["v_ref"]]], v_port, i_hut,
                          self._i_fb(state, y_sim))

    def _i_fb(self, state, y_sim):
        if self.algorithm == "dim":
            return y_sim[self.sim_index[self.probes["i_zs"]]] + state.sim.u[self._ifc_pos]
        return y_sim[self.sim_index[self.probes["i_fb"]]]

    @property
    def _ifc_pos(self):
        return self.state.sim.system.input_ports[IFC]

    def _evaluate(self, state: LoopState, x: float, ext: Mapping[str, float]):
        dt = self.dt
        sim = state.sim.advance({**ext, IFC: x})
        y_sim = sim.output_vector()
        fwd = y_sim[self.sim_index[self.probes["fwd"]]]
        amp, drive = amplifier_step(self.link.amplifier, state.amp, fwd, dt)
        hut = state.hut.advance({AMP: drive})
        y_hut = hut.output_vector()
        i_hut, v_port = self._measure(y_hut)
        measured = (i_hut, v_port) if self.algorithm == "dim" else (
            (i_hut,) if self.algorithm == "itm-voltage" else (v_port,))
        sensors, comps, values, valid = [], [], [], True
        for k, m in enumerate(measured):
            fifo = state.sensors[k]
            if fifo:
                delayed, fifo = fifo[0], fifo[1:] + (m,)
            else:
                delayed = m
            cs, y, ok = compensate(self.link.compensator, state.comps[k], delayed, dt)
            sensors.append(fifo)
            comps.append(cs)
            values.append(y)
            valid = valid and ok
        replica = state.replica
        if self.algorithm == "dim":
            replica = replica.advance({"v": values[1]})
            g = values[0] - replica.output_vector()[replica.system.output_index[self._replica_probe]]
        else:
            g = values[0]
        new = LoopState(sim, hut, amp, tuple(sensors), tuple(comps), replica, x, valid)
        return g, new

    @property
    def _replica_probe(self):
        z = self.link.zstar
        return "i_zr" if z.r > 0 else "i_zl"

    def step(self, ext: Mapping[str, float] | None = None) -> LoopSample:
        """Advance both circuits by one native step and return the new loop sample."""
        ext = dict(ext or {})
        for p in self.external_ports:
            ext.setdefault(p, 0.0)
        state = self.state
        g0, trial = self._evaluate(state, 0.0, ext)
        if self.algebraic:
            g1, _ = self._evaluate(state, 1.0, ext)
            slope = g1 - g0
            if abs(1.0 - slope) < 1e-12:
                raise ConfigError("algebraic interface loop is singular (loop gain 1)")
            x = g0 / (1.0 - slope)
            for _ in range(50):
                gx, trial = self._evaluate(state, x, ext)
                if abs(gx - x) <= 1e-12 * max(1.0, abs(x)):
                    break
                # limits active: secant update on the residual
                x_next = x - (gx - x) / (slope - 1.0)
                g_next, _ = self._evaluate(state, x_next, ext)
                denom = (g_next - x_next) - (gx - x)
                slope = 1.0 + denom / (x_next - x) if x_next != x else slope
                x = x_next
        else:
            x = g0
            _, trial = self._evaluate(state, x, ext)
        self.state = trial
        self.sample = self._sample(trial, ext)
        values = (self.sample.v_ref, self.sample.v_amp, self.sample.i_hut, self.sample.i_fb)
        if not all(math.isfinite(v) for v in values):
            raise NonFinite(trial.sim.t, "PHIL loop signal is non-finite")
        return self.sample


def _couple(loop: PhilLoop, algorithms, ext=None) -> LoopSample:
    if loop.link.algorithm not in algorithms:
        raise ConfigError(f"loop uses {loop.link.algorithm!r}, expected one of {algorithms}")
    return loop.step(ext)


def itm_couple(loop: PhilLoop, ext=None) -> LoopSample:
    """One exchange step of an ideal-transformer loop (voltage or current type)."""
    return _couple(loop, ("itm-voltage", "itm-current"), ext)


def pcd_couple(loop: PhilLoop, ext=None) -> LoopSample:
    """One exchange step of a partial-circuit-duplication loop."""
    return _couple(loop, ("pcd",), ext)


def dim_couple(loop: PhilLoop, ext=None) -> LoopSample:
    """One exchange step of a damping-impedance loop."""
    return _couple(loop, ("dim",), ext)


# --- analytic screen -------------------------------------------------------

class Verdict(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


@dataclass(frozen=True)
class StabilityPrediction:
    verdict: Verdict
    max_ratio: float
    margin: float


MARGINAL_BAND = 0.01


def predict_itm_stability(zs: Impedance, zh: Impedance, f_max: float, points: int = 2001,
                          eps: float = MARGINAL_BAND) -> StabilityPrediction:
    """Screen a voltage-type ITM split by ``max |Zs(jw)| / |Zh(jw)|`` over ``(0, 2 pi f_max]``."""
    if not f_max > 0:
        raise ConfigError("f_max must be positive")
    w_max = 2.0 * math.pi * f_max
    omegas = np.concatenate([np.geomspace(w_max * 1e-6, w_max, points), [w_max]])
    zs_mag = np.abs(zs.r + 1j * omegas * zs.l)
    zh_mag = np.abs(zh.r + 1j * omegas * zh.l)
    if np.any(zh_mag == 0):
        raise DegenerateImpedance("HuT impedance vanishes within the swept band")
    ratio = float(np.max(zs_mag / zh_mag))
    if ratio > 1.0 + eps:
        verdict = Verdict.UNSTABLE
    elif ratio < 1.0 - eps:
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.MARGINAL
    return StabilityPrediction(verdict, ratio, 1.0 - ratio)


# --- federate --------------------------------------------------------------

class PhilFederate(ContinuousFederate):
    """A PHIL loop exposed as one compound continuous federate.

    Outputs: the loop signals ``v_ref``, ``v_amp``, ``i_hut``, ``i_fb`` and
    every simulated-side output prefixed ``sim_`` (interface internals
    excluded). Inputs: the controlled sources of the simulated side.
    """

    def __init__(self, name: str, loop: PhilLoop, detectors=(), guard=None):
        sim_names = [n for n in loop.state.sim.system.outputs if "__" not in n]
        sim_units = dict(zip(loop.state.sim.system.outputs, loop.state.sim.system.output_units))
        outputs = [Port(n, u) for n, u in LOOP_SIGNALS] + [Port(f"sim_{n}", sim_units[n]) for n in sim_names]
        inputs = [Port(p, loop.ext_units[p]) for p in loop.external_ports]
        super().__init__(name, inputs, outputs, round(loop.dt * 1e9))
        self.loop = loop
        self._sim_names = sim_names
        self.detectors = list(detectors)
        self.guard = guard
        self.log = []
        self.recording = Trace()
        for p in outputs:
            self.recording.declare(p.name, p.unit)
        for p in inputs:
            self.recording.declare(f"in_{p.name}", p.unit)
        self._prev = None

    def _outputs(self):
        s = self.loop.sample
        out = {"v_ref": s.v_ref, "v_amp": s.v_amp, "i_hut": s.i_hut, "i_fb": s.i_fb}
        y = self.loop.sim_outputs()
        out.update({f"sim_{n}": y[n] for n in self._sim_names})
        return out

    def _record(self, out, inputs):
        t = self.loop.t
        if self.recording.times and self.recording.times[-1] == t:
            return
        if self._prev is not None:
            for d in self.detectors:
                c = detect_threshold(d, self._prev[1][d.signal], out[d.signal], self._prev[0], t)
                if c is not None:
                    self.log.append(log_entry(c.t, "crossing", self.name, signal=c.signal,
                                              direction=c.direction, level=c.level))
        self._prev = (t, out)
        self.recording.add_row(t, {**out, **{f"in_{k}": v for k, v in inputs.items()}})
        if self.guard is not None:
            self.guard(t, out, self.recording)

    def _step(self, inputs):
        try:
            self.loop.step(inputs)
        except NonFinite as exc:
            nan = {p: float("nan") for p in self.outputs}
            self.recording.add_row(exc.t, {**nan, **{f"in_{k}": v for k, v in inputs.items()}})
            if self.guard is not None:
                self.guard(exc.t, nan, self.recording)
            raise
        out = self._outputs()
        self._record(out, inputs)
        return out

    def _hold(self, inputs):
        st = self.loop.state
        self.loop.state = dataclasses.replace(st, sim=st.sim.with_inputs({**inputs, IFC: st.feedback}))
        self.loop.sample = self.loop._sample(self.loop.state, inputs)
        out = self._outputs()
        self._record(out, inputs)
        return out

    def _peek(self, h, inputs):
        # hold the last loop values over a partial step
        return self._outputs()
