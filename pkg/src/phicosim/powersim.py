"""Fixed-step solver for small linear circuits.

A netlist is turned into a state-space model by modified nodal analysis:
inductors are treated as current sources carrying their state current and
capacitors as voltage sources holding their state voltage, so the remaining
resistive network is solved once per unit vector to obtain ``A, B, C, D``.
The state is then advanced with the trapezoidal rule.

Sign conventions: every element has terminals ``a`` and ``b``; its current
is the current flowing from ``a`` through the element to ``b``. For sources
``a`` is the positive terminal, so a voltage source delivering power carries
a negative current.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, NonFinite, SingularTopology, UnsupportedElement
from .kernel import ContinuousFederate, Port
from .trace import Trace, log_entry

KINDS = ("R", "L", "C", "V", "I")
DEFAULT_DT = 50e-6


@dataclass(frozen=True)
class Element:
    """One two-terminal element.

    ``value`` is ohms, henries, farads, or the DC value of a source. An
    independent source may add ``amplitude * sin(omega * t + phase)``. A
    source with ``port`` set is controlled: its value comes from that input
    port and the profile fields are ignored. ``initial`` is the initial
    inductor current or capacitor voltage.
    """

    kind: str
    name: str
    a: str
    b: str
    value: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    port: str | None = None
    initial: float = 0.0

    def source_value(self, t: float) -> float:
        v = self.value
        if self.amplitude:
            v += self.amplitude * math.sin(self.omega * t + self.phase)
        return v


def R(name, a, b, value):
    return Element("R", name, a, b, value)


def L(name, a, b, value, initial=0.0):
    return Element("L", name, a, b, value, initial=initial)


def C(name, a, b, value, initial=0.0):
    return Element("C", name, a, b, value, initial=initial)


def V(name, a, b, value=0.0, amplitude=0.0, omega=0.0, phase=0.0, port=None):
    return Element("V", name, a, b, value, amplitude, omega, phase, port)


def I(name, a, b, value=0.0, amplitude=0.0, omega=0.0, phase=0.0, port=None):
    return Element("I", name, a, b, value, amplitude, omega, phase, port)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """``x' = A x + B u``, ``y = C x + D u`` plus the naming needed to use it."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    states: tuple[str, ...]
    sources: tuple[Element, ...]
    outputs: tuple[str, ...]
    output_units: tuple[str, ...]
    x0: np.ndarray
    nodes: tuple[str, ...]
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @cached_property
    def output_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.outputs)}

    @cached_property
    def input_ports(self) -> dict[str, int]:
        """Controlled-source port name -> position in ``u``."""
        return {e.port: i for i, e in enumerate(self.sources) if e.port is not None}

    def discrete(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Trapezoidal update matrices for step ``h`` seconds (cached)."""
        key = round(h * 1e9)
        hit = self._cache.get(key)
        if hit is None:
            n = len(self.states)
            eye = np.eye(n)
            lhs = eye - 0.5 * h * self.A
            ad = np.linalg.solve(lhs, eye + 0.5 * h * self.A) if n else np.zeros((0, 0))
            bd = np.linalg.solve(lhs, 0.5 * h * self.B) if n else np.zeros((0, len(self.sources)))
            hit = self._cache[key] = (ad, bd)
        return hit


def _check_elements(elements: Sequence[Element], ground: str):
    names = set()
    for e in elements:
        if e.kind not in KINDS:
            raise UnsupportedElement(f"element {e.name!r}: unsupported kind {e.kind!r}")
        if e.name in names:
            raise ConfigError(f"duplicate element name {e.name!r}")
        names.add(e.name)
        if e.a == e.b:
            raise ConfigError(f"element {e.name!r} is shorted on itself ({e.a})")
        if e.kind == "R" and e.value < 0:
            raise ConfigError(f"resistor {e.name!r} must be >= 0")
        if e.kind in ("L", "C") and not e.value > 0:
            raise ConfigError(f"{e.kind} {e.name!r} must be > 0")
        if e.port is not None and e.kind not in ("V", "I"):
            raise ConfigError(f"only sources can be driven by a port ({e.name!r})")
    nodes = []
    for e in elements:
        for n in (e.a, e.b):
            if n not in nodes:
                nodes.append(n)
    if ground not in nodes:
        raise SingularTopology(f"netlist does not contain the ground node {ground!r}")
    parent = {n: n for n in nodes}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    for e in elements:
        parent[find(e.a)] = find(e.b)
    floating = [n for n in nodes if find(n) != find(ground)]
    if floating:
        raise SingularTopology(f"nodes not connected to ground {ground!r}: {floating}")
    return [n for n in nodes if n != ground]


def build_state_space(elements: Sequence[Element], ground: str = "0") -> StateSpace:
    """Assemble the state-space form of a netlist.

    Outputs are ``v_<node>`` for every non-ground node and ``i_<element>``
    for every element.
    """
    elements = list(elements)
    nodes = _check_elements(elements, ground)
    idx = {n: i for i, n in enumerate(nodes)}
    states = [e for e in elements if e.kind in ("L", "C")]
    sources = [e for e in elements if e.kind in ("V", "I")]
    # voltage-defined branches carry an extra current unknown
    vbranches = [e for e in elements if e.kind in ("V", "C") or (e.kind == "R" and e.value == 0)]
    nn, nv = len(nodes), len(vbranches)
    size = nn + nv
    nx, nu = len(states), len(sources)
    M = np.zeros((size, size))
    Px = np.zeros((size, nx))
    Pu = np.zeros((size, nu))
    sidx = {e.name: k for k, e in enumerate(states)}
    uidx = {e.name: k for k, e in enumerate(sources)}
    vidx = {e.name: nn + k for k, e in enumerate(vbranches)}

    def node(n):
        return idx.get(n)

    for e in elements:
        a, b = node(e.a), node(e.b)
        if e.name in vidx:
            k = vidx[e.name]
            for n, s in ((a, 1.0), (b, -1.0)):
                if n is not None:
                    M[n, k] += s
                    M[k, n] += s
            if e.kind == "C":
                Px[k, sidx[e.name]] = 1.0
            elif e.kind == "V":
                Pu[k, uidx[e.name]] = 1.0
        elif e.kind == "R":
            g = 1.0 / e.value
            for n1, n2 in ((a, b), (b, a)):
                if n1 is not None:
                    M[n1, n1] += g
                    if n2 is not None:
                        M[n1, n2] -= g
        else:
            # current leaving a through the element into b
            target, col = (Px, sidx[e.name]) if e.kind == "L" else (Pu, uidx[e.name])
            if a is not None:
                target[a, col] -= 1.0
            if b is not None:
                target[b, col] += 1.0

    if size and (np.linalg.matrix_rank(M) < size or np.linalg.cond(M) > 1e13):
        raise SingularTopology("nodal matrix is singular (floating subcircuit, voltage-source loop "
                               "or node reached only through current sources/inductors)")
    if size:
        Zx = np.linalg.solve(M, Px)
        Zu = np.linalg.solve(M, Pu)
    else:
        Zx, Zu = np.zeros((0, nx)), np.zeros((0, nu))

    def vdiff(Z, e):
        row = np.zeros(Z.shape[1])
        if node(e.a) is not None:
            row += Z[node(e.a)]
        if node(e.b) is not None:
            row -= Z[node(e.b)]
        return row

    A = np.zeros((nx, nx))
    B = np.zeros((nx, nu))
    for k, e in enumerate(states):
        if e.kind == "L":
            A[k] = vdiff(Zx, e) / e.value
            B[k] = vdiff(Zu, e) / e.value
        else:
            A[k] = Zx[vidx[e.name]] / e.value
            B[k] = Zu[vidx[e.name]] / e.value

    out_names, out_units, Cr, Dr = [], [], [], []
    for n in nodes:
        out_names.append(f"v_{n}")
        out_units.append("V")
        Cr.append(Zx[idx[n]])
        Dr.append(Zu[idx[n]])
    for e in elements:
        out_names.append(f"i_{e.name}")
        out_units.append("A")
        if e.name in vidx:
            Cr.append(Zx[vidx[e.name]])
            Dr.append(Zu[vidx[e.name]])
        elif e.kind == "R":
            Cr.append(vdiff(Zx, e) / e.value)
            Dr.append(vdiff(Zu, e) / e.value)
        elif e.kind == "L":
            row = np.zeros(nx)
            row[sidx[e.name]] = 1.0
            Cr.append(row)
            Dr.append(np.zeros(nu))
        else:
            row = np.zeros(nu)
            row[uidx[e.name]] = 1.0
            Cr.append(np.zeros(nx))
            Dr.append(row)
    return StateSpace(
        A=A, B=B,
        C=np.array(Cr).reshape(len(out_names), nx),
        D=np.array(Dr).reshape(len(out_names), nu),
        states=tuple(e.name for e in states),
        sources=tuple(sources),
        outputs=tuple(out_names),
        output_units=tuple(out_units),
        x0=np.array([e.initial for e in states], dtype=float),
        nodes=tuple(nodes),
    )


@dataclass(frozen=True, eq=False)
class CircuitModel:
    """A state-space circuit together with its current state.

    Instances are immutable: :meth:`step` returns a new model sharing the
    same matrices. ``u`` holds the source values applied at time ``t`` (ns).
    """

    system: StateSpace
    dt: float = DEFAULT_DT
    x: np.ndarray = None
    u: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.x is None:
            object.__setattr__(self, "x", self.system.x0.copy())
        if self.u is None:
            object.__setattr__(self, "u", self.source_vector({}, self.t))

    @classmethod
    def from_netlist(cls, elements: Sequence[Element], ground: str = "0", dt: float = DEFAULT_DT):
        return cls(build_state_space(elements, ground), dt)

    @property
    def native_step(self) -> int:
        return round(self.dt * 1e9)

    def source_vector(self, inputs: Mapping[str, float], t: int) -> np.ndarray:
        ts = t * 1e-9
        u = np.empty(len(self.system.sources))
        for k, e in enumerate(self.system.sources):
            u[k] = inputs.get(e.port, 0.0) if e.port is not None else e.source_value(ts)
        return u

    def output_vector(self, x=None, u=None) -> np.ndarray:
        x = self.x if x is None else x
        u = self.u if u is None else u
        return self.system.C @ x + self.system.D @ u

    def outputs(self) -> dict[str, float]:
        y = self.output_vector()
        return dict(zip(self.system.outputs, y.tolist()))

    def with_inputs(self, inputs: Mapping[str, float]) -> "CircuitModel":
        """Same state, source values re-evaluated at ``t`` with ``inputs``."""
        return dataclasses.replace(self, u=self.source_vector(inputs, self.t))

    def advance(self, inputs: Mapping[str, float], h: int | None = None) -> "CircuitModel":
        """Trapezoidal step of ``h`` ns (default ``dt``); ``inputs`` are taken at the new time."""
        h = self.native_step if h is None else h
        t_new = self.t + h
        u_new = self.source_vector(inputs, t_new)
        if len(self.x):
            ad, bd = self.system.discrete(h * 1e-9)
            x_new = ad @ self.x + bd @ (self.u + u_new)
        else:
            x_new = self.x
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(u_new))):
            raise NonFinite(t_new)
        return dataclasses.replace(self, x=x_new, u=u_new, t=t_new)

    def step(self, inputs: Mapping[str, float], dt: float | None = None):
        """One step; returns ``(model', outputs)`` with outputs at the new time."""
        if dt is not None and round(dt * 1e9) != self.native_step:
            raise ConfigError(f"step dt {dt} differs from native step {self.dt}")
        new = self.advance(inputs)
        y = new.output_vector()
        if not np.all(np.isfinite(y)):
            raise NonFinite(new.t)
        return new, dict(zip(self.system.outputs, y.tolist()))

    def stepper(self):
        """Transition function ``(model, inputs, dt_seconds) -> (model, outputs)``.

        Elapsed time is covered with native steps, so the result matches a
        federate stepping the same model on its own grid.
        """
        def run(model, inputs, dt):
            n, rest = divmod(round(dt * 1e9), model.native_step)
            if rest:
                raise ConfigError(f"embedded step {dt} s is not a multiple of {model.dt} s")
            if n == 0:
                model = model.with_inputs(inputs)
            for _ in range(n):
                model = model.advance(inputs)
            return model, model.outputs()
        return run


def step(model: CircuitModel, inputs: Mapping[str, float], dt: float | None = None):
    return model.step(inputs, dt)


# --- threshold detection ---------------------------------------------------

@dataclass(frozen=True)
class ThresholdDetector:
    signal: str
    level: float
    direction: str = "both"

    def __post_init__(self):
        if self.direction not in ("rising", "falling", "both"):
            raise ConfigError(f"unknown threshold direction {self.direction!r}")


@dataclass(frozen=True)
class Crossing:
    t: int
    signal: str
    direction: str
    level: float


def detect_threshold(detector: ThresholdDetector, previous: float, current: float,
                     t_prev: int, t_now: int) -> Crossing | None:
    """Strict crossing between two samples; the time is linearly interpolated.

    Landing exactly on the level (on either sample) does not count.
    """
    if t_now <= t_prev:
        raise ConfigError("t_now must be after t_prev")
    d0, d1 = previous - detector.level, current - detector.level
    if d0 < 0 < d1:
        direction = "rising"
    elif d0 > 0 > d1:
        direction = "falling"
    else:
        return None
    if detector.direction not in ("both", direction):
        return None
    frac = d0 / (d0 - d1)
    return Crossing(t_prev + round(frac * (t_now - t_prev)), detector.signal, direction, detector.level)


# --- federate --------------------------------------------------------------

class CircuitFederate(ContinuousFederate):
    """A circuit as a continuous federate.

    Input ports are the controlled sources (``A`` for current, ``V`` for
    voltage sources); output ports are every model output. Each committed
    step is recorded in ``recording``; threshold crossings go to ``log``.
    """

    def __init__(self, name: str, model: CircuitModel, detectors: Sequence[ThresholdDetector] = (),
                 guard=None):
        ss = model.system
        inputs = [Port(e.port, "A" if e.kind == "I" else "V") for e in ss.sources if e.port is not None]
        outputs = [Port(n, u) for n, u in zip(ss.outputs, ss.output_units)]
        super().__init__(name, inputs, outputs, model.native_step)
        self.model = model
        self.detectors = list(detectors)
        self.guard = guard
        self.log = []
        self.recording = Trace()
        for p in outputs:
            self.recording.declare(p.name, p.unit)
        for p in inputs:
            self.recording.declare(f"in_{p.name}", p.unit)
        self._prev = None

    def _record(self, out, inputs):
        t = self.model.t
        row = dict(out)
        row.update({f"in_{k}": v for k, v in inputs.items()})
        if self.recording.times and self.recording.times[-1] == t:
            return
        if self._prev is not None:
            for d in self.detectors:
                c = detect_threshold(d, self._prev[1][d.signal], out[d.signal], self._prev[0], t)
                if c is not None:
                    self.log.append(log_entry(c.t, "crossing", self.name, signal=c.signal,
                                              direction=c.direction, level=c.level))
        self._prev = (t, out)
        self.recording.add_row(t, row)
        if self.guard is not None:
            self.guard(t, out, self.recording)

    def _step(self, inputs):
        try:
            self.model, out = self.model.step(inputs)
        except NonFinite as exc:
            nan = {p: float("nan") for p in self.outputs}
            self.recording.add_row(exc.t, {**nan, **{f"in_{k}": v for k, v in inputs.items()}})
            if self.guard is not None:
                self.guard(exc.t, nan, self.recording)
            raise
        self._record(out, inputs)
        return out

    def _hold(self, inputs):
        self.model = self.model.with_inputs(inputs)
        out = self.model.outputs()
        self._record(out, inputs)
        return out

    def _peek(self, h, inputs):
        peek = self.model.advance(inputs, h)
        return peek.outputs()


# --- monolithic reference --------------------------------------------------

def _prefixed(elements, prefix, ground, rename=None):
    rename = rename or {}
    out = []
    for e in elements:
        a = rename.get(e.a, ground if e.a == ground else f"{prefix}{e.a}")
        b = rename.get(e.b, ground if e.b == ground else f"{prefix}{e.b}")
        out.append(dataclasses.replace(e, name=f"{prefix}{e.name}", a=a, b=b))
    return out


COUPLING_AMMETER = "couple"


def merge_netlists(sim: Sequence[Element], sim_ground: str, sim_node: str,
                   hut: Sequence[Element], hut_ground: str, hut_node: str) -> list[Element]:
    """Join both sides at the coupling node through a 0 V ammeter.

    Nodes are prefixed ``sim:``/``hut:``; grounds merge into ``0``.
    """
    for e in list(sim) + list(hut):
        if e.port is not None:
            raise ConfigError(f"controlled source {e.name!r} has no value in a monolithic merge")
    merged = _prefixed(sim, "sim:", "0", {sim_ground: "0"})
    merged += _prefixed(hut, "hut:", "0", {hut_ground: "0"})
    merged.append(V(COUPLING_AMMETER, "sim:" + sim_node if sim_node != sim_ground else "0",
                    "hut:" + hut_node if hut_node != hut_ground else "0", 0.0))
    return merged


def solve_monolithic(sim: Sequence[Element], sim_node: str, hut: Sequence[Element], hut_node: str,
                     t_end: int, dt: float = DEFAULT_DT, *, sim_ground: str = "0",
                     hut_ground: str = "0") -> Trace:
    """Reference run of the merged circuit with an ideal coupling.

    Columns: ``v`` (coupling node voltage), ``i`` (current from the simulated
    side into the HuT side), then every merged output prefixed as in
    :func:`merge_netlists`.
    """
    model = CircuitModel.from_netlist(merge_netlists(sim, sim_ground, sim_node, hut, hut_ground, hut_node),
                                      "0", dt)
    names = model.system.outputs
    vname = f"v_sim:{sim_node}"
    trace = Trace()
    trace.declare("v", "V")
    trace.declare("i", "A")
    for n, u in zip(names, model.system.output_units):
        trace.declare(n, u)

    def row(y):
        values = dict(zip(names, y.tolist()))
        values["v"] = values.get(vname, 0.0)
        values["i"] = values[f"i_{COUPLING_AMMETER}"]
        return values

    trace.add_row(0, row(model.output_vector()))
    while model.t + model.native_step <= t_end:
        model = model.advance({})
        trace.add_row(model.t, row(model.output_vector()))
    return trace
