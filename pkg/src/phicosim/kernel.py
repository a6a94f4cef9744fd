"""Federates and the four synchronization strategies.

Every strategy is loose (explicit) coupling: a value published by a source
at time ``t`` is seen by sinks only in computations that start at ``t`` or
later, and no fixed-point iteration happens across federates.

Time is always integer nanoseconds (see :mod:`phicosim.timebase`).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .errors import CausalityError, ConfigError, Diverged, MissingInput, TimeRegression
from .trace import Trace, log_entry

log = logging.getLogger(__name__)

UNITS = ("V", "A", "")


class FederateKind(enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE_EVENT = "discrete-event"
    EMBEDDED = "embedded"


@dataclass(frozen=True)
class Port:
    """Named scalar channel. ``unit`` is ``"V"``, ``"A"`` or ``""`` (dimensionless)."""

    name: str
    unit: str = ""
    initial: float = 0.0

    def __post_init__(self):
        if self.unit not in UNITS:
            raise ConfigError(f"port {self.name!r}: unknown unit {self.unit!r}")


class Federate:
    """One participant of a co-simulation.

    Subclasses implement :meth:`_advance`. Discrete-event federates also
    implement :meth:`next_event_time`, :meth:`next_event_reads` and
    :meth:`process_next`; continuous federates declare ``native_step``.
    """

    kind = FederateKind.CONTINUOUS

    def __init__(self, name: str, inputs: Sequence[Port] = (), outputs: Sequence[Port] = (),
                 native_step: int | None = None):
        self.name = name
        self.inputs = _port_map(name, inputs)
        self.outputs = _port_map(name, outputs)
        if native_step is not None and native_step <= 0:
            raise ConfigError(f"federate {name!r}: native_step must be positive")
        self.native_step = native_step
        self.time = 0
        self.advance_log: list[int] = []

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r} t={self.time}>"

    def advance_to(self, t: int, inputs: Mapping[str, float]) -> dict[str, float]:
        """Bring the federate to time ``t`` and return every output valued at ``t``."""
        if t < self.time:
            raise TimeRegression(f"{self.name}: advance to {t} ns is before current time {self.time} ns")
        missing = [p for p in self.inputs if p not in inputs]
        if missing:
            raise MissingInput(f"{self.name}: missing input port(s) {missing}")
        out = self._advance(int(t), {p: float(inputs[p]) for p in self.inputs})
        self.time = int(t)
        self.advance_log.append(self.time)
        return out

    def _advance(self, t: int, inputs: dict[str, float]) -> dict[str, float]:
        raise NotImplementedError

    def initial_inputs(self) -> dict[str, float]:
        return {p.name: p.initial for p in self.inputs.values()}

    # discrete-event protocol; continuous federates keep the defaults
    def next_event_time(self) -> int | None:
        return None

    def next_event_reads(self) -> tuple[str, ...]:
        return ()

    def process_next(self, inputs: Mapping[str, float]) -> dict[str, float]:
        raise NotImplementedError(f"{self.name} has no events")


def _port_map(owner, ports):
    out = {}
    for p in ports:
        if p.name in out:
            raise ConfigError(f"federate {owner!r}: duplicate port name {p.name!r}")
        out[p.name] = p
    return out


class ContinuousFederate(Federate):
    """Fixed-step federate. Subclasses implement ``_step``, ``_hold`` and ``_peek``.

    The committed trajectory always lies on the ``native_step`` grid. Advancing
    to an off-grid time evaluates a partial step without committing it, so an
    off-grid read does not shift the grid.
    """

    kind = FederateKind.CONTINUOUS

    def __init__(self, name, inputs=(), outputs=(), native_step: int | None = None):
        if native_step is None:
            raise ConfigError(f"continuous federate {name!r} needs a native_step")
        super().__init__(name, inputs, outputs, native_step)
        self.grid_time = 0
        self._last: dict[str, float] | None = None

    def _advance(self, t, inputs):
        stepped = False
        while self.grid_time + self.native_step <= t:
            self._last = self._step(inputs)
            self.grid_time += self.native_step
            stepped = True
        if t > self.grid_time:
            return self._peek(t - self.grid_time, inputs)
        if not stepped:
            self._last = self._hold(inputs)
        return dict(self._last)

    def _step(self, inputs: dict[str, float]) -> dict[str, float]:
        """Commit one native step from ``grid_time`` with ``inputs`` held."""
        raise NotImplementedError

    def _hold(self, inputs: dict[str, float]) -> dict[str, float]:
        """Outputs at the current grid time with new inputs (zero-length advance)."""
        raise NotImplementedError

    def _peek(self, h: int, inputs: dict[str, float]) -> dict[str, float]:
        """Outputs at ``grid_time + h`` (0 < h < native_step), not committed."""
        raise NotImplementedError


class SignalFederate(ContinuousFederate):
    """Continuous federate whose outputs are explicit functions of time (seconds)."""

    def __init__(self, name: str, signals: Mapping[str, tuple[str, Callable[[float], float]]],
                 native_step: int, inputs: Sequence[Port] = ()):
        outputs = [Port(p, unit) for p, (unit, _) in signals.items()]
        super().__init__(name, inputs, outputs, native_step)
        self._fns = {p: fn for p, (_, fn) in signals.items()}

    def _at(self, t):
        return {p: float(fn(t * 1e-9)) for p, fn in self._fns.items()}

    def _step(self, inputs):
        return self._at(self.grid_time + self.native_step)

    def _hold(self, inputs):
        return self._at(self.grid_time)

    def _peek(self, h, inputs):
        return self._at(self.grid_time + h)


class EmbeddedFederate(Federate):
    """Wraps a stateful transition function ``(state, inputs, dt_seconds) -> (state, outputs)``.

    The model has no timeline of its own; it is stepped by whatever elapsed
    since its last invocation whenever its host asks.
    """

    kind = FederateKind.EMBEDDED

    def __init__(self, name, stepper, state, inputs=(), outputs=()):
        super().__init__(name, inputs, outputs)
        self.stepper = stepper
        self.state = state
        self.invocations = 0
        self._last = {p.name: p.initial for p in self.outputs.values()}

    def _advance(self, t, inputs):
        self.state, out = self.stepper(self.state, dict(inputs), (t - self.time) * 1e-9)
        self.invocations += 1
        self._last = {p: float(out[p]) for p in self.outputs}
        return dict(self._last)


@dataclass(frozen=True)
class Coupling:
    """Routes ``source`` (federate, port) to ``sink`` (federate, port)."""

    source: tuple[str, str]
    sink: tuple[str, str]
    exchange_mode: str = "at-sync-points"
    link_id: str | None = None

    def __post_init__(self):
        if self.exchange_mode not in ("at-sync-points", "on-event"):
            raise ConfigError(f"unknown exchange_mode {self.exchange_mode!r}")

    @property
    def label(self):
        return f"{self.source[0]}.{self.source[1]}->{self.sink[0]}.{self.sink[1]}"


@dataclass(frozen=True)
class ModelExchange:
    pass


@dataclass(frozen=True)
class MasterSlave:
    master: str


@dataclass(frozen=True)
class TimeStepped:
    sync_interval: int


@dataclass(frozen=True)
class GlobalEventDriven:
    pass


SyncStrategy = ModelExchange | MasterSlave | TimeStepped | GlobalEventDriven


def check_couplings(federates: Sequence[Federate], couplings: Sequence[Coupling]) -> dict[str, Federate]:
    """Validate couplings against the federates' ports; returns federates by name."""
    by_name: dict[str, Federate] = {}
    for f in federates:
        if f.name in by_name:
            raise ConfigError(f"duplicate federate name {f.name!r}")
        by_name[f.name] = f
    seen_sinks = {}
    errors = []
    for c in couplings:
        (sf, sp), (kf, kp) = c.source, c.sink
        if sf not in by_name or sp not in by_name[sf].outputs:
            errors.append(f"{c.label}: unknown source port {sf}.{sp}")
            continue
        if kf not in by_name or kp not in by_name[kf].inputs:
            errors.append(f"{c.label}: unknown sink port {kf}.{kp}")
            continue
        su, ku = by_name[sf].outputs[sp].unit, by_name[kf].inputs[kp].unit
        if su != ku:
            errors.append(f"{c.label}: unit mismatch {sf}.{sp} [{su}] vs {kf}.{kp} [{ku}]")
        if c.sink in seen_sinks:
            errors.append(f"sink {kf}.{kp} has two sources ({seen_sinks[c.sink]} and {sf}.{sp})")
        seen_sinks[c.sink] = f"{sf}.{sp}"
    if errors:
        raise ConfigError("; ".join(errors))
    return by_name


def _recorded_ports(by_name, couplings, record):
    if record is None:
        ports = []
        for c in couplings:
            if c.source not in ports:
                ports.append(c.source)
        return ports
    return [tuple(r) for r in record]


def _declare(trace, by_name, ports):
    for fname, port in ports:
        trace.declare(f"{fname}.{port}", by_name[fname].outputs[port].unit)


def _snapshot(ports, values):
    return {f"{f}.{p}": values[f][p] for f, p in ports}


def _initial_outputs(by_name):
    return {name: {p.name: p.initial for p in f.outputs.values()} for name, f in by_name.items()}


def _abort(exc, trace):
    if isinstance(exc, Diverged) and exc.trace is None:
        exc.trace = trace
    return exc


def run_time_stepped(federates: Sequence[Federate], couplings: Sequence[Coupling], sync_interval: int,
                     t_end: int, *, record: Iterable[tuple[str, str]] | None = None,
                     on_sync: Callable[[int], None] | None = None) -> Trace:
    """Advance every federate in lock-step between fixed synchronization points.

    Values exchanged at sync point ``k`` are the source outputs at ``k`` and
    are held by sinks over ``(k, k+1]``. One row per sync point is recorded,
    ``t = 0`` included. ``on_sync`` is called after each exchange (used for
    wall-clock pacing).
    """
    if sync_interval <= 0:
        raise ConfigError("sync_interval must be positive")
    if t_end < 0 or t_end % sync_interval:
        raise ConfigError(f"sync_interval {sync_interval} ns does not divide t_end {t_end} ns")
    for f in federates:
        if f.kind is FederateKind.CONTINUOUS and sync_interval % f.native_step:
            raise ConfigError(f"sync_interval {sync_interval} ns is not a multiple of "
                              f"{f.name}'s native_step {f.native_step} ns")
    by_name = check_couplings(federates, couplings)
    ports = _recorded_ports(by_name, couplings, record)
    trace = Trace()
    _declare(trace, by_name, ports)

    inputs = {f.name: f.initial_inputs() for f in federates}
    outputs = _initial_outputs(by_name)
    for c in couplings:
        inputs[c.sink[0]][c.sink[1]] = outputs[c.source[0]][c.source[1]]
    t = 0
    try:
        while True:
            for f in federates:
                outputs[f.name] = f.advance_to(t, inputs[f.name])
            for c in couplings:
                inputs[c.sink[0]][c.sink[1]] = outputs[c.source[0]][c.source[1]]
            trace.add_row(t, _snapshot(ports, outputs))
            if on_sync is not None:
                on_sync(t)
            if t >= t_end:
                break
            t += sync_interval
    except Diverged as exc:
        raise _abort(exc, trace)
    return trace


class _Board:
    """Latest publication per source port with strict-before visibility."""

    def __init__(self, by_name):
        init = _initial_outputs(by_name)
        self.latest = {(f, p): (-1, v) for f, ports in init.items() for p, v in ports.items()}
        self.stable = {k: v for k, (_, v) in self.latest.items()}

    def publish(self, fname, values, t):
        for p, v in values.items():
            key = (fname, p)
            lt, lv = self.latest[key]
            if t > lt:
                self.stable[key] = lv
            self.latest[key] = (t, v)

    def visible(self, key, t):
        lt, lv = self.latest[key]
        return lv if lt < t else self.stable[key]

    def current(self, key):
        return self.latest[key][1]


def _gather(fed, couplings_into, board, t):
    values = fed.initial_inputs()
    for c in couplings_into.get(fed.name, ()):
        values[c.sink[1]] = board.visible(c.source, t)
    return values


def _by_sink(couplings):
    into: dict[str, list[Coupling]] = {}
    for c in couplings:
        into.setdefault(c.sink[0], []).append(c)
    return into


def run_global_event_driven(federates: Sequence[Federate], couplings: Sequence[Coupling], t_end: int, *,
                            record: Iterable[tuple[str, str]] | None = None,
                            record_interval: int | None = None,
                            on_entry: Callable[[int], None] | None = None) -> Trace:
    """Process one merged, timestamp-ordered list of power steps and network events.

    Continuous federates contribute an entry at every multiple of their
    native step (``t = 0`` included); discrete-event federates contribute
    their pending events. Exactly one federate runs per entry. Ties go to
    continuous steps first, then to discrete-event federates in list order
    (each of which serves its own events FIFO).

    Rows are recorded every ``record_interval`` (default: smallest native
    step) after all entries at or before that time are processed. Every
    processed entry is appended to the log as kind ``"entry"``.
    """
    continuous = [f for f in federates if f.kind is FederateKind.CONTINUOUS]
    for f in continuous:
        if not f.native_step:
            raise ConfigError(f"continuous federate {f.name!r} lacks native_step")
    if record_interval is None:
        record_interval = min((f.native_step for f in continuous), default=None)
    if not record_interval or record_interval <= 0:
        raise ConfigError("record_interval must be positive (no continuous federate to infer it from)")
    by_name = check_couplings(federates, couplings)
    ports = _recorded_ports(by_name, couplings, record)
    trace = Trace()
    _declare(trace, by_name, ports)
    board = _Board(by_name)
    into = _by_sink(couplings)
    order = {f.name: i for i, f in enumerate(federates)}
    next_step = {f.name: 0 for f in continuous}
    next_row = 0

    def flush(upto):
        nonlocal next_row
        while next_row <= upto and next_row <= t_end:
            trace.add_row(next_row, {f"{f}.{p}": board.current((f, p)) for f, p in ports})
            next_row += record_interval

    try:
        while True:
            best = None
            for f in federates:
                if f.kind is FederateKind.CONTINUOUS:
                    te, rank = next_step[f.name], 0
                else:
                    te, rank = f.next_event_time(), 1
                if te is None or te > t_end:
                    continue
                key = (te, rank, order[f.name])
                if best is None or key < best[0]:
                    best = (key, f)
            if best is None:
                break
            (te, rank, _), f = best
            flush(te - 1)
            values = _gather(f, into, board, te)
            if rank == 0:
                out = f.advance_to(te, values)
                next_step[f.name] = te + f.native_step
            else:
                out = f.process_next(values)
            board.publish(f.name, out, te)
            trace.log.append(log_entry(te, "entry", f.name))
            if on_entry is not None:
                on_entry(te)
        for f in federates:
            if f.time < t_end:
                board.publish(f.name, f.advance_to(t_end, _gather(f, into, board, t_end)), t_end)
        flush(t_end)
    except Diverged as exc:
        raise _abort(exc, trace)
    return trace


def _run_hosted(master, slaves, couplings, t_end, record, finish_slaves):
    if master.kind is not FederateKind.DISCRETE_EVENT:
        raise ConfigError(f"master {master.name!r} must be a discrete-event federate")
    federates = [master, *slaves]
    by_name = check_couplings(federates, couplings)
    ports = _recorded_ports(by_name, couplings, record)
    trace = Trace()
    _declare(trace, by_name, ports)
    outputs = _initial_outputs(by_name)
    into = _by_sink(couplings)
    slave_names = {s.name for s in slaves}

    def inputs_of(fname):
        f = by_name[fname]
        values = f.initial_inputs()
        for c in into.get(fname, ()):
            values[c.sink[1]] = outputs[c.source[0]][c.source[1]]
        return values

    def bring(slave, t):
        if slave.time > t:
            raise CausalityError(f"{master.name} reads {slave.name} at {t} ns but it is already at {slave.time} ns")
        outputs[slave.name] = slave.advance_to(t, inputs_of(slave.name))

    feeding = {}
    for c in into.get(master.name, ()):
        if c.source[0] in slave_names:
            feeding.setdefault(c.sink[1], []).append(by_name[c.source[0]])
    fed_by_master = [s for s in slaves if any(c.source[0] == master.name for c in into.get(s.name, ()))]

    try:
        while True:
            t = master.next_event_time()
            if t is None or t > t_end:
                break
            touched = []
            for port in master.next_event_reads():
                for s in feeding.get(port, ()):
                    if s not in touched:
                        touched.append(s)
            for s in fed_by_master:
                if s not in touched:
                    touched.append(s)
            for s in touched:
                bring(s, t)
            outputs[master.name] = master.process_next(inputs_of(master.name))
            nxt = master.next_event_time()
            if nxt != t:
                trace.add_row(t, _snapshot(ports, outputs))
        if finish_slaves:
            for s in slaves:
                bring(s, t_end)
        if master.time < t_end:
            outputs[master.name] = master.advance_to(t_end, inputs_of(master.name))
    except Diverged as exc:
        raise _abort(exc, trace)
    return trace


def run_master_slave(master: Federate, slaves: Sequence[Federate], couplings: Sequence[Coupling],
                     t_end: int, *, record: Iterable[tuple[str, str]] | None = None) -> Trace:
    """Let a discrete-event master drive its slaves lazily.

    Before the master handles an event at ``t``, every slave feeding a port
    that event reads (and every slave fed by the master) is advanced to
    ``t``. One row is recorded per distinct event time; slaves are finally
    advanced to ``t_end``.
    """
    return _run_hosted(master, slaves, couplings, t_end, record, finish_slaves=True)


def run_model_exchange(host: Federate, embedded: EmbeddedFederate, couplings: Sequence[Coupling],
                       t_end: int, *, record: Iterable[tuple[str, str]] | None = None) -> Trace:
    """Execute an embedded model synchronously inside the host's event handling.

    The embedded stepper is invoked only at host events and never after the
    last one.
    """
    if embedded.kind is not FederateKind.EMBEDDED:
        raise ConfigError(f"{embedded.name!r} is not an embedded federate")
    return _run_hosted(host, [embedded], couplings, t_end, record, finish_slaves=False)
