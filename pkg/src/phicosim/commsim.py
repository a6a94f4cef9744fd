"""Discrete-event network simulation: scheduler, lossy links and flows.

Links are also used to model the remote coupling between geographically
separated simulators, where late commands are detected with
:func:`stamp_and_check`.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, PastEvent
from .kernel import Federate, FederateKind, Port
from .timebase import from_seconds
from .trace import LogEntry, log_entry


class EventKind(enum.Enum):
    MESSAGE_ARRIVAL = "message-arrival"
    TIMER = "timer"
    COMMAND = "command"


@dataclass(order=True)
class NetEvent:
    timestamp: int
    sequence: int = field(default=-1)
    kind: EventKind = field(default=EventKind.TIMER, compare=False)
    payload: dict[str, Any] = field(default_factory=dict, compare=False)
    source: str = field(default="", compare=False)
    destination: str = field(default="", compare=False)
    reads: tuple[str, ...] = field(default=(), compare=False)


class EventScheduler:
    """Pending events ordered by ``(timestamp, sequence)``."""

    def __init__(self):
        self.now = 0
        self._queue: list[tuple[int, int, NetEvent]] = []
        self._counter = 0

    def __len__(self):
        return len(self._queue)

    def schedule(self, event: NetEvent) -> NetEvent:
        if event.timestamp < self.now:
            raise PastEvent(f"event at {event.timestamp} ns is before current time {self.now} ns")
        event.sequence = self._counter
        self._counter += 1
        heapq.heappush(self._queue, (event.timestamp, event.sequence, event))
        return event

    def peek(self) -> NetEvent | None:
        return self._queue[0][2] if self._queue else None

    def pop(self) -> NetEvent:
        _, _, event = heapq.heappop(self._queue)
        self.now = event.timestamp
        return event

    def run_until(self, t_end: int, handler: Callable[[NetEvent], None]) -> list[NetEvent]:
        """Process every event with timestamp <= t_end, then set the clock to t_end."""
        if t_end < self.now:
            raise PastEvent(f"run_until({t_end}) is before current time {self.now}")
        processed = []
        while self._queue and self._queue[0][0] <= t_end:
            event = self.pop()
            handler(event)
            processed.append(event)
        self.now = t_end
        return processed


def schedule(scheduler: EventScheduler, event: NetEvent) -> None:
    scheduler.schedule(event)


def run_until(scheduler: EventScheduler, t_end: int, handler: Callable[[NetEvent], None]) -> list[NetEvent]:
    return scheduler.run_until(t_end, handler)


# --- links -----------------------------------------------------------------

@dataclass(frozen=True)
class Jitter:
    """Additive delay distribution in seconds: ``none``, ``uniform`` or ``normal``.

    The normal variant is truncated at zero by rejection.
    """

    kind: str = "none"
    lo: float = 0.0
    hi: float = 0.0
    mean: float = 0.0
    stddev: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "normal"):
            raise ConfigError(f"unknown jitter kind {self.kind!r}")
        if self.kind == "uniform" and not (0 <= self.lo <= self.hi):
            raise ConfigError("uniform jitter needs 0 <= lo <= hi")
        if self.kind == "normal" and self.stddev < 0:
            raise ConfigError("normal jitter needs stddev >= 0")

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        if self.kind == "normal":
            for _ in range(1000):
                x = float(rng.normal(self.mean, self.stddev))
                if x >= 0.0:
                    return x
            return 0.0
        return 0.0


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for ``stream`` under the scenario ``seed``."""
    digest = hashlib.sha256(stream.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), key]))


@dataclass
class LinkModel:
    """A one-way channel with latency, jitter and random loss.

    Delays are in seconds. With ``fifo`` set, a packet never overtakes the
    previous one on the same link (its arrival is clamped instead).
    """

    link_id: str
    base_latency: float = 0.0
    jitter: Jitter = field(default_factory=Jitter)
    loss_probability: float = 0.0
    seed: int = 0
    fifo: bool = True

    def __post_init__(self):
        if self.base_latency < 0:
            raise ConfigError(f"link {self.link_id!r}: base_latency must be >= 0")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigError(f"link {self.link_id!r}: loss_probability must lie in [0, 1]")
        self.rng = derive_rng(self.seed, f"link:{self.link_id}")
        self.last_arrival = -1
        self.sent = 0
        self.dropped = 0


@dataclass(frozen=True)
class Delivered:
    t_arrive: int
    extra_delay: int


@dataclass(frozen=True)
class Dropped:
    pass


def transmit(link: LinkModel, message: Any, t_send: int) -> Delivered | Dropped:
    """Send ``message`` at ``t_send`` (ns). Draws loss then jitter from the link stream."""
    if t_send < 0:
        raise ConfigError("t_send must be >= 0")
    lost = link.rng.random() < link.loss_probability
    jitter = link.jitter.draw(link.rng)
    link.sent += 1
    if lost:
        link.dropped += 1
        return Dropped()
    t_arrive = t_send + from_seconds(link.base_latency) + from_seconds(jitter)
    if link.fifo and t_arrive < link.last_arrival:
        t_arrive = link.last_arrival
    link.last_arrival = t_arrive
    return Delivered(t_arrive, t_arrive - t_send - from_seconds(link.base_latency))


class Freshness(enum.Enum):
    FRESH = "fresh"
    STALE = "stale"


def stamp_and_check(origination: int, t_apply: int, max_age: int) -> Freshness:
    """Stale iff the command is older than ``max_age`` (all ns) when applied."""
    return Freshness.STALE if (t_apply - origination) > max_age else Freshness.FRESH


# --- federates -------------------------------------------------------------

class EventFederate(Federate):
    """Discrete-event federate built on an :class:`EventScheduler`.

    ``handler(federate, event, inputs)`` handles each event; it may update
    ``federate.values`` (the output ports) and schedule follow-up events.
    """

    kind = FederateKind.DISCRETE_EVENT

    def __init__(self, name: str, inputs: Sequence[Port] = (), outputs: Sequence[Port] = (),
                 handler: Callable[["EventFederate", NetEvent, dict], None] | None = None):
        super().__init__(name, inputs, outputs)
        self.scheduler = EventScheduler()
        self.values = {p.name: p.initial for p in self.outputs.values()}
        self.handler = handler
        self.log: list[LogEntry] = []
        self.processed: list[NetEvent] = []

    def schedule(self, event: NetEvent) -> NetEvent:
        return self.scheduler.schedule(event)

    def handle(self, event: NetEvent, inputs: dict[str, float]) -> None:
        if self.handler is not None:
            self.handler(self, event, inputs)

    def _dispatch(self, event, inputs):
        self.handle(event, inputs)
        self.processed.append(event)

    def _advance(self, t, inputs):
        self.scheduler.run_until(t, lambda ev: self._dispatch(ev, inputs))
        return dict(self.values)

    def next_event_time(self):
        ev = self.scheduler.peek()
        return None if ev is None else ev.timestamp

    def next_event_reads(self):
        ev = self.scheduler.peek()
        return () if ev is None else ev.reads

    def process_next(self, inputs: Mapping[str, float]) -> dict[str, float]:
        event = self.scheduler.pop()
        self.time = event.timestamp
        self.advance_log.append(self.time)
        self._dispatch(event, dict(inputs))
        return dict(self.values)


@dataclass
class Flow:
    """Periodic sampled transfer of one input port to one output port over a link.

    Times are ns. A sample of ``source`` is taken every ``period`` starting at
    ``offset``, scaled by ``gain`` and shifted by ``bias``, and sent over
    ``link``. On arrival the value is written to ``target`` unless it is stale
    and ``stale_policy`` is ``"discard"``.
    """

    flow_id: str
    link: str
    source: str
    target: str
    unit: str = ""
    period: int = 1_000_000
    offset: int = 0
    max_age: int | None = None
    stale_policy: str = "apply"
    gain: float = 1.0
    bias: float = 0.0
    kind: EventKind = EventKind.MESSAGE_ARRIVAL

    def __post_init__(self):
        if self.period <= 0:
            raise ConfigError(f"flow {self.flow_id!r}: period must be positive")
        if self.stale_policy not in ("apply", "discard"):
            raise ConfigError(f"flow {self.flow_id!r}: stale_policy must be 'apply' or 'discard'")


class NetworkFederate(EventFederate):
    """Communication network federate made of links and periodic flows.

    Every send, delivery, drop and stale application is appended to ``log``.
    """

    def __init__(self, name: str, links: Sequence[LinkModel], flows: Sequence[Flow],
                 t_end: int | None = None):
        self.links = {l.link_id: l for l in links}
        self.flows = {f.flow_id: f for f in flows}
        for f in flows:
            if f.link not in self.links:
                raise ConfigError(f"flow {f.flow_id!r} references unknown link {f.link!r}")
        inputs, outputs = [], []
        for f in flows:
            if f.source not in [p.name for p in inputs]:
                inputs.append(Port(f.source, f.unit))
            outputs.append(Port(f.target, f.unit))
        super().__init__(name, inputs, outputs)
        self.t_end = t_end
        self.stale_count = 0
        for f in flows:
            if t_end is None or f.offset <= t_end:
                self.schedule(NetEvent(f.offset, kind=EventKind.TIMER, source=f.flow_id,
                                       payload={"flow": f.flow_id}, reads=(f.source,)))

    def handle(self, event, inputs):
        flow = self.flows[event.payload["flow"]]
        t = event.timestamp
        if event.kind is EventKind.TIMER:
            value = flow.gain * inputs[flow.source] + flow.bias
            outcome = transmit(self.links[flow.link], value, t)
            if isinstance(outcome, Dropped):
                self.log.append(log_entry(t, "dropped", self.name, flow=flow.flow_id, value=value))
            else:
                self.log.append(log_entry(t, "sent", self.name, flow=flow.flow_id, value=value,
                                          arrival=outcome.t_arrive))
                self.schedule(NetEvent(outcome.t_arrive, kind=flow.kind, source=flow.flow_id,
                                       payload={"flow": flow.flow_id, "value": value, "origin": t}))
            nxt = t + flow.period
            if self.t_end is None or nxt <= self.t_end:
                self.schedule(NetEvent(nxt, kind=EventKind.TIMER, source=flow.flow_id,
                                       payload={"flow": flow.flow_id}, reads=(flow.source,)))
            return
        value, origin = event.payload["value"], event.payload["origin"]
        fresh = True
        if flow.max_age is not None:
            fresh = stamp_and_check(origin, t, flow.max_age) is Freshness.FRESH
        if not fresh:
            self.stale_count += 1
            self.log.append(log_entry(t, "stale", self.name, flow=flow.flow_id, value=value,
                                      age=t - origin, applied=flow.stale_policy == "apply"))
        if fresh or flow.stale_policy == "apply":
            self.values[flow.target] = value
        self.log.append(log_entry(t, "delivered", self.name, flow=flow.flow_id, value=value,
                                  age=t - origin))
