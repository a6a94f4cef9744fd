"""Scenario files: TOML text validated against strict models.

Unknown keys are rejected. Structural errors (types, ranges, unknown keys)
and semantic errors (unresolved ids, unit mismatches) are collected and
raised together as one :class:`~phicosim.errors.ValidationError`.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from pathlib import Path
from typing import Any, Literal, Optional

import pydantic
from pydantic import BaseModel, ConfigDict, Field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ParseError, ValidationError
from ..timebase import from_seconds

GRID = "grid"
NETWORK = "network"
LOOP_PORTS = {"v_ref": "V", "v_amp": "V", "i_hut": "A", "i_fb": "A"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ElementSpec(_Strict):
    """Two-terminal element. Sources: ``value + amplitude * sin(2 pi frequency t + phase)``."""

    kind: Literal["R", "L", "C", "V", "I"]
    name: str = Field(min_length=1)
    a: str
    b: str
    value: float = 0.0
    amplitude: float = 0.0
    frequency: float = Field(0.0, ge=0, description="Hz")
    phase: float = Field(0.0, description="rad")
    port: Optional[str] = Field(None, description="controlled source input port name")
    initial: float = 0.0


class CircuitSpec(_Strict):
    ground: str = "0"
    coupling_node: Optional[str] = None
    elements: list[ElementSpec] = Field(min_length=1)


class AmplifierSpec(_Strict):
    family: Literal["linear", "switched-mode", "generator"] = "linear"
    gain: float = Field(1.0, gt=0)
    delay: Optional[float] = Field(None, ge=0, description="s; family preset when omitted")
    bandwidth: Optional[float] = Field(None, gt=0, description="Hz; family preset when omitted")
    slew_rate: Optional[float] = Field(None, gt=0, description="units/s")
    saturation: Optional[float] = Field(None, gt=0)


class CompensatorSpec(_Strict):
    method: Literal["none", "lowpass", "extrapolate", "phase-advance"] = "none"
    fc: float = Field(0.0, ge=0, description="Hz")
    order: Literal[1, 2] = 1
    horizon: float = Field(0.0, ge=0, description="s")
    f0: float = Field(50.0, gt=0, description="Hz")
    advance: float = Field(0.0, description="s")


class ImpedanceSpec(_Strict):
    r: float = Field(0.0, ge=0)
    l: float = Field(0.0, ge=0)


class PhilSpec(_Strict):
    algorithm: Literal["itm-voltage", "itm-current", "pcd", "dim"] = "itm-voltage"
    sensor_delay: float = Field(0.0, ge=0, description="s")
    amplifier: AmplifierSpec = Field(default_factory=AmplifierSpec)
    compensator: CompensatorSpec = Field(default_factory=CompensatorSpec)
    zab: ImpedanceSpec = Field(default_factory=ImpedanceSpec)
    zstar: ImpedanceSpec = Field(default_factory=ImpedanceSpec)


class JitterSpec(_Strict):
    kind: Literal["none", "uniform", "normal"] = "none"
    lo: float = Field(0.0, ge=0)
    hi: float = Field(0.0, ge=0)
    mean: float = 0.0
    stddev: float = Field(0.0, ge=0)


class LinkSpec(_Strict):
    id: str = Field(min_length=1)
    base_latency: float = Field(0.0, ge=0, description="s")
    jitter: JitterSpec = Field(default_factory=JitterSpec)
    loss_probability: float = Field(0.0, ge=0, le=1)
    fifo: bool = True


class FlowSpec(_Strict):
    id: str = Field(min_length=1)
    link: str
    source: str = Field(description="network input port sampled by the flow")
    target: str = Field(description="network output port written on delivery")
    unit: Literal["V", "A", ""] = ""
    period: float = Field(gt=0, description="s")
    offset: float = Field(0.0, ge=0, description="s")
    max_age: Optional[float] = Field(None, ge=0, description="s")
    stale_policy: Literal["apply", "discard"] = "apply"
    gain: float = 1.0
    bias: float = 0.0


class NetworkSpec(_Strict):
    links: list[LinkSpec] = Field(default_factory=list)
    flows: list[FlowSpec] = Field(default_factory=list)


class CouplingSpec(_Strict):
    source: str = Field(description="federate.port")
    sink: str = Field(description="federate.port")
    link: Optional[str] = None


class SyncSpec(_Strict):
    strategy: Literal["time-stepped", "global-event-driven", "master-slave", "model-exchange"] = "time-stepped"
    interval: Optional[float] = Field(None, gt=0, description="s; time-stepped sync interval, default dt")


class PacingSpec(_Strict):
    enabled: bool = False
    rt_factor: float = Field(1.0, gt=0)
    overrun_policy: Literal["abort", "log-and-continue"] = "log-and-continue"
    max_overruns: int = Field(0, ge=0)


class MetricsSpec(_Strict):
    warmup: float = Field(0.0, ge=0, description="s excluded from every metric window")
    steady_window: Optional[float] = Field(None, gt=0, description="s at the end of the run; default all after warm-up")
    growth_factor: float = Field(10.0, gt=1)
    f0: Optional[float] = Field(None, gt=0, description="Hz; enables amplitude/phase errors")
    reference_amplitude: Optional[float] = Field(None, gt=0, description="divergence reference without an oracle")


class ThresholdSpec(_Strict):
    signal: str
    level: float
    direction: Literal["rising", "falling", "both"] = "both"


class Scenario(_Strict):
    """One co-simulation experiment."""

    name: str = Field(min_length=1)
    seed: int = Field(0, ge=0, lt=2**64)
    duration: float = Field(gt=0, description="s")
    dt: float = Field(50e-6, gt=0, description="s; native power step")
    sim: CircuitSpec
    hut: Optional[CircuitSpec] = None
    phil: Optional[PhilSpec] = None
    network: Optional[NetworkSpec] = None
    couplings: list[CouplingSpec] = Field(default_factory=list)
    sync: SyncSpec = Field(default_factory=SyncSpec)
    pacing: PacingSpec = Field(default_factory=PacingSpec)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)
    thresholds: list[ThresholdSpec] = Field(default_factory=list)

    @property
    def has_loop(self) -> bool:
        return self.hut is not None

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (independent of file formatting)."""
        return hashlib.sha256(canonical_json(self).encode()).hexdigest()


def canonical_json(scenario: Scenario) -> str:
    return json.dumps(scenario.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def json_schema() -> dict:
    return Scenario.model_json_schema()


# --- port catalogue --------------------------------------------------------

def _nodes(circuit: CircuitSpec) -> list[str]:
    out = []
    for e in circuit.elements:
        for n in (e.a, e.b):
            if n != circuit.ground and n not in out:
                out.append(n)
    return out


def circuit_outputs(circuit: CircuitSpec, prefix: str = "") -> dict[str, str]:
    out = {f"{prefix}v_{n}": "V" for n in _nodes(circuit)}
    out.update({f"{prefix}i_{e.name}": "A" for e in circuit.elements})
    return out


def circuit_inputs(circuit: CircuitSpec) -> dict[str, str]:
    return {e.port: ("A" if e.kind == "I" else "V") for e in circuit.elements if e.port}


def federate_ports(s: Scenario) -> dict[str, tuple[dict[str, str], dict[str, str]]]:
    """``{federate: (inputs, outputs)}`` with units, as the harness will build them."""
    if s.has_loop:
        outputs = dict(LOOP_PORTS)
        outputs.update(circuit_outputs(s.sim, "sim_"))
    else:
        outputs = circuit_outputs(s.sim)
    ports = {GRID: (circuit_inputs(s.sim), outputs)}
    if s.network is not None:
        ins, outs = {}, {}
        for f in s.network.flows:
            ins.setdefault(f.source, f.unit)
            outs[f.target] = f.unit
        ports[NETWORK] = (ins, outs)
    return ports


# --- semantic checks -------------------------------------------------------

def _dupes(items):
    seen, out = set(), []
    for x in items:
        if x in seen and x not in out:
            out.append(x)
        seen.add(x)
    return out


def _multiple(value: float, step: float) -> bool:
    a, b = from_seconds(value), from_seconds(step)
    return b > 0 and a % b == 0


def _check_circuit(c: CircuitSpec, where: str, errors: list):
    for name in _dupes(e.name for e in c.elements):
        errors.append((f"{where}.elements", f"duplicate element name {name!r}"))
    for i, e in enumerate(c.elements):
        loc = f"{where}.elements.{i}"
        if e.name.startswith("__"):
            errors.append((f"{loc}.name", "names starting with '__' are reserved"))
        if e.a == e.b:
            errors.append((loc, f"element {e.name!r} connects node {e.a!r} to itself"))
        if e.kind in ("L", "C") and not e.value > 0:
            errors.append((f"{loc}.value", f"{e.kind} value must be > 0"))
        if e.kind == "R" and e.value < 0:
            errors.append((f"{loc}.value", "resistance must be >= 0"))
        if e.port is not None and e.kind not in ("V", "I"):
            errors.append((f"{loc}.port", "only sources can be driven by a port"))
    if c.ground not in {n for e in c.elements for n in (e.a, e.b)}:
        errors.append((f"{where}.ground", f"ground node {c.ground!r} does not appear in any element"))
    if c.coupling_node is not None and c.coupling_node not in _nodes(c):
        errors.append((f"{where}.coupling_node", f"unknown node {c.coupling_node!r}"))


def _split(ref: str):
    fed, _, port = ref.partition(".")
    return fed, port


def semantic_errors(s: Scenario) -> list[tuple[str, str]]:
    errors: list[tuple[str, str]] = []
    _check_circuit(s.sim, "sim", errors)
    if s.hut is not None:
        _check_circuit(s.hut, "hut", errors)
        for side in ("sim", "hut"):
            if getattr(s, side).coupling_node is None:
                errors.append((f"{side}.coupling_node", "required when a hut circuit is present"))
        for i, e in enumerate(s.hut.elements):
            if e.port is not None:
                errors.append((f"hut.elements.{i}.port", "hut sources cannot be controlled externally"))
    elif s.phil is not None:
        errors.append(("phil", "a PHIL interface needs a hut circuit"))

    if not _multiple(s.duration, s.dt):
        errors.append(("duration", f"must be a multiple of dt ({s.dt} s)"))
    if s.metrics.warmup >= s.duration:
        errors.append(("metrics.warmup", "must be shorter than duration"))
    if s.metrics.steady_window is not None and s.metrics.steady_window > s.duration:
        errors.append(("metrics.steady_window", "longer than duration"))
    if s.sync.strategy == "time-stepped":
        interval = s.sync.interval or s.dt
        if not _multiple(interval, s.dt):
            errors.append(("sync.interval", f"must be a multiple of dt ({s.dt} s)"))
        elif not _multiple(s.duration, interval):
            errors.append(("sync.interval", "must divide duration"))
    elif s.sync.interval is not None:
        errors.append(("sync.interval", f"only used by time-stepped sync, not {s.sync.strategy!r}"))
    if s.sync.strategy in ("master-slave", "model-exchange") and s.network is None:
        errors.append(("sync.strategy", f"{s.sync.strategy!r} needs a network federate as master"))
    if s.phil is not None and s.phil.compensator.method == "lowpass":
        if not 0 < s.phil.compensator.fc < 1.0 / (4.0 * s.dt):
            errors.append(("phil.compensator.fc", f"must lie in (0, {1 / (4 * s.dt)}) Hz for dt = {s.dt} s"))

    if s.network is not None:
        links = [l.id for l in s.network.links]
        for d in _dupes(links):
            errors.append(("network.links", f"duplicate link id {d!r}"))
        for d in _dupes(f.id for f in s.network.flows):
            errors.append(("network.flows", f"duplicate flow id {d!r}"))
        for d in _dupes(f.target for f in s.network.flows):
            errors.append(("network.flows", f"two flows write port {d!r}"))
        units = {}
        for i, f in enumerate(s.network.flows):
            if f.link not in links:
                errors.append((f"network.flows.{i}.link", f"unknown link {f.link!r}"))
            if f.source in units and units[f.source] != f.unit:
                errors.append((f"network.flows.{i}.unit", f"port {f.source!r} used with units "
                                                          f"{units[f.source]!r} and {f.unit!r}"))
            units.setdefault(f.source, f.unit)
        for i, l in enumerate(s.network.links):
            if l.jitter.kind == "uniform" and l.jitter.lo > l.jitter.hi:
                errors.append((f"network.links.{i}.jitter", "lo must not exceed hi"))

    ports = federate_ports(s)
    seen_sinks = {}
    for i, c in enumerate(s.couplings):
        loc = f"couplings.{i}"
        sf, sp = _split(c.source)
        kf, kp = _split(c.sink)
        ok = True
        if sf not in ports or sp not in ports[sf][1]:
            errors.append((f"{loc}.source", f"unknown output port {c.source!r}"))
            ok = False
        if kf not in ports or kp not in ports[kf][0]:
            errors.append((f"{loc}.sink", f"unknown input port {c.sink!r}"))
            ok = False
        if ok:
            su, ku = ports[sf][1][sp], ports[kf][0][kp]
            if su != ku:
                errors.append((loc, f"unit mismatch: {c.source} [{su or '-'}] -> {c.sink} [{ku or '-'}]"))
        if c.sink in seen_sinks:
            errors.append((f"{loc}.sink", f"{c.sink} already driven by {seen_sinks[c.sink]}"))
        seen_sinks[c.sink] = c.source
        if c.link is not None and (s.network is None or c.link not in [l.id for l in s.network.links]):
            errors.append((f"{loc}.link", f"unknown link {c.link!r}"))

    grid_out = ports[GRID][1]
    for i, t in enumerate(s.thresholds):
        if t.signal not in grid_out:
            errors.append((f"thresholds.{i}.signal", f"unknown grid output {t.signal!r}"))
    return errors


# --- loading ---------------------------------------------------------------

_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")


def _loc(parts) -> str:
    return ".".join(str(p) for p in parts)


def parse_text(text: str, path=None) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = _LOC.search(msg)
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ParseError(_LOC.sub("", msg).strip(), path, line, col) from None


def validate(raw: dict[str, Any]) -> Scenario:
    """Validate a parsed scenario mapping; all problems are reported at once."""
    try:
        scenario = Scenario.model_validate(raw)
    except pydantic.ValidationError as exc:
        errors = []
        for e in exc.errors():
            loc = _loc(e["loc"])
            msg = e["msg"]
            if e["type"] == "extra_forbidden":
                msg = f"unknown key {loc!r}"
            errors.append((loc, msg))
        raise ValidationError(errors) from None
    errors = semantic_errors(scenario)
    if errors:
        raise ValidationError(errors)
    return scenario


def loads_scenario(text: str, path=None) -> Scenario:
    return validate(parse_text(text, path))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario: {exc.strerror}", path) from None
    return loads_scenario(text, path)


def load_raw(path) -> dict:
    path = Path(path)
    try:
        return parse_text(path.read_text(encoding="utf-8"), path)
    except OSError as exc:
        raise ParseError(f"cannot read scenario: {exc.strerror}", path) from None


def omega(e: ElementSpec) -> float:
    return 2.0 * math.pi * e.frequency
