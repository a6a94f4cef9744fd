"""Accuracy and stability measures on sampled signals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, DegenerateReference


def rms_error(signal, reference, window: slice | None = None) -> float:
    """``100 * RMS(signal - reference) / RMS(reference)`` in percent."""
    x = np.asarray(signal, dtype=float)
    r = np.asarray(reference, dtype=float)
    if window is not None:
        x, r = x[window], r[window]
    if x.shape != r.shape:
        raise ConfigError(f"signal and reference differ in length ({len(x)} vs {len(r)})")
    ref = math.sqrt(float(np.mean(r * r))) if len(r) else 0.0
    if ref == 0.0:
        raise DegenerateReference("reference RMS is zero")
    return 100.0 * math.sqrt(float(np.mean((x - r) ** 2))) / ref


@dataclass(frozen=True)
class Stability:
    verdict: str
    onset: Optional[int] = None  # ns
    signal: Optional[str] = None

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"


def detect_instability(signal, times: Sequence[int], reference_amplitude: float,
                       growth_factor: float = 10.0, name: str | None = None) -> Stability:
    """Unstable at the first sample that is non-finite or exceeds ``growth_factor * reference``."""
    if not reference_amplitude > 0:
        raise ConfigError("reference amplitude must be > 0")
    x = np.asarray(signal, dtype=float)
    bad = ~np.isfinite(x)
    bad[~bad] = np.abs(x[~bad]) > growth_factor * reference_amplitude
    hits = np.flatnonzero(bad)
    if len(hits) == 0:
        return Stability("stable")
    return Stability("unstable", int(times[hits[0]]), name)


def phasor(x, dt: float, f0: float) -> complex:
    """Complex amplitude of ``x`` at ``f0`` (``x ~ Re(P e^{j w t})``), over whole periods."""
    x = np.asarray(x, dtype=float)
    per = 1.0 / (f0 * dt)
    n = int(math.floor(len(x) / per) * per) if len(x) >= per else len(x)
    n = max(n, 1)
    x = x[-n:]
    k = np.arange(n)
    return complex(2.0 / n * np.sum(x * np.exp(-2j * math.pi * f0 * dt * k)))


def phasor_errors(signal, reference, dt: float, f0: float) -> tuple[float, float]:
    """``(amplitude error %, phase error deg)`` of ``signal`` relative to ``reference`` at ``f0``."""
    p = phasor(signal, dt, f0)
    q = phasor(reference, dt, f0)
    if q == 0:
        raise DegenerateReference("reference has no component at f0")
    return 100.0 * (abs(p) / abs(q) - 1.0), math.degrees(np.angle(p / q))


@dataclass
class Metrics:
    """Everything a run reports. Times are seconds; ``None`` means not applicable."""

    name: str
    seed: int
    scenario_hash: str
    strategy: str
    verdict: str = "stable"
    onset: Optional[float] = None
    onset_signal: Optional[str] = None
    rms_error: dict[str, Optional[float]] = field(default_factory=dict)
    amplitude_error: Optional[float] = None
    phase_error: Optional[float] = None
    window: tuple[float, float] = (0.0, 0.0)
    loop_delay: Optional[float] = None
    residual_delay: Optional[float] = None
    messages_sent: int = 0
    messages_dropped: int = 0
    stale_commands: int = 0
    crossings: int = 0
    overruns: int = 0
    achieved_rt_factor: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        d = dict(d)
        d["window"] = tuple(d.get("window", (0.0, 0.0)))
        return cls(**d)
