"""Delay compensation for the PHIL feedback path.

All compensators are pure step functions ``(state, x) -> (state', y)`` so a
loop can evaluate them speculatively before committing a step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientHistory


@dataclass(frozen=True)
class CompensatorConfig:
    """``method`` is ``none``, ``lowpass``, ``extrapolate`` or ``phase-advance``.

    Times are seconds: ``horizon`` for extrapolation, ``advance`` for the
    phase rotation.
    """

    method: str = "none"
    fc: float = 0.0
    order: int = 1
    horizon: float = 0.0
    f0: float = 50.0
    advance: float = 0.0

    def __post_init__(self):
        if self.method not in ("none", "lowpass", "extrapolate", "phase-advance"):
            raise ConfigError(f"unknown compensator method {self.method!r}")
        if self.method == "lowpass" and not self.fc > 0:
            raise ConfigError("lowpass needs fc > 0")
        if self.method == "extrapolate" and (self.order not in (1, 2) or self.horizon < 0):
            raise ConfigError("extrapolate needs order in {1, 2} and horizon >= 0")
        if self.method == "phase-advance" and not self.f0 > 0:
            raise ConfigError("phase-advance needs f0 > 0")


# --- low-pass ----------------------------------------------------------------

@dataclass(frozen=True)
class LowPassState:
    x: float = 0.0
    y: float = 0.0


def lpf_step(state: LowPassState, x: float, fc: float, dt: float) -> tuple[LowPassState, float]:
    """First-order low-pass, bilinear transform prewarped at ``fc``.

    DC gain is exactly one and the discrete response is -3 dB / -45 deg at
    ``fc``. Requires ``fc < 1 / (4 dt)``.
    """
    if not (dt > 0 and fc > 0):
        raise ConfigError("lpf_step needs dt > 0 and fc > 0")
    if fc >= 1.0 / (4.0 * dt):
        raise ConfigError(f"cutoff {fc} Hz must be below 1/(4 dt) = {1 / (4 * dt)} Hz")
    k = math.tan(math.pi * fc * dt)
    y = (k * (x + state.x) - (k - 1.0) * state.y) / (k + 1.0)
    return LowPassState(x, y), y


# --- extrapolation -----------------------------------------------------------

def extrapolate(history: Sequence[tuple[float, float]], horizon: float, order: int = 1) -> float:
    """Polynomial prediction at ``latest time + horizon``.

    ``history`` holds ``(t, value)`` pairs, equally spaced and oldest first;
    the last ``order + 1`` samples are used (Newton backward differences).
    """
    if order not in (1, 2):
        raise ConfigError("order must be 1 or 2")
    if len(history) < order + 1:
        raise InsufficientHistory(f"order {order} needs {order + 1} samples, got {len(history)}")
    pts = list(history)[-(order + 1):]
    step = pts[-1][0] - pts[-2][0]
    if step <= 0:
        raise ConfigError("history times must increase")
    s = horizon / step
    x = [v for _, v in pts]
    d1 = x[-1] - x[-2]
    if order == 1:
        return x[-1] + s * d1
    d2 = x[-1] - 2.0 * x[-2] + x[-3]
    return x[-1] + s * d1 + 0.5 * s * (s + 1.0) * d2


@dataclass(frozen=True)
class ExtrapolateState:
    history: tuple[tuple[float, float], ...] = ()
    n: int = 0


def extrapolate_step(state: ExtrapolateState, x: float, order: int, horizon: float,
                     dt: float) -> tuple[ExtrapolateState, float, bool]:
    hist = (state.history + ((state.n * dt, x),))[-(order + 1):]
    new = ExtrapolateState(hist, state.n + 1)
    if len(hist) < order + 1:
        return new, x, False
    return new, extrapolate(hist, horizon, order), True


# --- phase advance -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhaseAdvanceState:
    """Ring buffer of the last period of input plus a sample counter."""

    buffer: np.ndarray
    n: int = 0

    @classmethod
    def empty(cls, f0: float, dt: float) -> "PhaseAdvanceState":
        return cls(np.zeros(window_length(f0, dt)))


def window_length(f0: float, dt: float) -> int:
    """Samples in one fundamental period (at least 2)."""
    return max(2, int(round(1.0 / (f0 * dt))))


def fundamental(samples: np.ndarray, first_index: int, f0: float, dt: float) -> complex:
    """Cosine/sine correlation of ``samples`` at ``f0``.

    Returns ``a + j b`` with ``x(t) ~ a cos(w t) + b sin(w t)`` where sample
    ``k`` sits at ``t = (first_index + k) dt``.
    """
    n = len(samples)
    w = 2.0 * math.pi * f0 * dt
    k = first_index + np.arange(n)
    a = 2.0 / n * float(np.dot(samples, np.cos(w * k)))
    b = 2.0 / n * float(np.dot(samples, np.sin(w * k)))
    return complex(a, b)


def phase_advance(state: PhaseAdvanceState, x: float, f0: float, advance: float,
                  dt: float) -> tuple[PhaseAdvanceState, float, bool]:
    """Rotate the fundamental of ``x`` forward by ``2 pi f0 advance``.

    The phasor is extracted by correlation over the last full period and
    re-synthesised at the current sample time shifted by ``advance``. Until
    one period has been seen the input passes through and the third return
    value (``valid``) is False.
    """
    if not f0 > 0:
        raise ConfigError("f0 must be positive")
    buf = state.buffer.copy()
    n = len(buf)
    buf[state.n % n] = x
    new = replace(state, buffer=buf, n=state.n + 1)
    if new.n < n:
        return new, x, False
    first = new.n - n
    ordered = np.roll(buf, -(new.n % n))
    ph = fundamental(ordered, first, f0, dt)
    w = 2.0 * math.pi * f0
    t = state.n * dt + advance
    return new, ph.real * math.cos(w * t) + ph.imag * math.sin(w * t), True


# --- dispatch ----------------------------------------------------------------

def initial_state(config: CompensatorConfig, dt: float):
    if config.method == "lowpass":
        if config.fc >= 1.0 / (4.0 * dt):
            raise ConfigError(f"lowpass cutoff {config.fc} Hz must be below 1/(4 dt) = {1 / (4 * dt)} Hz")
        return LowPassState()
    if config.method == "extrapolate":
        return ExtrapolateState()
    if config.method == "phase-advance":
        return PhaseAdvanceState.empty(config.f0, dt)
    return None


def compensate(config: CompensatorConfig, state, x: float, dt: float) -> tuple[object, float, bool]:
    """One compensator step; returns ``(state', y, valid)``."""
    if config.method == "lowpass":
        state, y = lpf_step(state, x, config.fc, dt)
        return state, y, True
    if config.method == "extrapolate":
        return extrapolate_step(state, x, config.order, config.horizon, dt)
    if config.method == "phase-advance":
        return phase_advance(state, x, config.f0, config.advance, dt)
    return state, x, True
