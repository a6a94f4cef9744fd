"""Wall-clock pacing, overrun accounting and multi-rate bridging.

Pacing only ever sleeps; it never touches simulation state, so a paced run
produces the same numbers as an unpaced one.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, OverrunLimit

log = logging.getLogger(__name__)

HYSTERESIS = 0.05


@dataclass(frozen=True)
class PacingPolicy:
    rt_factor: float = 1.0
    overrun_policy: str = "log-and-continue"
    max_overruns: int = 0

    def __post_init__(self):
        if not self.rt_factor > 0:
            raise ConfigError("rt_factor must be > 0")
        if self.overrun_policy not in ("abort", "log-and-continue"):
            raise ConfigError(f"unknown overrun policy {self.overrun_policy!r}")
        if self.max_overruns < 0:
            raise ConfigError("max_overruns must be >= 0")


@dataclass(frozen=True)
class StepTiming:
    """Wall-clock record of one paced step (seconds)."""

    step: int
    wall: float
    budget: float
    overrun: bool
    drift: float


class Speed(enum.Enum):
    REAL_TIME = "real-time"
    FAST = "fast"
    SLOW = "slow"


def classify(wall: float | np.ndarray, dt: float, delta: float = HYSTERESIS) -> Speed:
    """Compare the mean measured wall time per step with ``dt``."""
    w = np.atleast_1d(np.asarray(wall, dtype=float))
    if w.size == 0:
        raise ConfigError("classify needs at least one measured step")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    mean = float(w.mean())
    if mean < dt * (1.0 - delta):
        return Speed.FAST
    if mean > dt * (1.0 + delta):
        return Speed.SLOW
    return Speed.REAL_TIME


@dataclass
class Pacer:
    """Stateful pacer driven by simulated time.

    Call :meth:`mark` with each committed simulation time (ns). Deadlines
    are absolute (``start + t / rt_factor``) so sleep inaccuracies do not
    accumulate. ``clock`` and ``sleep`` are injectable for tests.
    """

    policy: PacingPolicy = field(default_factory=PacingPolicy)
    clock: Callable[[], float] = time.perf_counter
    sleep: Callable[[float], None] = time.sleep
    timings: list[StepTiming] = field(default_factory=list)
    overruns: int = 0

    def __post_init__(self):
        self.start = None
        self._wall = None
        self._t = None

    def mark(self, t: int) -> StepTiming | None:
        """Close the step ending at simulated time ``t``; the first call starts the clock."""
        if self.start is None:
            self.start = self._wall = self.clock()
            self._t0 = self._t = t
            return None
        if t <= self._t:
            return None
        now = self.clock()
        k = len(self.timings) + 1
        wall = now - self._wall
        budget = (t - self._t) * 1e-9 / self.policy.rt_factor
        deadline = self.start + (t - self._t0) * 1e-9 / self.policy.rt_factor
        overrun = wall > budget
        self._t = t
        if overrun:
            self.overruns += 1
            log.debug("real-time overrun at step %d: %.6f s > budget %.6f s", k, wall, budget)
            if self.policy.overrun_policy == "abort" and self.overruns > self.policy.max_overruns:
                self.timings.append(StepTiming(k, wall, budget, True, now - deadline))
                raise OverrunLimit(k, self.overruns)
        remaining = deadline - self.clock()
        if remaining > 0:
            self.sleep(remaining)
        self._wall = self.clock()
        timing = StepTiming(k, wall, budget, overrun, self._wall - deadline)
        self.timings.append(timing)
        return timing

    @property
    def total_wall(self) -> float:
        return 0.0 if self.start is None else self._wall - self.start

    @property
    def simulated(self) -> float:
        return 0.0 if self.start is None else (self._t - self._t0) * 1e-9

    @property
    def achieved_rt_factor(self) -> float | None:
        """Simulated seconds per wall second over the paced steps."""
        wall = self.total_wall
        return None if wall <= 0 else self.simulated / wall

    def speed(self, dt: float) -> Speed:
        """Classification of the measured work time per step against a simulated step ``dt``."""
        return classify([t.wall for t in self.timings], dt)


def pace(step_fn: Callable[[int], object], dt: float, policy: PacingPolicy, t_end: float,
         clock=time.perf_counter, sleep=time.sleep) -> list[StepTiming]:
    """Run ``step_fn(k)`` for ``k = 1 .. round(t_end / dt)`` paced to the wall clock."""
    n = int(round(t_end / dt))
    step = round(dt * 1e9)
    pacer = Pacer(policy, clock, sleep)
    pacer.mark(0)
    for k in range(1, n + 1):
        step_fn(k)
        pacer.mark(k * step)
    return pacer.timings


# --- multi-rate bridge -----------------------------------------------------

def _ratio(dt_fast: float, dt_slow: float) -> int:
    if not (dt_fast > 0 and dt_slow > 0):
        raise ConfigError("steps must be positive")
    m = dt_slow / dt_fast
    if abs(m - round(m)) > 1e-9 * m or round(m) < 1:
        raise ConfigError(f"slow step {dt_slow} is not an integer multiple of fast step {dt_fast}")
    return int(round(m))


@dataclass
class MultirateBridge:
    """Adapter between a fast and a slow federate.

    ``upsample`` feeds slow samples to the fast side: ``zero-order-hold``
    holds the latest slow sample; ``linear-interp`` interpolates between the
    two latest slow samples and is therefore one slow step late (see
    ``latency``). ``downsample`` feeds fast samples to the slow side: the
    sample aligned with the slow step, or the mean of the last ``m`` fast
    samples when ``decimation`` is ``"mean"``.
    """

    dt_fast: float
    dt_slow: float
    mode: str = "zero-order-hold"
    decimation: str = "aligned"

    def __post_init__(self):
        if self.mode not in ("zero-order-hold", "linear-interp"):
            raise ConfigError(f"unknown bridge mode {self.mode!r}")
        if self.decimation not in ("aligned", "mean"):
            raise ConfigError(f"unknown decimation {self.decimation!r}")
        self.m = _ratio(self.dt_fast, self.dt_slow)

    @property
    def latency(self) -> float:
        """Systematic delay (seconds) added by the slow-to-fast reconstruction."""
        return self.dt_slow if self.mode == "linear-interp" else 0.0

    def upsample_at(self, slow: np.ndarray, j: int) -> float:
        """Fast-side value at fast index ``j`` given slow samples ``slow[k]`` at ``k * dt_slow``.

        Only slow samples with index ``<= j // m`` are read.
        """
        k, r = divmod(j, self.m)
        if self.mode == "zero-order-hold" or k == 0:
            return float(slow[k])
        return float(slow[k - 1] + (slow[k] - slow[k - 1]) * r / self.m)

    def upsample(self, slow) -> np.ndarray:
        slow = np.asarray(slow, dtype=float)
        n = (len(slow) - 1) * self.m + 1 if len(slow) else 0
        return np.array([self.upsample_at(slow, j) for j in range(n)])

    def downsample(self, fast) -> np.ndarray:
        fast = np.asarray(fast, dtype=float)
        if self.decimation == "aligned":
            return fast[:: self.m].copy()
        out = [fast[0]] if len(fast) else []
        for k in range(1, (len(fast) - 1) // self.m + 1):
            out.append(float(fast[(k - 1) * self.m + 1: k * self.m + 1].mean()))
        return np.array(out)


def multirate_bridge(dt_fast: float, dt_slow: float, mode: str = "zero-order-hold",
                     decimation: str = "aligned") -> MultirateBridge:
    return MultirateBridge(dt_fast, dt_slow, mode, decimation)
