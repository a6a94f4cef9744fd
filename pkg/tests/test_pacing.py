import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phicosim.errors import ConfigError, OverrunLimit
from phicosim.pacing import MultirateBridge, Pacer, PacingPolicy, Speed, classify, multirate_bridge, pace


class FakeClock:
    """Deterministic wall clock: sleeping and working just move time forward."""

    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, s):
        self.now += s

    work = sleep


class TestClassify:
    def test_examples(self):
        assert classify(0.5e-3, 1e-3) is Speed.FAST
        assert classify(2e-3, 1e-3) is Speed.SLOW
        assert classify(1e-3, 1e-3) is Speed.REAL_TIME

    def test_hysteresis_band(self):
        assert classify(1.04e-3, 1e-3) is Speed.REAL_TIME
        assert classify(0.96e-3, 1e-3) is Speed.REAL_TIME
        assert classify(1.06e-3, 1e-3) is Speed.SLOW

    def test_uses_mean(self):
        assert classify([0.5e-3, 1.5e-3], 1e-3) is Speed.REAL_TIME

    def test_errors(self):
        with pytest.raises(ConfigError):
            classify([], 1e-3)
        with pytest.raises(ConfigError):
            classify(1.0, 0.0)


class TestPolicy:
    @pytest.mark.parametrize("kw", [{"rt_factor": 0.0}, {"overrun_policy": "retry"}, {"max_overruns": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            PacingPolicy(**kw)


class TestPace:
    def test_real_clock_one_second(self):
        timings = pace(lambda k: None, 1e-3, PacingPolicy(), 1.0)
        wall = sum(t.wall for t in timings)
        assert len(timings) == 1000
        assert sum(t.overrun for t in timings) == 0
        # total wall from the first deadline to the last
        total = timings[-1].drift + 1.0
        assert abs(total - 1.0) < 0.05
        assert wall < 1.0

    def test_overrun_limit_at_step_11(self):
        clock = FakeClock()
        policy = PacingPolicy(1.0, "abort", 10)
        with pytest.raises(OverrunLimit) as exc:
            pace(lambda k: clock.work(2e-3), 1e-3, policy, 1.0, clock=clock, sleep=clock.sleep)
        assert exc.value.step == 11 and exc.value.overruns == 11

    def test_unpaced_factor_is_fast(self):
        clock = FakeClock()
        pacer = Pacer(PacingPolicy(rt_factor=1000.0), clock, clock.sleep)
        pacer.mark(0)
        for k in range(1, 1001):
            clock.work(1e-7)
            pacer.mark(k * 1_000_000)
        assert pacer.total_wall == pytest.approx(1e-3)
        assert pacer.simulated == pytest.approx(1.0)
        assert pacer.achieved_rt_factor == pytest.approx(1000.0)
        assert pacer.speed(1e-3) is Speed.FAST
        assert pacer.overruns == 0

    def test_deadlines_do_not_drift(self):
        clock = FakeClock()
        pacer = Pacer(PacingPolicy(), clock, clock.sleep)
        pacer.mark(0)
        for k in range(1, 101):
            clock.work(0.3e-3 if k % 2 else 1.5e-3)
            pacer.mark(k * 1_000_000)
        # overrun steps are caught up by the following short steps
        assert pacer.total_wall == pytest.approx(0.1, abs=2e-3)
        assert pacer.overruns == 50

    def test_repeated_time_is_ignored(self):
        clock = FakeClock()
        pacer = Pacer(PacingPolicy(), clock, clock.sleep)
        pacer.mark(0)
        assert pacer.mark(0) is None
        assert pacer.mark(1_000_000) is not None
        assert pacer.mark(1_000_000) is None
        assert len(pacer.timings) == 1

    @settings(max_examples=40, deadline=None)
    @given(work=st.lists(st.floats(0.0, 3e-3), min_size=1, max_size=60))
    def test_overruns_conserved(self, work):
        clock = FakeClock()
        pacer = Pacer(PacingPolicy(), clock, clock.sleep)
        pacer.mark(0)
        for k, w in enumerate(work, 1):
            clock.work(w)
            pacer.mark(k * 1_000_000)
        flagged = sum(t.overrun for t in pacer.timings)
        assert flagged == pacer.overruns == sum(1 for t in pacer.timings if t.wall > t.budget)
        assert len(pacer.timings) == len(work)


SINE_DT_F, SINE_DT_S = 50e-6, 1e-3


class TestBridge:
    @pytest.mark.parametrize("mode", ["zero-order-hold", "linear-interp"])
    def test_constant(self, mode):
        b = multirate_bridge(1e-4, 4e-4, mode)
        assert np.all(b.upsample(np.full(10, 2.5)) == 2.5)
        assert np.all(multirate_bridge(1e-4, 4e-4, decimation="mean").downsample(np.full(41, 2.5)) == 2.5)

    def test_zoh_staircase(self):
        b = multirate_bridge(1.0, 4.0)
        fast_ramp = np.arange(17.0)
        slow = b.downsample(fast_ramp)
        assert slow.tolist() == [0, 4, 8, 12, 16]
        up = b.upsample(slow)
        assert up.tolist() == [0] * 4 + [4] * 4 + [8] * 4 + [12] * 4 + [16]
        assert np.diff(up[::4]).tolist() == [4.0] * 4

    def test_interp_is_one_slow_step_late(self):
        b = multirate_bridge(1.0, 4.0, "linear-interp")
        up = b.upsample(np.arange(5.0) * 4)
        assert up[4:].tolist() == list(np.arange(13.0))
        assert b.latency == 4.0
        assert multirate_bridge(1.0, 4.0).latency == 0.0

    def test_interp_beats_zoh_at_own_latency(self):
        n_slow = 200
        ts = np.arange(n_slow) * SINE_DT_S
        slow = np.sin(2 * np.pi * 50 * ts)
        errs = {}
        for mode in ("zero-order-hold", "linear-interp"):
            b = multirate_bridge(SINE_DT_F, SINE_DT_S, mode)
            up = b.upsample(slow)
            tf = np.arange(len(up)) * SINE_DT_F
            ref = np.sin(2 * np.pi * 50 * (tf - b.latency))
            skip = 2 * b.m
            errs[mode] = math.sqrt(np.mean((up[skip:] - ref[skip:]) ** 2))
        assert errs["linear-interp"] < errs["zero-order-hold"]
        assert errs["zero-order-hold"] == pytest.approx(0.1231, abs=1e-3)
        assert errs["linear-interp"] == pytest.approx(0.00636, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(m=st.integers(1, 8), n=st.integers(2, 20), mode=st.sampled_from(["zero-order-hold", "linear-interp"]))
    def test_causal(self, m, n, mode):
        b = MultirateBridge(1.0, float(m), mode)
        base = np.arange(n, dtype=float) ** 2
        for j in range((n - 1) * m + 1):
            k = j // m
            # poison every slow sample from the future
            slow = base.copy()
            slow[k + 1:] = np.nan
            assert math.isfinite(b.upsample_at(slow, j))

    def test_mean_decimation(self):
        b = multirate_bridge(1.0, 2.0, decimation="mean")
        assert b.downsample(np.arange(7.0)).tolist() == [0.0, 1.5, 3.5, 5.5]

    @pytest.mark.parametrize("args", [(1e-4, 2.5e-4), (0.0, 1.0), (2.0, 1.0)])
    def test_bad_ratio(self, args):
        with pytest.raises(ConfigError):
            multirate_bridge(*args)

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            multirate_bridge(1.0, 2.0, "cubic")
        with pytest.raises(ConfigError):
            multirate_bridge(1.0, 2.0, decimation="median")
