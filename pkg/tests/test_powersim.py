import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phicosim.errors import ConfigError, SingularTopology, UnsupportedElement
from phicosim.powersim import (C, CircuitFederate, CircuitModel, Element, I, L, R, ThresholdDetector, V,
                               build_state_space, detect_threshold, merge_netlists, solve_monolithic, step)

MS = 1_000_000
W50 = 2 * math.pi * 50


def rl_loop(r=1.0, l=1e-3, v=10.0):
    return [V("vs", "s", "0", v), R("r", "s", "m", r), L("l", "m", "0", l)]


def run(model, n, inputs=None):
    for _ in range(n):
        model, out = step(model, inputs or {})
    return model, out


class TestBuild:
    def test_resistive_loop_is_algebraic(self):
        ss = build_state_space([V("vs", "s", "0", 10.0), R("r", "s", "0", 1.0)])
        assert ss.states == ()
        out = CircuitModel(ss).outputs()
        assert out["v_s"] == pytest.approx(10.0)
        assert out["i_r"] == pytest.approx(10.0)
        # source current is measured a -> b through the source, i.e. against the loop current
        assert out["i_vs"] == pytest.approx(-10.0)

    def test_rl_matrices(self):
        ss = build_state_space(rl_loop(r=2.0, l=0.5))
        assert ss.states == ("l",)
        assert ss.A == pytest.approx(np.array([[-4.0]]))
        assert ss.B == pytest.approx(np.array([[2.0]]))

    def test_disconnected_node(self):
        net = [V("vs", "s", "0", 1.0), R("r", "s", "0", 1.0), R("x", "p", "q", 1.0)]
        with pytest.raises(SingularTopology):
            build_state_space(net)

    def test_missing_ground(self):
        with pytest.raises(SingularTopology):
            build_state_space([R("r", "a", "b", 1.0)])

    def test_voltage_source_loop(self):
        with pytest.raises(SingularTopology):
            build_state_space([V("a", "s", "0", 1.0), V("b", "s", "0", 2.0)])

    def test_unsupported_kind(self):
        with pytest.raises(UnsupportedElement):
            build_state_space([Element("D", "d", "a", "0")])

    @pytest.mark.parametrize("net", [
        [R("r", "a", "0", 1.0), R("r", "a", "0", 2.0)],
        [R("r", "a", "0", -1.0)],
        [L("l", "a", "0", 0.0)],
        [R("r", "a", "a", 1.0), R("q", "a", "0", 1.0)],
        [Element("R", "r", "a", "0", 1.0, port="p")],
    ])
    def test_bad_elements(self, net):
        with pytest.raises(ConfigError):
            build_state_space(net)

    def test_output_units(self):
        ss = build_state_space(rl_loop())
        units = dict(zip(ss.outputs, ss.output_units))
        assert units["v_m"] == "V" and units["i_l"] == "A"


class TestStep:
    def test_zero_circuit_stays_zero(self):
        net = [R("r", "a", "0", 1.0), L("l", "a", "b", 1e-3), C("c", "b", "0", 1e-6)]
        model, out = run(CircuitModel.from_netlist(net), 200)
        assert np.all(model.x == 0.0)
        assert all(v == 0.0 for v in out.values())

    def test_rl_charging_at_10ms(self):
        model, out = run(CircuitModel.from_netlist(rl_loop(), dt=10e-6), 1000)
        assert model.t == 10 * MS
        assert out["i_l"] == pytest.approx(10 * (1 - math.exp(-10)), rel=1e-3)

    def test_convergence_order(self):
        def max_err(dt):
            model = CircuitModel.from_netlist(rl_loop(), dt=dt)
            worst = 0.0
            while model.t < 5 * MS:
                model, out = step(model, {})
                exact = 10 * (1 - math.exp(-model.t * 1e-9 / 1e-3))
                worst = max(worst, abs(out["i_l"] - exact))
            return worst

        ratio = max_err(20e-6) / max_err(10e-6)
        assert 3.5 <= ratio <= 4.5

    def test_lc_energy_conserved(self):
        l, c = 1e-3, 1e-6
        net = [L("l", "a", "0", l), C("c", "a", "0", c, initial=1.0)]
        model = CircuitModel.from_netlist(net, dt=1e-6)
        e0 = 0.5 * c * 1.0
        for _ in range(20_000):
            model, out = step(model, {})
        e = 0.5 * l * out["i_l"] ** 2 + 0.5 * c * out["v_a"] ** 2
        assert abs(e - e0) / e0 < 1e-3

    def test_controlled_source(self):
        net = [V("vs", "s", "0", port="u"), R("r", "s", "0", 2.0)]
        model = CircuitModel.from_netlist(net)
        assert model.system.input_ports == {"u": 0}
        model, out = step(model, {"u": 4.0})
        assert out["i_r"] == pytest.approx(2.0)

    def test_step_rejects_other_dt(self):
        model = CircuitModel.from_netlist(rl_loop(), dt=1e-4)
        with pytest.raises(ConfigError):
            step(model, {}, dt=2e-4)

    def test_determinism(self):
        a, _ = run(CircuitModel.from_netlist(rl_loop()), 321)
        b, _ = run(CircuitModel.from_netlist(rl_loop()), 321)
        assert a.x.tobytes() == b.x.tobytes()

    def test_stepper_covers_elapsed_time(self):
        model = CircuitModel.from_netlist(rl_loop(), dt=1e-4)
        f = model.stepper()
        m1, out = f(model, {}, 1e-3)
        m2, _ = run(model, 10)
        assert m1.t == m2.t and m1.x.tolist() == m2.x.tolist()
        with pytest.raises(ConfigError):
            f(model, {}, 1.5e-4)

    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(-100, 100, allow_nan=False), v=st.floats(0.1, 50), i=st.floats(-5, 5))
    def test_linearity(self, alpha, v, i):
        def outputs(scale):
            net = [V("vs", "s", "0", scale * v, amplitude=scale * v, omega=W50),
                   R("r", "s", "m", 1.0), L("l", "m", "0", 1e-3), C("c", "m", "0", 1e-4),
                   I("is", "0", "m", scale * i)]
            _, out = run(CircuitModel.from_netlist(net, dt=1e-4), 50)
            return np.array(list(out.values()))

        base, scaled = outputs(1.0), outputs(alpha)
        assert np.allclose(scaled, alpha * base, rtol=1e-9, atol=1e-9 * (1 + np.abs(alpha * base).max()))


class TestThreshold:
    def test_midpoint(self):
        c = detect_threshold(ThresholdDetector("v", 1.0, "rising"), 0.9, 1.1, 0, 50_000)
        assert c is not None and c.t == 25_000 and c.direction == "rising"

    def test_wrong_direction(self):
        assert detect_threshold(ThresholdDetector("v", 1.0, "rising"), 1.1, 0.9, 0, 10) is None

    def test_touching_is_not_a_crossing(self):
        d = ThresholdDetector("v", 1.0)
        assert detect_threshold(d, 1.0, 1.0, 0, 10) is None
        assert detect_threshold(d, 0.5, 1.0, 0, 10) is None
        assert detect_threshold(d, 1.0, 1.5, 0, 10) is None

    def test_falling_both(self):
        c = detect_threshold(ThresholdDetector("v", 0.0), 3.0, -1.0, 100, 200)
        assert c.direction == "falling" and c.t == 175

    def test_bad_direction(self):
        with pytest.raises(ConfigError):
            ThresholdDetector("v", 1.0, "up")

    def test_federate_logs_crossings(self):
        net = [V("vs", "s", "0", 10.0), R("r", "s", "m", 1.0), L("l", "m", "0", 1e-3)]
        fed = CircuitFederate("g", CircuitModel.from_netlist(net, dt=1e-5),
                              [ThresholdDetector("i_l", 5.0, "rising")])
        fed.advance_to(5 * MS, {})
        assert len(fed.log) == 1
        # i = 10(1 - exp(-t/tau)) reaches 5 A at tau ln 2
        assert fed.log[0].t == pytest.approx(1e-3 * math.log(2) * 1e9, abs=10_000)


class TestMonolithic:
    def steady(self, trace, col, last=400):
        return trace.column(col)[-last:]

    def test_divider(self):
        tr = solve_monolithic([V("vs", "s", "0", 10.0), R("rs", "s", "pcc", 1.0)], "pcc",
                              [R("rh", "pcc", "0", 1.0)], "pcc", 10 * MS)
        assert tr.column("v")[-1] == pytest.approx(5.0)
        assert tr.column("i")[-1] == pytest.approx(5.0)

    def test_sine_amplitude(self):
        tr = solve_monolithic([V("vs", "s", "0", amplitude=10.0, omega=W50), R("rs", "s", "pcc", 1.0)], "pcc",
                              [R("rh", "pcc", "0", 1.0)], "pcc", 40 * MS, 10e-6)
        assert np.abs(self.steady(tr, "v", 2000)).max() == pytest.approx(5.0, rel=1e-4)

    def test_rl_load_amplitude(self):
        zs, zh = 1.0, complex(1.0, W50 * 1e-3)
        expected = 10.0 / abs(zs + zh)
        tr = solve_monolithic([V("vs", "s", "0", amplitude=10.0, omega=W50), R("rs", "s", "pcc", 1.0)], "pcc",
                              [R("rh", "pcc", "x", 1.0), L("lh", "x", "0", 1e-3)], "pcc", 60 * MS, 10e-6)
        assert np.abs(self.steady(tr, "i", 2000)).max() == pytest.approx(expected, rel=1e-3)

    def test_kcl_at_every_step(self):
        sim = [V("vs", "s", "0", 2.0, amplitude=10.0, omega=W50), R("rs", "s", "a", 1.0), L("ls", "a", "pcc", 2e-3)]
        hut = [R("rh", "pcc", "0", 3.0), C("ch", "pcc", "0", 1e-4)]
        tr = solve_monolithic(sim, "pcc", hut, "pcc", 20 * MS)
        # current into the HuT node splits into the resistor and capacitor branches
        resid = tr.column("i") - tr.column("i_hut:rh") - tr.column("i_hut:ch")
        assert np.abs(resid).max() < 1e-9
        # series branch carries the same current as the coupling ammeter
        assert np.abs(tr.column("i_sim:ls") - tr.column("i")).max() < 1e-9

    def test_controlled_source_rejected(self):
        with pytest.raises(ConfigError):
            merge_netlists([V("vs", "s", "0", port="u"), R("r", "s", "p", 1.0)], "0", "p",
                           [R("h", "p", "0", 1.0)], "0", "p")
