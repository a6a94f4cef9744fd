import copy
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def divider_raw(rs=1.0, rh=2.0, *, delay=50e-6, amplitude=0.0, value=10.0, duration=0.05, **phil):
    """Scenario mapping for a source behind ``rs`` split from a resistive HuT ``rh``."""
    source = {"kind": "V", "name": "vs", "a": "s", "b": "0", "value": value}
    if amplitude:
        source.update(amplitude=amplitude, frequency=50.0)
    return {
        "name": "divider",
        "duration": duration,
        "dt": 50e-6,
        "sim": {"coupling_node": "pcc", "elements": [
            source, {"kind": "R", "name": "rs", "a": "s", "b": "pcc", "value": rs}]},
        "hut": {"coupling_node": "pcc", "elements": [
            {"kind": "R", "name": "rh", "a": "pcc", "b": "0", "value": rh}]},
        "phil": {"amplifier": {"delay": delay, "bandwidth": 1e6}, **phil},
    }


@pytest.fixture
def divider():
    return lambda *a, **kw: copy.deepcopy(divider_raw(*a, **kw))


@pytest.fixture
def scenario_files():
    return sorted(SCENARIOS.glob("*.toml"))
