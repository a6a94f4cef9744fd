import json
import subprocess
import sys

import pytest

from conftest import SCENARIOS, divider_raw
from phicosim.harness.cli import main
from phicosim.harness.output import load_metrics


def write_toml(path, raw):
    """Tiny TOML writer for the flat divider mapping used in these tests."""
    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, dict):
            return "{ " + ", ".join(f"{k} = {val(x)}" for k, x in v.items()) + " }"
        if isinstance(v, list):
            return "[" + ", ".join(val(x) for x in v) + "]"
        return repr(v)

    top = [f"{k} = {val(v)}" for k, v in raw.items() if not isinstance(v, dict)]
    tables = [f"[{k}]\n" + "\n".join(f"{kk} = {val(vv)}" for kk, vv in v.items())
              for k, v in raw.items() if isinstance(v, dict)]
    path.write_text("\n".join(top) + "\n\n" + "\n\n".join(tables) + "\n")
    return path


class TestRun:
    def test_writes_outputs_and_plots(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["run", str(SCENARIOS / "itm_divider.toml"), "--out", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"trace.csv", "exchanges.csv", "events.csv", "metrics.json", "report.txt"} <= names
        assert any(n.endswith(".png") for n in names)
        for png in out.glob("*.png"):
            assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert "scenario hash" in capsys.readouterr().out

    def test_unstable_verdict_exits_zero(self, tmp_path):
        path = write_toml(tmp_path / "u.toml", divider_raw(2.0, 1.0, duration=0.02))
        assert main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plots"]) == 0
        assert load_metrics(tmp_path / "o" / "metrics.json").verdict == "unstable"

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PHICOSIM_OUT", str(tmp_path / "env"))
        assert main(["run", str(SCENARIOS / "minimal.toml"), "--no-plots"]) == 0
        assert len(list((tmp_path / "env").glob("*/trace.csv"))) == 1

    def test_overrides(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", str(SCENARIOS / "remote_control.toml"), "--out", str(out), "--no-plots",
                     "--seed", "9", "--strategy", "global-event-driven"]) == 0
        m = load_metrics(out / "metrics.json")
        assert m.seed == 9 and m.strategy == "global-event-driven"

    def test_overrun_abort_exits_two(self, tmp_path, capsys):
        raw = divider_raw(duration=0.01)
        raw["pacing"] = {"enabled": True, "rt_factor": 1e6, "overrun_policy": "abort", "max_overruns": 0}
        path = write_toml(tmp_path / "p.toml", raw)
        assert main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plots"]) == 2
        assert "OverrunLimit" in capsys.readouterr().err
        # the same scenario unpaced runs fine
        assert main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plots", "--no-pacing"]) == 0


class TestOtherCommands:
    def test_validate_ok(self, capsys):
        assert main(["validate", str(SCENARIOS / "dim_rescue.toml")]) == 0
        assert "ok" in capsys.readouterr().out

    def test_validate_bad_file(self, tmp_path, capsys):
        raw = divider_raw()
        raw["duration"] = -1.0
        assert main(["validate", str(write_toml(tmp_path / "b.toml", raw))]) == 1
        assert "duration" in capsys.readouterr().err

    def test_validate_parse_error(self, tmp_path):
        p = tmp_path / "x.toml"
        p.write_text("name = \n")
        assert main(["validate", str(p)]) == 1

    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["run", "x.toml", "--strategy", "nope"]])
    def test_usage_errors_exit_one(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1

    def test_report(self, tmp_path, capsys):
        out = tmp_path / "o"
        main(["run", str(SCENARIOS / "itm_divider.toml"), "--out", str(out), "--no-plots"])
        capsys.readouterr()
        assert main(["report", str(out / "metrics.json")]) == 0
        assert capsys.readouterr().out == (out / "report.txt").read_text()
        assert main(["report", str(tmp_path / "missing.json")]) == 1
        (tmp_path / "junk.json").write_text("[1, 2]")
        assert main(["report", str(tmp_path / "junk.json")]) == 1

    def test_sweep(self, tmp_path):
        path = write_toml(tmp_path / "d.toml", divider_raw(rh=1.0, duration=0.02))
        out = tmp_path / "s"
        assert main(["sweep", str(path), "--axis", "sim.elements.rs.value", "--values", "0.5,2.0",
                     "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3 and ",stable," in lines[1] and ",unstable," in lines[2]
        assert (out / "sweep.png").read_bytes()[:4] == b"\x89PNG"

    def test_sweep_axis_value_mismatch(self, tmp_path):
        path = write_toml(tmp_path / "d.toml", divider_raw())
        assert main(["sweep", str(path), "--axis", "a", "--axis", "b", "--values", "1"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "phicosim.harness.cli", "validate",
                           str(SCENARIOS / "minimal.toml")], capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout
