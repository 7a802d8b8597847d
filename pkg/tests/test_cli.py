import json
from dataclasses import replace

import pytest

from acmpc.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, packaged_scenarios, parse_values, resolve_config
from acmpc.cli.config import ConfigError, load, loads

TESTBED = """\
[scenario]
name = "tb"
model = "testbed"
environment = "Regulation"
trials = 2
seed = 3
timing = false

[controller]
mode = "Adaptive"
horizon = 10
dt = 0.5
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_packaged_scenarios_load():
    names = packaged_scenarios()
    assert "regulation_testbed" in names and "gap_adaptive" in names
    for n in names:
        cfg = resolve_config(n)
        assert cfg.scenario.name == n
        cfg.controller_config()


def test_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as err:
        loads(TESTBED + "bogus = 1\n")
    assert err.value.line == 13 and "bogus" in err.value.message
    with pytest.raises(ConfigError) as err:
        loads(TESTBED.replace("horizon = 10", 'horizon = "ten"'))
    assert err.value.line == 11
    with pytest.raises(ConfigError) as err:
        loads(TESTBED.replace("dt = 0.5", "dt = 0.3"))
    assert err.value.line == 12
    with pytest.raises(ConfigError) as err:
        loads(TESTBED + "[sqp]\nhessian = \"ExactRegularized\"\n")
    assert err.value.line == 14
    with pytest.raises(ConfigError) as err:
        loads(TESTBED + "[nonsense]\n")
    assert err.value.line == 13


def test_missing_required_key_exits_2(tmp_path, capsys):
    path = write(tmp_path, TESTBED.replace('mode = "Adaptive"\n', ""))
    assert main(["run", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "mode" in capsys.readouterr().err


def test_malformed_toml_exits_2(tmp_path):
    path = write(tmp_path, "[scenario\nname=")
    assert main(["run", path]) == EXIT_CONFIG


def test_unwritable_output_exits_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["export", write(tmp_path, TESTBED), "--out", str(blocker / "sub")]) == EXIT_IO


def test_run_is_deterministic_and_complete(tmp_path):
    path = write(tmp_path, TESTBED)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["run", path, "--out", str(out)]) == EXIT_OK
        outs.append(out)
    summary = json.loads((outs[0] / "summary.json").read_text())
    for name in summary["outputs"]:
        a, b = (outs[0] / name).read_bytes(), (outs[1] / name).read_bytes()
        assert a and a == b, name
    assert {"config.toml", "table.csv", "trial_000_steps.csv", "trial_001_steps.csv"} <= set(summary["outputs"])


def test_config_round_trip_reproduces_the_run(tmp_path):
    path = write(tmp_path, TESTBED)
    assert main(["run", path, "--out", str(tmp_path / "a")]) == EXIT_OK
    again = str(tmp_path / "a" / "config.toml")
    assert replace(load(again), source=None) == replace(load(path), source=None)
    assert main(["run", again, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("table.csv", "trial_000_steps.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_and_trials_overrides(tmp_path):
    path = write(tmp_path, TESTBED)
    assert main(["run", path, "--trials", "1", "--seed", "9", "--out", str(tmp_path / "o")]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert "trial_001_steps.csv" not in summary["outputs"]
    assert load(str(tmp_path / "o" / "config.toml")).scenario.seed == 9


def test_sweep_usage_errors(tmp_path):
    path = write(tmp_path, TESTBED)
    assert main(["sweep", path, "--axis", "horizon", "--values", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["sweep", path, "--axis", "colour", "--values", "1", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["sweep", path, "--axis", "gap_width", "--values", "0.3", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    with pytest.raises(Exception):
        parse_values("horizon", [])
    assert parse_values("horizon", ["2..4,7"]) == [2, 3, 4, 7]


def test_basin_sweep_is_nested(tmp_path):
    path = write(tmp_path, TESTBED)
    out = tmp_path / "basin"
    assert main(["sweep", path, "--axis", "horizon", "--values", "2..8", "--grid", "9", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    basin = summary["basin"]
    assert basin["nested"] and basin["counts"] == {"2": 9, "3": 45, "4": 99, "5": 171, "6": 261, "7": 351, "8": 441}
    lines = (out / "basin.csv").read_text().splitlines()
    assert len(lines) == 2 + 7 * 9 ** 3


def test_mode_sweep_on_testbed(tmp_path):
    path = write(tmp_path, TESTBED.replace("trials = 2", "trials = 1"))
    out = tmp_path / "modes"
    assert main(["sweep", path, "--axis", "mode", "--values", "Complex,Adaptive", "--out", str(out)]) == EXIT_OK
    table = (out / "table.csv").read_text().splitlines()
    assert table[2].startswith("Complex,1/1") and table[3].startswith("Adaptive,1/1")
    assert len((out / "sweep.csv").read_text().splitlines()) == 2 + 2


def test_export_writes_reference_and_terminal_set(tmp_path):
    out = tmp_path / "exp"
    assert main(["export", write(tmp_path, TESTBED), "--out", str(out)]) == EXIT_OK
    assert (out / "reference.csv").read_text().startswith("# schema: acmpc-reference/1")
    assert len((out / "terminal_set.csv").read_text().splitlines()) == 2 + 14
    summary = json.loads((out / "summary.json").read_text())
    assert summary["consistency_error"] == 0.0


def test_export_legged_terrain(tmp_path):
    out = tmp_path / "gap"
    assert main(["export", "gap_adaptive", "--out", str(out)]) == EXIT_OK
    terrain = json.loads((out / "terrain.json").read_text())
    assert terrain["heights"][1] < 0 and len(terrain["edges"]) == 2


def test_verify_core_passes(capsys):
    assert main(["verify", "core"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS roundtrip" in out and "FAIL" not in out


def test_list_and_bad_command(capsys):
    assert main(["list"]) == EXIT_OK
    assert "step_adaptive" in capsys.readouterr().out
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG
