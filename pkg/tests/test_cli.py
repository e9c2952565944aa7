import csv
import json

import pytest

from mergelane.cli import main, parse_range
from mergelane.policy import ALL_POLICIES

TINY = """
seed = 5
replications = 1
policy = "DBL"
[demand]
profile = { intervals = [[0, 240, 2400]] }
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def test_help_lists_every_policy(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for name in ALL_POLICIES:
        assert name in out.replace("\n", " ")


def test_validate_shipped_config(capsys):
    assert main(["validate-config", "--config", "daily3.cfg"]) == 0
    assert "ok:" in capsys.readouterr().out


def test_validate_broken_config(tmp_path, capsys):
    bad = tmp_path / "broken.cfg"
    bad.write_text('[demand]\nprofile = { intervals = [[0, 10, 5]], p_hdv = 0.8, p_cav = 0.09, p_bus = 0.01 }\n')
    assert main(["validate-config", "--config", str(bad)]) == 1
    assert "class probabilities must sum to 1" in capsys.readouterr().err


def test_malformed_toml(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = = 3\n")
    assert main(["validate-config", "--config", str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_missing_config_is_io_failure(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_usage_errors():
    assert main(["simulate"]) == 1
    assert main(["frobnicate"]) == 1


def test_bad_override(tiny, capsys):
    assert main(["simulate", "--config", str(tiny), "--policy", "Plus_7"]) == 1
    assert main(["simulate", "--config", str(tiny), "--proportion", "1.5"]) == 1
    assert main(["sweep", "--config", str(tiny), "--proportions", "0.1:1.0:0.4"]) == 1


def test_simulate_prints_summary(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(tiny), "--policy", "CAVDynamic_24", "--proportion", "0.1",
               "--out-dir", str(out), "--seed", "9", "--replications", "2", "--no-figures"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "CAVDynamic_24" in text and "APD =" in text and "±" in text
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["policy"] == "CAVDynamic_24"
    assert man["config"]["seed"] == 9 and man["config"]["replications"] == 2
    assert man["config"]["proportion"] == 0.1
    assert man["overrides"]["out_dir"] == str(out)
    assert (out / "runs" / "CAVDynamic_24" / "0.1" / "1.csv").exists()


def test_out_dir_from_environment(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("MERGELANE_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--config", str(tiny), "--no-figures"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_sweep_writes_table_and_figure(tiny, tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", str(tiny), "--policies", "DBL,CAVStaticPlus_3",
               "--proportions", "0.1:0.3:0.1", "--out-dir", str(out)])
    assert rc == 0
    with open(out / "sweep_table.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["policy", "0.1", "0.2", "0.3"]
    assert (out / "plots" / "apd_vs_proportion.png").stat().st_size > 0


def test_manifest_reproduces_sweep(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--policies", "DBL,Plus_2", "--proportions", "0,0.5", "--no-figures"]
    assert main(["sweep", "--config", str(tiny), "--seed", "77", "--out-dir", str(a)] + args) == 0
    assert main(["sweep", "--config", str(a / "manifest.json"), "--out-dir", str(b)] + args) == 0
    assert (a / "sweep_table.csv").read_bytes() == (b / "sweep_table.csv").read_bytes()


def test_trajectory_log(tiny, tmp_path):
    out = tmp_path / "t"
    assert main(["simulate", "--config", str(tiny), "--out-dir", str(out), "--trajectory-log", "--no-figures"]) == 0
    traj = out / "trajectories" / "DBL" / "base" / "0.csv"
    assert traj.read_text().splitlines()[0] == "tick,vehicle_id,lane,position,speed"
    assert (out / "trajectories" / "DBL" / "base" / "0_ticks.csv").exists()
    assert main(["simulate", "--config", str(tiny), "--trajectory-log"]) == 1


def test_access_study_command(tiny, tmp_path, capsys):
    out = tmp_path / "acc"
    assert main(["access-study", "--config", str(tiny), "--fractions", "0,0.5,1", "--out-dir", str(out)]) == 0
    assert "VD =" in capsys.readouterr().out
    assert (out / "plots" / "vd_vs_fraction.png").exists()


def test_parse_range():
    assert parse_range("0.1:1.0:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert parse_range("0,0.5") == [0.0, 0.5]
