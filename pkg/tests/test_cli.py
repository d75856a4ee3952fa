import csv
import json
import os
import shutil
import subprocess
import sys

import pytest

from metric_spectra import reports
from metric_spectra.cli import CONFIG_ERROR, OK, SEED_ENV, VIOLATION, main
from metric_spectra.reports import SPECTRUM_COLUMNS, write_atomic


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def run(*argv):
    return main([str(a) for a in argv] + ["--quiet"])


def load(path):
    return json.loads(path.read_text())


# --- exit codes -------------------------------------------------------------------------

def test_validate(configs, tmp_path):
    assert run("validate", "--graph", configs / "theta.json", "--out", tmp_path) == OK
    r = load(tmp_path / "validate.json")
    assert r["cycle_rank"] == 1 and r["total_length"] == 3.5


@pytest.mark.parametrize("argv", [
    ["validate"],
    ["spectrum", "--graph", "does-not-exist.json"],
    ["bogus"],
    ["spectrum", "--h", "abc"],
    ["partition", "--n", "0"],
    ["sharpness", "--width", "2.0"],
    ["suite", "nonsense"],
    ["suite", "cycles", "--trials", "0"],
])
def test_config_errors(argv, tmp_path):
    assert run(*argv, "--out", tmp_path) == CONFIG_ERROR


def test_bad_graph_file(tmp_path):
    g = tmp_path / "g.json"
    g.write_text('{"vertices": ["a"], "edges": [{"id": "e", "from": "a", "to": "a", "length": 1}]}')
    assert run("validate", "--graph", g, "--out", tmp_path) == CONFIG_ERROR
    g.write_text("{not json")
    assert run("validate", "--graph", g, "--out", tmp_path) == CONFIG_ERROR


def test_nonpositive_tol(configs, tmp_path):
    assert run("weyl", "--graph", configs / "interval.json", "--tol", "0", "--out", tmp_path) == CONFIG_ERROR


def test_under_resolved_is_config_error(configs, tmp_path):
    assert run("weyl", "--graph", configs / "interval.json", "--h", "0.1", "--out", tmp_path) == CONFIG_ERROR


def test_help_exits_ok(capsys):
    assert main(["--help"]) == OK


# --- subcommands ---------------------------------------------------------------------------

def test_spectrum_csv_columns(configs, tmp_path):
    assert run("spectrum", "--graph", configs / "star3.json", "--h", "0.01", "--nmax", "8", "--out", tmp_path) == OK
    with open(tmp_path / "spectrum.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SPECTRUM_COLUMNS
    assert len(rows) == 9
    r = load(tmp_path / "spectrum.json")
    assert r["ok"] and r["residual"] <= 1e-8
    assert len(r["lambda_plus"]) == 8 and len(r["lambda_minus"]) == 8


def test_bounds_theta(configs, tmp_path):
    assert run("bounds", "--graph", configs / "theta.json", "--h", "0.01", "--out", tmp_path) == OK
    assert load(tmp_path / "bounds.json")["bounds"]["ok"]


def test_weight_override_file(configs, tmp_path):
    w = tmp_path / "w.json"
    w.write_text(json.dumps({"e": {"breakpoints": [0.0, 1.0], "values": [-1.0]}}))
    assert run("spectrum", "--graph", configs / "interval.json", "--weight", w, "--h", "0.01",
               "--out", tmp_path) == OK
    r = load(tmp_path / "spectrum.json")
    assert r["lambda_plus"] == [] and len(r["lambda_minus"]) > 0


def test_weyl_interval(configs, tmp_path):
    assert run("weyl", "--graph", configs / "interval.json", "--h", "0.002", "--out", tmp_path) == OK
    assert load(tmp_path / "weyl.json")["plus"]["deviation"] <= 0.03


def test_partition_and_approx(configs, tmp_path):
    assert run("partition", "--graph", configs / "theta.json", "--n", "4", "--out", tmp_path) == OK
    r = load(tmp_path / "partition.json")
    assert r["certificate"]["ok"] and r["cuts"] == 1
    assert run("approx", "--graph", configs / "theta.json", "--nmax", "3", "--trials", "5", "--out", tmp_path) == OK


def test_signed_weight_rejected_by_partition(configs, tmp_path):
    assert run("partition", "--graph", configs / "star3.json", "--n", "2", "--out", tmp_path) == CONFIG_ERROR


def test_sharpness(tmp_path):
    assert run("sharpness", "--width", "0.05", "--nmax", "3", "--out", tmp_path) == OK
    assert load(tmp_path / "sharpness.json")["ratio"] >= 0.95


def test_snumbers_and_kernel(configs, tmp_path):
    assert run("snumbers", "--graph", configs / "star3.json", "--h", "0.01", "--out", tmp_path) == OK
    assert run("kernel", "--graph", configs / "star3.json", "--kernel", "min(rx, ry)", "--h", "0.01",
               "--out", tmp_path) == OK
    assert load(tmp_path / "kernel.json")["vanishes"]
    assert run("kernel", "--graph", configs / "star3.json", "--kernel", "import os", "--out", tmp_path) == CONFIG_ERROR


def test_suite_small(tmp_path):
    assert run("suite", "cycles", "--trials", "3", "--seed", "5", "--out", tmp_path) == OK
    r = load(tmp_path / "suite-cycles.json")
    assert r["trials"] == 3 and r["seed"] == 5 and r["violations"] == []


# --- determinism, seeds, replay ----------------------------------------------------------------

def test_reports_byte_identical(configs, tmp_path):
    for d in ("a", "b"):
        assert run("spectrum", "--graph", configs / "theta.json", "--h", "0.02", "--out", tmp_path / d) == OK
        assert run("suite", "approx", "--trials", "2", "--seed", "3", "--out", tmp_path / d) == OK
    for name in ("spectrum.json", "spectrum.csv", "suite-approx.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_env_seed_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "11")
    assert run("suite", "cycles", "--trials", "2", "--seed", "5", "--out", tmp_path) == OK
    assert load(tmp_path / "suite-cycles.json")["seed"] == 11
    monkeypatch.setenv(SEED_ENV, "eleven")
    assert run("suite", "cycles", "--trials", "2", "--out", tmp_path) == CONFIG_ERROR


def test_suite_trial_replay_matches(tmp_path):
    assert run("suite", "snumbers", "--trials", "3", "--seed", "9", "--out", tmp_path) == OK
    assert run("suite", "snumbers", "--trials", "3", "--seed", "9", "--trial", "2", "--out", tmp_path) == OK
    single = load(tmp_path / "suite-snumbers-trial2.json")
    assert single["ok"] and single["trial"] == 2
    assert run("suite", "snumbers", "--trials", "3", "--trial", "7", "--out", tmp_path) == CONFIG_ERROR


def test_violation_writes_replay(configs, tmp_path):
    # a tolerance far below the O(1/n) Weyl deviation forces a violation
    out = tmp_path / "run"
    code = run("weyl", "--graph", configs / "interval.json", "--h", "0.002", "--tol", "0.001", "--out", out)
    assert code == VIOLATION
    replay = load(out / "weyl-replay.json")
    argv = replay["replay"]["command"]
    assert "--out" not in argv and argv[0] == "weyl"
    assert main(argv + ["--out", str(tmp_path / "again")]) == VIOLATION
    assert load(tmp_path / "again" / "weyl.json") == load(out / "weyl.json")


# --- atomic writes ----------------------------------------------------------------------------

def test_atomic_write_keeps_old_file(tmp_path, monkeypatch):
    path = tmp_path / "r.json"
    write_atomic(path, "old\n")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(reports.os, "replace", boom)
    with pytest.raises(OSError):
        write_atomic(path, "new\n")
    assert path.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["r.json"]


def test_console_script(configs, tmp_path):
    exe = shutil.which("metric-spectra")
    cmd = [exe] if exe else [sys.executable, "-m", "metric_spectra.cli"]
    p = subprocess.run(cmd + ["validate", "--graph", str(configs / "star3.json"), "--out", str(tmp_path)],
                       capture_output=True, text=True, env={k: v for k, v in os.environ.items() if k != SEED_ENV})
    assert p.returncode == 0
    assert json.loads(p.stdout)["ok"] is True
