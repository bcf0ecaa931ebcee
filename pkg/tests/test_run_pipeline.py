import subprocess
import sys

import pytest

import run_pipeline
from config import SIMULATION_CONFIG
from run_pipeline import STEP_ORDER, check_prerequisites, run_step, select_steps


def test_select_steps():
    assert select_steps() == STEP_ORDER
    assert select_steps(step="oracle") == ["oracle"]
    assert select_steps(from_step="oracle") == ["oracle", "simulate"]
    assert select_steps(skip=["simulate", "verify"]) == ["table", "oracle"]
    assert select_steps(step="table", skip=["table"]) == []


def test_prerequisites():
    assert check_prerequisites("table", "frauchiger-renner") == (True, "")
    assert check_prerequisites("table", "rotation") == (True, "")
    ok, msg = check_prerequisites("verify", "rotation")
    assert not ok and "frauchiger-renner" in msg
    ok, msg = check_prerequisites("table", "nowhere/missing.json")
    assert not ok and "not found" in msg


def test_run_step_calls_cli(monkeypatch, capsys):
    calls = []

    def fake_run(cmd, cwd):
        calls.append(cmd)
        return subprocess.CompletedProcess(cmd, 2)

    monkeypatch.setattr(run_pipeline.subprocess, "run", fake_run)
    assert run_step("table", ["--tau", "0.3"]) == 2
    assert calls == [[sys.executable, str(run_pipeline.CLI), "table", "--verify", "--tau", "0.3"]]
    assert "Prediction Table" in capsys.readouterr().out


def test_pipeline_stops_at_first_failure(monkeypatch):
    ran = []

    def fake_step(step_id, extra_args=None):
        ran.append((step_id, extra_args))
        return 2 if step_id == "table" else 0

    monkeypatch.setattr(run_pipeline, "run_step", fake_step)
    monkeypatch.setattr(sys, "argv", ["run_pipeline.py", "--n", "100"])
    with pytest.raises(SystemExit) as exc:
        run_pipeline.main()
    assert exc.value.code == 1
    assert [s for s, _ in ran] == ["verify", "table"]
    assert ran[0][1] == ["--scenario", "frauchiger-renner"]


def test_pipeline_passes_ensemble_args(monkeypatch):
    ran = []
    monkeypatch.setattr(run_pipeline, "run_step", lambda s, a=None: ran.append((s, a)) or 0)
    monkeypatch.setattr(sys, "argv", ["run_pipeline.py", "--step", "simulate", "--n", "100", "--seed", "3"])
    run_pipeline.main()
    assert ran == [("simulate", ["--scenario", "frauchiger-renner", "--n", "100", "--seed", "3", "--jobs", str(SIMULATION_CONFIG["n_jobs"])])]
