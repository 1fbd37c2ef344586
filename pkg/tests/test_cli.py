import json
import subprocess
import sys

import pytest

from cempc.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOUNDNESS, main
from cempc.harness import BENCHMARK_X0, read_csv
from cempc.system import system_to_dict


@pytest.fixture
def config(tmp_path, bench):
    (tmp_path / "sys.json").write_text(json.dumps(system_to_dict(bench)))
    cfg = {"system": "sys.json", "x0": list(BENCHMARK_X0), "horizons": [8], "deltas": [2e-3], "trials": 3,
           "out_dir": str(tmp_path / "out")}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_bound_writes_certificates(config, tmp_path):
    out = tmp_path / "bound.json"
    assert main(["bound", "--config", str(config), "--horizon", "8", "9", "--out", str(out)]) == EXIT_OK
    certs = json.loads(out.read_text())["certificates"]
    assert [c["N"] for c in certs] == [8, 9]
    assert all(c["stable"] for c in certs)


def test_simulate(config, tmp_path):
    out = tmp_path / "sim.json"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    runs = json.loads(out.read_text())["runs"]
    assert runs[0]["converged"] and runs[0]["cost"] > 0


def test_sweeps_write_csv(config, tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["sweep-delta", "--config", str(config), "--delta", "1e-3", "2e-3", "--out", str(out),
                 "--no-dumps"]) == EXIT_OK
    assert len(read_csv(out / "records.csv")) == 6
    assert not (out / "certificates").exists()
    out = tmp_path / "h"
    assert main(["sweep-horizon", "--config", str(config), "--horizon", "8", "9", "--out", str(out)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["argmin_horizon"] in (8, 9)
    assert (out / "certificates" / "certificates_001.json").exists()


def test_montecarlo_and_soundness(config, tmp_path, capsys):
    out = tmp_path / "mc"
    assert main(["montecarlo", "--config", str(config), "--trials", "2", "--out", str(out)]) == EXIT_OK
    assert (out / "stats.csv").exists() and (out / "timings.csv").exists()
    assert main(["soundness", "--config", str(config), "--trials", "2", "--suite-instances", "3",
                 "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "soundness.json").read_text())["passed"]
    assert "PASS cost_below_bound" in capsys.readouterr().out


def test_config_errors(config, tmp_path, capsys):
    assert main(["bound", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["bound", "--config", str(config), "--delta", "-1"]) == EXIT_CONFIG
    assert "deltas[0]" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"system": "sys.json", "x0": [0.1, 0.1], "colour": 1}))
    assert main(["bound", "--config", str(bad)]) == EXIT_CONFIG


def test_io_error(config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["sweep-delta", "--config", str(config), "--out", str(blocker / "sub")]) == EXIT_IO


def test_soundness_violation_exit_code(config, monkeypatch, tmp_path):
    import cempc.harness as harness

    monkeypatch.setattr(harness.ExperimentRecord, "sound", lambda self: False)
    assert main(["sweep-delta", "--config", str(config), "--out", str(tmp_path / "v")]) == EXIT_SOUNDNESS


def test_module_entry_point(config, tmp_path):
    out = tmp_path / "b.json"
    proc = subprocess.run([sys.executable, "-m", "cempc", "bound", "--config", str(config), "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
