import json
import subprocess
import sys

import numpy as np
import pytest

from phaseslip.cli import main


def _json_tail(out: str) -> dict:
    # the last JSON document printed
    start = out.rfind("\n{")
    return json.loads(out[start + 1:] if start >= 0 else out)


def test_validate(capsys):
    assert main(["validate", "--system", "melnikov", "--set", "eps=0.05"]) == 0
    d = _json_tail(capsys.readouterr().out)
    assert d["lambda_plus"] == pytest.approx(2 * np.pi)
    assert all(d["checks"].values())


def test_validate_linear(capsys):
    assert main(["validate", "--system", "linear"]) == 0


def test_laws_table(tmp_path, capsys):
    code = main(["laws", "Gumbel", "--out", str(tmp_path), "--grid", "-2", "5", "8"])
    assert code == 0
    tab = np.loadtxt(tmp_path / "law_Gumbel.csv", delimiter=",", skiprows=1)
    assert tab.shape == (8, 3)
    np.testing.assert_allclose(tab[:, 2], np.exp(-np.exp(-tab[:, 0])), rtol=1e-14)


def test_instanton(tmp_path, capsys):
    assert main(["instanton", "--out", str(tmp_path)]) == 0
    d = _json_tail(capsys.readouterr().out)
    assert d["action"] == pytest.approx(2 / np.pi, abs=1e-5)
    assert (tmp_path / "instanton_melnikov" / "instanton.csv").exists()


def test_kernel(tmp_path, capsys):
    code = main(["kernel", "--sigma", "0.35", "--n", "1000", "--m", "8", "--seed", "1",
                 "--out", str(tmp_path), "--set", "n_boot=20", "--set", "dt=1e-3"])
    assert code == 0
    d = _json_tail(capsys.readouterr().out)
    assert 0 < d["lambda0"] < 1
    assert (tmp_path / "kernel_melnikov_s0.35" / "kernel.csv").exists()


def test_simulate(tmp_path, capsys):
    code = main(["simulate", "--sigma", "0.45", "--n", "20", "--seed", "3", "--out",
                 str(tmp_path), "--set", "dt=1e-3", "--set", "max_time=200"])
    assert code == 0
    rows = (tmp_path / "simulate_melnikov_seed3" / "records.csv").read_text().splitlines()
    assert rows[0].startswith("#") and len(rows) == 22


def test_exp_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'sigma = [0.1, 0.03]\nn = 500\nseed = 5\nout = "{tmp_path / "o"}"\n'
                   '[params]\nks_threshold = 0.5\n')
    code = main(["exp", "linear_hit_zero", "--config", str(cfg), "--sigma", "0.9"])
    out = capsys.readouterr().out
    assert "PASS linear_hit_zero.ks_final" in out
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["passed"] == (code == 0)
    conf = json.loads((tmp_path / "o" / "linear_hit_zero_seed5" / "config.json").read_text())
    assert conf["params"]["sigmas"] == [0.1, 0.03] and conf["params"]["n"] == 500


def test_exp_failing_exit_code(tmp_path, capsys):
    code = main(["exp", "linear_exit_up", "--sigma", "0.3", "0.2", "--n", "300", "--out",
                 str(tmp_path), "--set", "ks_threshold=1e-6"])
    assert code == 1
    assert "FAIL linear_exit_up.ks_final" in capsys.readouterr().out


def test_bad_experiment_id():
    with pytest.raises(SystemExit):
        main(["exp", "nope"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "phaseslip", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("validate", "instanton", "kernel", "simulate", "exp", "laws"):
        assert cmd in res.stdout
