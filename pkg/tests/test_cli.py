import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from sourcestrength import cli, theory
from sourcestrength.model import growth_curve
from sourcestrength.montecarlo import ExperimentConfig, chamber_v_a, run_theory_vs_mc

CHAMBER = {"zone": {"volume_cuft": 780, "flow_cfm": 28, "c_slpm": 0.42, "c0_ppm": 392,
                    "ts_s": 20}}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def noiseless_cfg(tmp_path):
    return write_config(tmp_path, {**CHAMBER, "noise": {"sigma_ppm": 0}})


@pytest.fixture
def noisy_cfg(tmp_path):
    return write_config(tmp_path, {**CHAMBER, "noise": {"sigma_ppm": 10}}, "noisy.json")


def test_simulate_noiseless_rows(noiseless_cfg, capsys):
    code, out, _ = run(["simulate", "--config", noiseless_cfg, "--n", "3"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["time_s", "concentration_ppm", "occupancy_true"]
    assert len(rows) == 5
    a = growth_curve(chamber_v_a(), 1.0, 3, origin=True).y
    for i, row in enumerate(rows[1:]):
        assert float(row[0]) == 20.0 * i
        assert float(row[1]) == pytest.approx(392 + a[i], rel=1e-14)
        assert float(row[2]) == 1.0


def test_simulate_deterministic(noisy_cfg, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run(["simulate", "--config", noisy_cfg, "--n", "40", "--seed", "5",
                    "--out", str(out)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()


@pytest.mark.parametrize("doc,needle", [
    ({"noise": {"sigma_ppm": 1}}, "zone"),
    ({**CHAMBER, "noise": {"sigma_ppm": 1}, "bogus": {}}, "bogus"),
    ({"zone": {**CHAMBER["zone"], "volume_m3": 3}, "noise": {"sigma_ppm": 1}}, "volume"),
    ({"zone": {"flow_cfm": 28, "c_slpm": 0.42}, "noise": {"sigma_ppm": 1}}, "volume"),
    ({"zone": {**CHAMBER["zone"], "colour": 1}, "noise": {"sigma_ppm": 1}}, "zone.colour"),
    ({**CHAMBER}, "noise"),
    ({**CHAMBER, "noise": {"sigma_ppm": -1}}, "sigma_ppm"),
    ({**CHAMBER, "noise": {"sigma_ppm": 1}, "profile": {"type": "zigzag"}}, "profile.type"),
    ('{"zone": {\n  "volume_m3": 1,\n}}', "line 3"),
])
def test_config_errors_exit_2(tmp_path, capsys, doc, needle):
    cfg = write_config(tmp_path, doc)
    code, _, err = run(["simulate", "--config", cfg, "--n", "3"], capsys)
    assert code == 2
    assert needle in err


def test_preset_zone(tmp_path, capsys):
    cfg = write_config(tmp_path, {"zone": {"preset": "classroom_v_c"}, "noise": {"sigma_ppm": 0}})
    code, out, _ = run(["simulate", "--config", cfg, "--n", "2"], capsys)
    assert code == 0 and out.splitlines()[1].startswith("0.0,392.0,")


def test_io_errors_exit_3(tmp_path, noiseless_cfg, capsys):
    assert run(["simulate", "--config", str(tmp_path / "missing.json"), "--n", "3"], capsys)[0] == 3
    bad_out = str(tmp_path / "no" / "such" / "dir.csv")
    assert run(["simulate", "--config", noiseless_cfg, "--n", "3", "--out", bad_out], capsys)[0] == 3
    assert run(["estimate", "--config", noiseless_cfg, "--data", bad_out], capsys)[0] == 3


def simulate_file(tmp_path, cfg, capsys, n=50, seed=0, name="data.csv"):
    path = tmp_path / name
    assert run(["simulate", "--config", cfg, "--n", str(n), "--seed", str(seed),
                "--out", str(path)], capsys)[0] == 0
    return str(path)


@pytest.mark.parametrize("method,tol", [("mle", 1e-8), ("rls", 1e-8), ("mme2", 0.005),
                                        ("mme3", 0.005)])
def test_round_trip_noiseless(tmp_path, noiseless_cfg, capsys, method, tol):
    data = simulate_file(tmp_path, noiseless_cfg, capsys)
    code, out, _ = run(["estimate", "--data", data, "--config", noiseless_cfg,
                        "--method", method], capsys)
    assert code == 0
    header, values = out.splitlines()
    assert header == "N_hat,Q_hat_m3s,converged"
    N_hat, Q_hat, converged = values.split(",")
    assert abs(float(N_hat) - 1) <= tol
    assert converged == "true"


def test_estimate_rls_two_rows_exit_4(tmp_path, noiseless_cfg, capsys):
    data = tmp_path / "short.csv"
    data.write_text("time_s,concentration_ppm\n0,392\n20,398.3\n")
    code, _, err = run(["estimate", "--data", str(data), "--config", noiseless_cfg,
                        "--method", "rls"], capsys)
    assert code == 4 and "two difference equations" in err


@pytest.mark.parametrize("content", [
    "time,conc\n0,392\n", "time_s,concentration_ppm\n0,abc\n",
    "time_s,concentration_ppm\n0,392\n25,400\n40,410\n",
])
def test_estimate_schema_errors_exit_2(tmp_path, noiseless_cfg, capsys, content):
    data = tmp_path / "bad.csv"
    data.write_text(content)
    assert run(["estimate", "--data", str(data), "--config", noiseless_cfg], capsys)[0] == 2


def test_mle_and_mme2_agree_within_theory(tmp_path, noisy_cfg, capsys):
    p = chamber_v_a()
    sd = math.sqrt(theory.crlb_exact(p, 1.0, p.Q, 50, 10.0)
                   + theory.mme_variance_exact(p, 1.0, p.Q, 50, 10.0))
    for seed in range(5):
        data = simulate_file(tmp_path, noisy_cfg, capsys, seed=seed)
        estimates = []
        for method in ("mle", "mme2"):
            code, out, _ = run(["estimate", "--data", data, "--config", noisy_cfg,
                                "--method", method], capsys)
            assert code == 0
            estimates.append(float(out.splitlines()[1].split(",")[0]))
        assert abs(estimates[0] - estimates[1]) <= 3 * sd


def test_estimate_online(tmp_path, noiseless_cfg, capsys):
    data = simulate_file(tmp_path, noiseless_cfg, capsys, n=30)
    code, out, _ = run(["estimate", "--data", data, "--config", noiseless_cfg, "--online"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "i,time_s,y_ppm,N_hat_RLS,N_hat_MME2"
    assert len(lines) == 32
    assert lines[1].endswith(",,")
    assert float(lines[-1].split(",")[3]) == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("args,leading", [
    (["--method", "crlb", "--K", "0.0001"], 48),
    (["--method", "mme", "--m", "6", "--K", "0.0001"], 53.45),
    (["--method", "rls", "--K", "0.0001"], 192),
])
def test_theory_small_K(noisy_cfg, capsys, args, leading):
    code, out, _ = run(["theory", "--config", noisy_cfg, *args], capsys)
    assert code == 0
    header, row = out.splitlines()
    K, exact, series = map(float, row.split(","))
    assert exact == pytest.approx(leading, rel=0.01)
    assert series == pytest.approx(leading, rel=0.01)


def test_theory_header_and_n_sweep(noisy_cfg, capsys):
    code, out, _ = run(["theory", "--config", noisy_cfg, "--method", "rls", "--order", "2",
                        "--n", "50,100"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "K,factor_exact,factor_expansion_2"
    assert float(lines[1].split(",")[0]) == pytest.approx(chamber_v_a().horizon(50))
    code, out, _ = run(["theory", "--config", noisy_cfg, "--method", "mme", "--m", "3",
                        "--K", "0.1"], capsys)
    assert out.splitlines()[0] == "K,factor_exact,factor_expansion_0"


def test_montecarlo_shape(tmp_path, capsys):
    cfg = write_config(tmp_path, {"zone": {"preset": "chamber_v_a"}, "noise": {"sigma_ppm": 10},
                                  "experiment": {"sweep": {"kind": "n", "values": [30, 50]}}})
    code, out, _ = run(["montecarlo", "--config", cfg, "--experiment", "rmse_vs_n",
                        "--trials", "100", "--seed", "1"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[-1].startswith("# ") and "failed_trials=" in lines[-1]
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[:-1]))))
    assert len(rows) == 8
    assert {r["estimator"] for r in rows} == {"MLE", "RLS", "MME2", "MME3"}


def test_montecarlo_matches_library(tmp_path, capsys):
    code, out, _ = run(["montecarlo", "--experiment", "theory_vs_mc", "--trials", "300",
                        "--seed", "3"], capsys)
    assert code == 0
    cfg = ExperimentConfig.for_experiment("theory_vs_mc", trials=300, seed=3)
    assert out == run_theory_vs_mc(cfg).to_csv()


def test_montecarlo_unknown_experiment(capsys):
    assert run(["montecarlo", "--experiment", "fig42"], capsys)[0] == 2


def test_montecarlo_bad_experiment_key(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": {"trails": 5}})
    code, _, err = run(["montecarlo", "--config", cfg, "--experiment", "metabolic"], capsys)
    assert code == 2 and "experiment.trails" in err


def test_console_script(tmp_path, noiseless_cfg):
    result = subprocess.run([sys.executable, "-m", "sourcestrength.cli", "simulate",
                             "--config", noiseless_cfg, "--n", "2"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    assert result.stdout.splitlines()[1] == "0.0,392.0,1.0"
