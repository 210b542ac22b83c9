import json
import math

import numpy as np
import pytest
import yaml

from smallimpact.cli import ConfigError, ExperimentConfig, main, parse_seeds

DET = {
    "model": {"gamma": 3.0, "T": 1.0, "x0": 1.0, "rho_bounds": [1.0, 1.0], "lambda_bounds": [0.0, 1.0]},
    "factor": {"family": "constant", "params": {"rho": 1.0, "lam": 1.0}},
    "numerics": {"n_steps": 512},
    "run": {"etas": [1e-1, 1e-2], "seeds": "0..1", "N": ["inf", "min"]},
}


def write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_parse_seeds():
    assert parse_seeds("2..5") == [2, 3, 4, 5]
    assert parse_seeds("1,4") == [1, 4]
    assert parse_seeds([7]) == [7]
    with pytest.raises(ConfigError):
        parse_seeds("1,1")
    with pytest.raises(ConfigError):
        parse_seeds("5..2")


def test_config_hash_is_stable():
    a = ExperimentConfig.from_dict(DET)
    b = ExperimentConfig.from_dict(json.loads(json.dumps(DET)))
    assert a.hash == b.hash
    c = ExperimentConfig.from_dict({**DET, "numerics": {"n_steps": 1024}})
    assert c.hash != a.hash


@pytest.mark.parametrize("bad", [
    {"run": {"etas": [-1.0]}},
    {"model": {"gamma": 3.0, "T": 1.0}},
    {"factor": {"family": "nope"}},
    {"numerics": {"bogus": 1}},
    {"extra": {}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**DET, **bad})


def test_low_penalty_exit_code(tmp_path, capsys):
    cfg = {**DET, "run": {"etas": [0.01], "N": [4.0]}}
    assert main(["solve-coefficients", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 3
    assert "N_min" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["study", "--config", str(tmp_path / "none.yaml")]) == 3


def test_solve_coefficients_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["solve-coefficients", "--config", str(write(tmp_path, DET)), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "limit_B0.csv" in names and "bounds_summary.json" in names
    assert sum(n.startswith("prelimit_") and n.endswith(".csv") for n in names) == 4
    summary = json.loads((out / "bounds_summary.json").read_text())
    assert all(b["worst_violation"] <= 1e-6 for b in summary["bounds"])
    first = (out / "limit_B0.csv").read_text().splitlines()[0]
    assert first.startswith("# config_sha256=") and ExperimentConfig.from_dict(DET).hash in first


def test_pde_mode_matches_fast_path(tmp_path):
    cfg_pde = {**DET, "numerics": {"n_steps": 512, "mode": "pde", "chi_nodes": 5}, "run": {"etas": [1e-2]}}
    cfg_ode = {**DET, "run": {"etas": [1e-2]}}
    assert main(["solve-coefficients", "--config", str(write(tmp_path, cfg_pde, "a.yaml")), "--out",
                 str(tmp_path / "pde")]) == 0
    assert main(["solve-coefficients", "--config", str(write(tmp_path, cfg_ode, "b.yaml")), "--out",
                 str(tmp_path / "ode")]) == 0
    a = np.genfromtxt(tmp_path / "ode" / "prelimit_eta1e-02_Ninf.csv", delimiter=",", skip_header=2)
    b = np.genfromtxt(tmp_path / "pde" / "prelimit_eta1e-02_Ninf.csv", delimiter=",", skip_header=2)
    mid = np.unique(b[:, 1])[2]
    b = b[b[:, 1] == mid]
    fin = np.isfinite(a[:, 2:]) & np.isfinite(b[:, 2:])
    assert np.max(np.abs(a[:, 2:][fin] - b[:, 2:][fin])) <= 1e-5


def test_simulate_is_reproducible(tmp_path):
    cfg = write(tmp_path, DET)
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "invariants.json" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    state = (tmp_path / "a" / "state_seed1_eta1e-02_Ninf.csv").read_text().splitlines()[0]
    assert "seed=1" in state


def test_simulate_penalty_sweep(tmp_path):
    cfg = {**DET, "run": {"etas": [1e-2], "seeds": [0], "N": [5.0, 10.0, 50.0]}}
    assert main(["simulate", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0
    inv = json.loads((tmp_path / "o" / "invariants.json").read_text())["paths"]["0"]
    xT = [inv[f"eta=0.01,N={N}"]["X_T"] for N in ("5", "10", "50")]
    assert xT[0] > xT[1] > xT[2]


def test_study_command(tmp_path):
    cfg = {**DET, "run": {"etas": [1e-1, 1e-2, 1e-3], "seeds": [0]}}
    assert main(["study", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o"),
                 "--threads", "2"]) == 0
    rep = json.loads((tmp_path / "o" / "study.json").read_text())
    h = rep["hausdorff"]["mean"]
    assert h[0] > h[1] > h[2]
    assert rep["meta"]["config_sha256"] == ExperimentConfig.from_dict(cfg).hash


def test_cost_block_and_mollified(tmp_path):
    cfg = write(tmp_path, {**DET, "run": {"etas": [1e-2], "seeds": [0]}})
    blk = tmp_path / "blk.json"
    blk.write_text(json.dumps({"kind": "semimartingale", "x0": 1.0, "j_minus": [[0.0, 1.0]]}))
    assert main(["cost", "--config", str(cfg), "--strategy", str(blk), "--out", str(tmp_path / "a")]) == 0
    res = json.loads((tmp_path / "a" / "cost.json").read_text())
    assert res["J0"]["block0"] == 1.5
    mol = tmp_path / "mol.json"
    mol.write_text(json.dumps({"kind": "mollified-optimal", "beta": 0.01, "nu": 1e-4, "eps": 0.01}))
    assert main(["cost", "--config", str(cfg), "--strategy", str(mol), "--out", str(tmp_path / "b")]) == 0
    res = json.loads((tmp_path / "b" / "cost.json").read_text())
    assert res["within_bound"]
    assert res["J0_mollified"]["total"] >= res["J0_optimal"]["total"] - 1e-9


def test_cost_bad_strategy_file(tmp_path):
    cfg = write(tmp_path, DET)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kind": "teleport"}))
    assert main(["cost", "--config", str(cfg), "--strategy", str(bad), "--out", str(tmp_path / "o")]) == 3


def test_reproduce_fig1(tmp_path):
    assert main(["reproduce-fig1", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "fig1.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[0].endswith("seed=0")
    header = lines[1].split(",")
    assert header[0] == "t" and header[-1] == "X0" and len(header) == 6
    jumps = json.loads((tmp_path / "fig1_limit_jumps.json").read_text())
    assert jumps["initial_block"] > 0 and jumps["terminal_block"] > 0
