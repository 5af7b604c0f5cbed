import copy
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from regimehedge.cli import main, run_scenario
from regimehedge.errors import ConfigError
from regimehedge.regime_bsm import bsm_price
from regimehedge.scenario import parse_scenario

BASE_CONFIG = {
    "name": "single-regime-call",
    "horizon": 1.0,
    "assets": {"n": 1},
    "states_per_component": 2,
    "components": [
        {"hazards": {"1->2": {"family": "constant", "c": 0.4},
                     "2->1": {"family": "constant", "c": 0.5}}},
        {"hazards": {"1->2": {"family": "constant", "c": 0.3},
                     "2->1": {"family": "constant", "c": 0.6}}},
    ],
    "market": {
        "rate": 0.04,
        "drift": [0.08],
        "vol": [[0.25]],
    },
    "claim": {"kind": "basket-call", "weights": [1.0], "strike": 100.0},
    "grid": {"time_steps": 10, "price_nodes": 31, "age_nodes": 4},
    "solver": {"tol": 1e-3, "max_iter": 50, "gh_nodes": 16},
    "mc": {"paths": 2000, "seed": 11},
    "residual_risk": {"paths": 500, "seed": 12},
    "eval_points": [{"t": 0.0, "s": [100.0], "x": [1, 1], "y": [0.0, 0.0]}],
    "outputs": ["price-field"],
}


def write_config(tmp_path, doc, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_parse_and_roundtrip():
    scn = parse_scenario(copy.deepcopy(BASE_CONFIG))
    assert scn.n == 1 and scn.k == 2 and scn.n_components == 2
    assert scn.market.r((1, 1)) == 0.04
    # the resolved echo re-parses to an equivalent scenario
    again = parse_scenario(scn.resolved_dict())
    assert again.claim.describe() == scn.claim.describe()
    assert again.tol == scn.tol
    assert [m.describe() for m in again.models] \
        == [m.describe() for m in scn.models]


def test_factored_and_by_component_coefficients():
    doc = copy.deepcopy(BASE_CONFIG)
    doc["market"]["rate"] = {"factored": {
        "combine": "sum",
        "terms": [{"component": 0, "values": [0.01, 0.03]},
                  {"component": 1, "values": [0.01, 0.02]}]}}
    doc["market"]["vol"] = {"by_component": {
        "component": 1, "matrices": [[[0.2]], [[0.3]]]}}
    scn = parse_scenario(doc)
    assert scn.market.r((1, 1)) == pytest.approx(0.02)
    assert scn.market.r((2, 2)) == pytest.approx(0.05)
    assert scn.market.sigma(0.5, (1, 2))[0, 0] == pytest.approx(0.3)


def test_invalid_hazard_names_offending_pair(tmp_path):
    doc = copy.deepcopy(BASE_CONFIG)
    doc["components"][1]["hazards"]["1->2"] = {"family": "constant", "c": -0.4}
    path = write_config(tmp_path, doc)
    code = run_scenario(path, out_dir=str(tmp_path / "out"))
    assert code == 2
    with pytest.raises(ConfigError) as err:
        parse_scenario(doc)
    assert "components[1].hazards['1->2']" in str(err.value)


def test_missing_seed_rejected_for_stochastic_output():
    doc = copy.deepcopy(BASE_CONFIG)
    doc["outputs"] = ["mc-check"]
    del doc["mc"]["seed"]
    with pytest.raises(ConfigError) as err:
        parse_scenario(doc)
    assert "mc.seed" in str(err.value)


def test_dry_run_prints_grid(tmp_path, capsys):
    path = write_config(tmp_path, copy.deepcopy(BASE_CONFIG))
    code = run_scenario(path, out_dir=str(tmp_path), dry_run=True)
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["grid"]["time_steps"] == 10
    assert not (tmp_path / "report.json").exists()


def test_no_convergence_maps_to_exit_3(tmp_path):
    doc = copy.deepcopy(BASE_CONFIG)
    doc["solver"]["tol"] = 1e-15
    doc["solver"]["max_iter"] = 2
    path = write_config(tmp_path, doc)
    out = tmp_path / "out"
    code = run_scenario(path, out_dir=str(out))
    assert code == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["error"]["type"] == "NoConvergence"


def test_price_scenario_outputs_match_frozen_reference(tmp_path):
    # regime-independent coefficients: every phi column must match the
    # frozen-regime price at its (t, s) within the solver tolerance
    doc = copy.deepcopy(BASE_CONFIG)
    path = write_config(tmp_path, doc)
    out = tmp_path / "out"
    code = run_scenario(path, out_dir=str(out))
    assert code == 0

    scn = parse_scenario(doc)
    rows = (out / "price_field.csv").read_text().strip().splitlines()
    header = rows[0].split(",")
    assert header == ["t", "s1", "x0", "x1", "y0", "y1", "phi"]
    worst = 0.0
    for line in rows[1:]:
        vals = [float(v) for v in line.split(",")]
        t, s = vals[0], vals[1]
        phi = vals[-1]
        ref = bsm_price(scn.market, scn.claim, (1, 1), t, 1.0, np.array([s]))
        worst = max(worst, abs(phi - ref) / (1.0 + s))
    assert worst < 2e-3

    report = json.loads((out / "report.json").read_text())
    assert report["convergence"]["converged_at"] <= 2
    assert report["eval_points"][0]["price"] > 0
    # 17-significant-digit round trip
    sample = rows[1].split(",")[-1]
    assert float(sample) == float(f"{float(sample):.17g}")
    # surface slice exists for the eval point
    assert (out / "surface_11_0-0.csv").exists()


def test_full_output_set_runs(tmp_path):
    doc = copy.deepcopy(BASE_CONFIG)
    doc["grid"] = {"time_steps": 8, "price_nodes": 25, "age_nodes": 3}
    doc["outputs"] = ["price-field", "hedge-field", "mc-check",
                      "pde-residual", "sensitivity", "residual-risk"]
    path = write_config(tmp_path, doc)
    out = tmp_path / "out"
    code = run_scenario(path, out_dir=str(out))
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["mc_check"][0]["within_3se"]
    assert "pde_residual" in report
    assert report["sensitivity"]["satisfied"]
    assert report["residual_risk"]["r0"] >= 0.0
    assert (out / "hedge_field.csv").exists()
    hedge_rows = (out / "hedge_field.csv").read_text().strip().splitlines()
    assert hedge_rows[0] == "t,s1,x0,x1,y0,y1,xi1,eps"
    # config echo in the report re-parses
    parse_scenario(report["config"])


def test_version_command(capsys):
    assert main(["version"]) == 0
    out = capsys.readouterr().out.strip()
    assert out == "0.1.0"


def test_price_report_bytes_identical_across_threads(tmp_path):
    doc = copy.deepcopy(BASE_CONFIG)
    doc["grid"] = {"time_steps": 6, "price_nodes": 21, "age_nodes": 3}
    doc["outputs"] = ["price-field", "mc-check"]
    path = write_config(tmp_path, doc)
    blobs = []
    for tag, threads in (("t1", 1), ("t2", 2), ("t1b", 1)):
        out = tmp_path / tag
        assert run_scenario(path, out_dir=str(out), threads=threads) == 0
        rep = json.loads((out / "report.json").read_text())
        rep["config"].pop("threads", None)
        blobs.append((out / "price_field.csv").read_bytes())
        blobs.append(json.dumps(rep["convergence"], sort_keys=True).encode())
        blobs.append(json.dumps(rep["mc_check"], sort_keys=True).encode())
    assert blobs[0:3] == blobs[3:6] == blobs[6:9]


def test_selftest_fast_deterministic_bytes(tmp_path):
    env = dict(os.environ)
    env["PYTHONHASHSEED"] = "0"
    cmd = [sys.executable, "-m", "regimehedge.cli", "selftest",
           "--profile", "fast"]
    outs = []
    for threads, tag in ((1, "a"), (2, "b"), (1, "c")):
        d = tmp_path / tag
        r = subprocess.run(cmd + ["--threads", str(threads), "--out", str(d)],
                           env=env, capture_output=True, text=True,
                           timeout=900)
        assert r.returncode == 0, r.stdout + r.stderr
        outs.append((d / "selftest_report.json").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_selftest_corrupted_tolerance_fails(tmp_path):
    env = dict(os.environ)
    env["REGIMEHEDGE_TOL_C1_IDENTITY"] = "1e-30"
    cmd = [sys.executable, "-m", "regimehedge.cli", "selftest",
           "--profile", "fast", "--out", str(tmp_path)]
    r = subprocess.run(cmd, env=env, capture_output=True, text=True,
                       timeout=900)
    assert r.returncode == 1
    assert "[FAIL] C01" in r.stdout
