import csv
import json
import math
import warnings

import numpy as np
import pytest

from vela import __version__
from vela import fields as fl
from vela.cli import main
from vela.config import RunConfig, apply_overrides, load_config
from vela.runner import run_simulation, run_sweep

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from vela.service import app

# a 32^3 run of a few steps; the data tolerance is loosened for the coarse grid
TINY = ["--n", "32", "--T", "0.2", "--cadence", "2", "--set", "data.det_tol=1e-5",
        "--set", "diagnostics.sobolev=false"]


def tiny_config(*extra):
    return apply_overrides(RunConfig(), ["grid.n=32", "solver.T=0.2", "solver.cadence=2",
                                         "data.det_tol=1e-5", "diagnostics.sobolev=false",
                                         *extra])


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["--json", "simulate", *TINY, "--out", str(out)])
    return code, out


# configuration -----------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), ["grid.n=32", "material.nu=0.01", "solver.T=1.5",
                                        "material.kind=oldroyd-b"])
    again = RunConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert load_config(cfg.save(tmp_path / "c.ini")) == cfg
    assert again.to_ini() == cfg.to_ini()


def test_defaults_and_auto():
    cfg = RunConfig.from_ini("[solver]\ndt = auto\n")
    assert cfg == RunConfig()
    assert cfg.solver.dt is None and cfg.solver.cadence == 4
    assert "dt = auto" in cfg.to_ini()


@pytest.mark.parametrize("bad", ["grid.n=30", "grid.n=4", "material.nu=-1", "nosuch.key=1",
                                 "grid.m=3", "grid.n", "material.kind=rubber",
                                 "diagnostics.delta=1.0"])
def test_bad_overrides_rejected(bad):
    with pytest.raises(ValueError):
        apply_overrides(RunConfig(), [bad])


def test_unknown_section_rejected():
    with pytest.raises(ValueError):
        RunConfig.from_ini("[mesh]\nn = 8\n")


def test_write_config(capsys):
    assert main(["write-config", "--n", "16", "--nu", "0.5"]) == 0
    cfg = RunConfig.from_ini(capsys.readouterr().out)
    assert cfg.grid.n == 16 and cfg.material.nu == 0.5


# service ----------------------------------------------------------------------------

def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200 and r.json() == {"status": "ok", "version": __version__}


def test_service_rejects_invalid_config(client):
    r = client.post("/simulate", json={"config": {"grid": {"n": 12}}})
    assert r.status_code == 422


def test_service_rejects_long_horizon(client):
    cfg = tiny_config("solver.T=100").model_dump()
    r = client.post("/simulate", json={"config": cfg, "write": False})
    assert r.status_code == 422 and "cone cap" in r.json()["detail"]


def test_service_inspect_missing(client, tmp_path):
    r = client.post("/inspect", json={"path": str(tmp_path / "none.vela")})
    assert r.status_code == 404


def test_service_nullcheck(client):
    cfg = RunConfig().model_dump()
    cfg["material"]["kind"] = "oldroyd-b"
    cfg["diagnostics"]["null_samples"] = 100
    r = client.post("/nullcheck", json={"config": cfg})
    assert r.status_code == 200
    body = r.json()
    assert body["exit_status"] == 0 and body["summary"]["passed"]


# simulate ------------------------------------------------------------------------------

def test_simulate_outputs(tiny_run, capsys):
    code, out = tiny_run
    assert code == 0
    assert {p.name for p in out.iterdir()} >= {"config.ini", "snapshots", "summary.json",
                                                 "timeseries.csv"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "completed" and summary["constraints_ok"]
    assert summary["theorem_monitor"]["passed"]
    with open(out / "timeseries.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert list(rows[0])[:20] == ["t", "E_0_0", "E_1_0", "E_2_0", "E_2_1", "dissip_int",
                                  "div_v_max", "det_res_max", "curl_res_max", "X", "Xi", "Psi",
                                  "led_int_ratio", "led_ext_ratio", "p_ratio", "sob4", "sob5",
                                  "sob6", "sob7", "sob8"]
    assert RunConfig.from_ini((out / "config.ini").read_text()) == tiny_config(
        f"output.directory={out}")


def test_simulate_is_byte_reproducible(tiny_run, tmp_path):
    _, out = tiny_run
    assert main(["simulate", *TINY, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "timeseries.csv").read_bytes() == (out / "timeseries.csv").read_bytes()


def test_inspect_snapshot(tiny_run, capsys):
    _, out = tiny_run
    snaps = sorted((out / "snapshots").iterdir())
    capsys.readouterr()
    assert main(["--json", "inspect", str(snaps[-1])]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 32 and info["t"] == pytest.approx(0.2)
    assert info["residuals"]["div_v_max"] <= 1e-12
    assert set(info["fields"]) >= {"hdot", "vdot"}


def test_zero_amplitude_is_flat(tmp_path):
    res = run_simulation(tiny_config("data.epsilon=0"), tmp_path)
    assert res.exit_status == 0
    for row in res.rows:
        for key in ("E_0_0", "E_2_1", "X", "Psi", "led_int_ratio", "p_ratio", "flux_int"):
            assert row[key] == 0.0
    assert res.summary["theorem_monitor"]["c_prime"] == 1.0


def test_long_horizon_rejected(capsys):
    with pytest.raises(SystemExit, match="cone cap"):
        main(["simulate", "--n", "32", "--T", "100"])


def test_bad_flag_value_exit_code(capsys):
    assert main(["simulate", "--n", "33"]) == 2
    assert "power of two" in capsys.readouterr().err


# sweep ------------------------------------------------------------------------------------

def test_sweep_rejects_singleton():
    with pytest.raises(ValueError):
        run_sweep(tiny_config(), [0.0], write=False)
    with pytest.raises(SystemExit):
        main(["sweep", *TINY, "--nus", "0.1"])


def test_sweep_identical_viscosities(tmp_path):
    res = run_sweep(tiny_config("diagnostics.track_flux=false"), [0.01, 0.01], tmp_path)
    assert res.exit_status == 0
    a, b = res.members
    np.testing.assert_equal(a.rows, b.rows)  # NaN-aware: sobolev columns are off
    s = res.summary
    assert s["uniform_passed"] and s["led_spread_interior"] == pytest.approx(1.0)
    assert (tmp_path / "sweep.json").exists()


def test_sweep_inviscid_limit(tmp_path):
    res = run_sweep(tiny_config("diagnostics.track_flux=false"), [0.0, 0.01], write=False)
    lim = {c["nu"]: c for c in res.summary["inviscid_limit"]}
    assert lim[0.0]["l2_difference"] == 0.0
    d = lim[0.01]
    assert 0 < d["l2_difference"] and math.isfinite(d["over_nu_T"])
    g = res.members[0].final_state.grid
    # the viscous term damps: the viscous run ends with less energy
    e = [fl.l2_norm(m.final_state.vdot, g) for m in res.members]
    assert e[1] < e[0]


# nullcheck and inequalities -------------------------------------------------------------------

def test_nullcheck_exit_codes(capsys):
    assert main(["nullcheck", "--model", "oldroyd-b"]) == 0
    assert main(["nullcheck", "--model", "adversarial"]) == 1
    out = capsys.readouterr().out
    assert "max_residual" in out


def test_inequalities(capsys):
    code = main(["--json", "inequalities", "--n", "32", "--hardy-count", "100",
                 "--sobolev-count", "10"])
    rep = json.loads(capsys.readouterr().out)
    assert code == 0 and rep["passed"]
    assert rep["hardy"]["max_ratio"] <= 2 + 1e-6 and rep["hardy"]["count"] == 100
    assert np.isfinite(rep["sobolev"]["constant"])
