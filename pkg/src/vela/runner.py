"""Run orchestration: simulate, sweep, nullcheck, inequality batteries, inspect.

Every workflow takes a :class:`~vela.config.RunConfig` and returns a
result object carrying a JSON-ready ``summary`` and an exit status.
Artifacts are written below the configured output directory.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fields as fl
from .config import RunConfig
from .constitutive import MaterialModel, make_model
from .diagnostics import (
    CSV_COLUMNS,
    EXTRA_COLUMNS,
    EnergyReport,
    hardy_ratio,
    sobolev3_check,
    theorem_monitor,
    windowed_family,
)
from .dynamics import (
    BlowUpError,
    Integrator,
    SolverConfig,
    State,
    StateInvalidError,
    constraint_residuals,
    generate_initial_data,
)
from .fields import CutoffParams, Grid
from .nullcheck import null_condition_check

__all__ = [
    "RunResult",
    "SweepResult",
    "build_model",
    "build_solver",
    "initial_state",
    "run_simulation",
    "run_sweep",
    "run_nullcheck",
    "run_inequalities",
    "inspect_snapshot",
]

log = logging.getLogger(__name__)
COLUMNS = CSV_COLUMNS + EXTRA_COLUMNS


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def build_model(cfg: RunConfig, nu: float | None = None) -> MaterialModel:
    m = cfg.material
    return make_model(m.kind, c1=m.c1, nu=m.nu if nu is None else nu)


def build_solver(cfg: RunConfig, model: MaterialModel | None = None) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(grid=Grid(cfg.grid.n, cfg.grid.L), model=model or build_model(cfg),
                        dt=s.dt, T=s.T, dealias=s.dealias, cadence=s.cadence,
                        seed=cfg.data.seed, epsilon=cfg.data.epsilon, nonlinear=s.nonlinear)


def initial_state(cfg: RunConfig) -> State:
    return generate_initial_data(cfg.data.seed, cfg.data.epsilon, Grid(cfg.grid.n, cfg.grid.L),
                                 det_tol=cfg.data.det_tol)


def _fmt(v) -> str:
    return repr(float(v))


@dataclass
class RunResult:
    exit_status: int
    summary: dict
    rows: list[dict] = field(default_factory=list)
    final_state: State | None = None


def run_simulation(cfg: RunConfig, out_dir=None, state0: State | None = None,
                   write: bool = True) -> RunResult:
    """Integrate from seeded data to T, emitting CSV rows every ``cadence`` steps.

    Diagnostics of linear runs use the frozen tensor ahat(I), whose
    quadratic form is the energy the linear system conserves.
    """
    t_wall = time.perf_counter()
    model = build_model(cfg)
    solver = build_solver(cfg, model)
    grid = solver.grid
    diag_model = model if solver.nonlinear else make_model("constant", c1=model.c1, nu=model.nu)
    cut = CutoffParams(cfg.diagnostics.m)
    out = Path(out_dir or cfg.output.directory)
    snaps = out / "snapshots"
    if write:
        snaps.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.to_ini())
    state = (state0 if state0 is not None else initial_state(cfg)).copy()
    integ = Integrator(solver, track_flux=cfg.diagnostics.track_flux)
    n = solver.n_steps
    every = cfg.solver.snapshot_every
    rows: list[dict] = []
    reports: list[EnergyReport] = []
    failure = None

    def record(st):
        rep = EnergyReport.evaluate(st, diag_model, cut, solver.dealias, solver.nonlinear,
                                    sobolev=cfg.diagnostics.sobolev,
                                    dissip_int=integ.dissipation)
        reports.append(rep)
        row = rep.row()
        row["flux_int"] = integ.flux
        rows.append(row)
        log.info("t = %.4f  E00 = %.6g  E21 = %.6g", st.t, row["E_0_0"], row["E_2_1"])

    def snapshot(st, k):
        if write:
            fl.write_snapshot(snaps / f"state_{k:06d}.vela", grid, st.snapshot_fields())

    snapshot(state, 0)
    try:
        record(state)
        for k in range(1, n + 1):
            state = integ.step(state)
            if k % solver.cadence == 0 or k == n:
                record(state)
            if every and k % every == 0 and k != n:
                snapshot(state, k)
        snapshot(state, n)
    except (BlowUpError, StateInvalidError) as exc:
        failure = getattr(exc, "t", state.t)
        bad = getattr(exc, "state", None) or state
        if write:
            fl.write_snapshot(out / "failure.vela", grid, bad.snapshot_fields())
        log.error("run failed at t = %.6g: %s", failure, exc)

    if write:
        with open(out / "timeseries.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS + ["flux_int"])
            for row in rows:
                w.writerow([_fmt(row[c]) for c in COLUMNS + ["flux_int"]])

    summary = _summarize(cfg, solver, rows, reports, failure, integ)
    summary["wall_seconds"] = time.perf_counter() - t_wall
    if cfg.diagnostics.nullcheck:
        rep = null_condition_check(model, cfg.diagnostics.null_samples,
                                   cfg.diagnostics.null_seed, cfg.diagnostics.null_tol)
        summary["nullcheck"] = rep.to_dict()
    summary = _jsonable(summary)
    if write:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    status = 1 if failure is not None else 0
    return RunResult(status, summary, rows, state if failure is None else None)


def _summarize(cfg, solver, rows, reports, failure, integ) -> dict:
    d = cfg.diagnostics
    s = {
        "status": "completed" if failure is None else "failed",
        "failure_time": failure,
        "n": solver.grid.n,
        "L": solver.grid.L,
        "model": cfg.material.kind,
        "c1": solver.model.c1,
        "nu": solver.model.nu,
        "epsilon": cfg.data.epsilon,
        "seed": cfg.data.seed,
        "dt": solver.step_dt,
        "T": solver.T,
        "n_steps": solver.n_steps,
        "nonlinear": solver.nonlinear,
        "monitors_are_truncated_proxies": True,
    }
    if not rows:
        return s
    mx = lambda key: max(float(r[key]) for r in rows)  # noqa: E731
    s["max_residuals"] = {k: mx(k) for k in ("div_v_max", "det_res_max", "curl_res_max")}
    s["constraints_ok"] = bool(s["max_residuals"]["div_v_max"] <= d.div_tol
                               and s["max_residuals"]["det_res_max"] <= d.constraint_tol
                               and s["max_residuals"]["curl_res_max"] <= d.constraint_tol)
    verdict = theorem_monitor(rows, solver.model.nu, d.delta, d.c_max, failure)
    s["theorem_monitor"] = verdict.to_dict()
    s["led"] = {
        "max_interior": mx("led_int_ratio"),
        "max_exterior": mx("led_ext_ratio"),
        "anomalies": sum(1 for r in reports if r.led.anomaly),
    }
    s["pressure"] = {"max_ratio": mx("p_ratio"), "max_paths_diff": mx("p_paths_diff")}
    s["boundary_max"] = mx("boundary_max")
    s["projection_bound_max"] = mx("proj_bound_ratio")
    s["sobolev_max"] = {f"sob{i}": mx(f"sob{i}") for i in range(4, 9)}
    first, last = rows[0], rows[-1]
    e0 = float(first["E_0_0"])
    balance = last["E_0_0"] + last["dissip_int"] - e0
    s["energy_balance"] = {
        "E00_initial": e0,
        "E00_final": last["E_0_0"],
        "dissipation": last["dissip_int"],
        "flux": last["flux_int"],
        "defect_without_flux": balance,
        "defect_with_flux": balance - last["flux_int"],
        "relative_without_flux": balance / e0 if e0 else 0.0,
        "relative_with_flux": (balance - last["flux_int"]) / e0 if e0 else 0.0,
        "flux_tracked": bool(cfg.diagnostics.track_flux),
    }
    return s


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

@dataclass
class SweepResult:
    exit_status: int
    summary: dict
    members: list[RunResult] = field(default_factory=list)


def run_sweep(cfg: RunConfig, nu_list, out_dir=None, write: bool = True) -> SweepResult:
    """Runs sharing one seeded initial state across the viscosities ``nu_list``."""
    nu_list = [float(v) for v in nu_list]
    if len(nu_list) < 2:
        raise ValueError("a sweep needs at least two viscosities")
    if any(v < 0 for v in nu_list):
        raise ValueError("viscosities must be nonnegative")
    out = Path(out_dir or cfg.output.directory)
    state0 = initial_state(cfg)
    members = []
    for i, nu in enumerate(nu_list):
        mcfg = cfg.model_copy(deep=True)
        mcfg.material.nu = nu
        members.append(run_simulation(mcfg, out / f"nu_{i:02d}", state0=state0, write=write))
    per = []
    for nu, m in zip(nu_list, members):
        tm = m.summary.get("theorem_monitor", {})
        led = m.summary.get("led", {})
        per.append({"nu": nu, "status": m.summary["status"],
                    "c_prime": tm.get("c_prime", math.inf),
                    "theorem_passed": tm.get("passed", False),
                    "led_interior": led.get("max_interior", math.nan),
                    "led_exterior": led.get("max_exterior", math.nan)})
    failed = [p for p in per if p["status"] != "completed"]
    c_uniform = max(float(p["c_prime"]) for p in per)
    c_max = cfg.diagnostics.c_max

    def spread(key):
        vals = [p[key] for p in per if not failed]
        if not vals or min(vals) <= 0:
            return math.inf if vals else math.nan
        return max(vals) / min(vals)

    summary = {
        "nu_list": nu_list,
        "members": per,
        "uniform_c_prime": c_uniform,
        "c_max": c_max,
        "uniform_passed": bool(not failed and c_uniform <= c_max),
        "led_constant": max([p["led_interior"] for p in per] + [p["led_exterior"] for p in per]),
        "led_spread_interior": spread("led_interior"),
        "led_spread_exterior": spread("led_exterior"),
    }
    if 0.0 in nu_list and not failed:
        ref = members[nu_list.index(0.0)].final_state
        g = ref.grid
        comp = []
        for nu, m in zip(nu_list, members):
            st = m.final_state
            diff = math.hypot(fl.l2_norm(st.hdot - ref.hdot, g), fl.l2_norm(st.vdot - ref.vdot, g))
            T = m.summary["T"]
            comp.append({"nu": nu, "l2_difference": diff,
                         "over_nu_T": diff / (nu * T) if nu * T > 0 else 0.0})
        summary["inviscid_limit"] = comp
    summary = _jsonable(summary)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return SweepResult(1 if failed else 0, summary, members)


# --------------------------------------------------------------------------
# checks without time stepping
# --------------------------------------------------------------------------

def run_nullcheck(cfg: RunConfig):
    """Null condition check of the configured material; exit 1 on failure."""
    d = cfg.diagnostics
    rep = null_condition_check(build_model(cfg), d.null_samples, d.null_seed, d.null_tol)
    return (0 if rep.passed else 1), rep


def run_inequalities(cfg: RunConfig, hardy_count: int | None = None,
                     sobolev_count: int | None = None, lam: float = 1.0) -> tuple[int, dict]:
    """Hardy and weighted Sobolev batteries on seeded windowed families."""
    d = cfg.diagnostics
    grid = Grid(cfg.grid.n, cfg.grid.L)
    hc = hardy_count or d.hardy_count
    sc = sobolev_count or d.sobolev_count
    hardy = [hardy_ratio(f, grid) for f in windowed_family(grid, hc, cfg.data.seed)]
    sob = [sobolev3_check(f, grid, lam)
           for f in windowed_family(grid, sc, cfg.data.seed + 1)]
    bound = 2.0 + 1e-6
    report = {
        "n": grid.n,
        "hardy": {"count": hc, "max_ratio": max(hardy), "min_ratio": min(hardy),
                  "bound": bound, "passed": bool(max(hardy) <= bound)},
        "sobolev": {"count": sc, "lambda": lam, "max_ratio": max(sob), "min_ratio": min(sob),
                    "constant": max(sob), "passed": bool(all(np.isfinite(sob)))},
    }
    report["passed"] = report["hardy"]["passed"] and report["sobolev"]["passed"]
    return (0 if report["passed"] else 1), _jsonable(report)


def inspect_snapshot(path) -> dict:
    """Header, per-field statistics and constraint residuals of a snapshot."""
    grid, data = fl.read_snapshot(path)
    info = {"path": str(path), "n": grid.n, "L": grid.L, "fields": {}}
    for name, arr in data.items():
        info["fields"][name] = {
            "components": int(arr.shape[0]),
            "min": float(arr.min()), "max": float(arr.max()),
            "l2": fl.l2_norm(arr, grid),
        }
    if "hdot" in data and "vdot" in data:
        st = State.from_snapshot_fields(grid, data)
        info["t"] = st.t
        info["residuals"] = constraint_residuals(st)
    return _jsonable(info)
