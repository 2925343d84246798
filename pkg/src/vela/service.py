"""HTTP service wrapping the run workflows.

The CLI talks to this app either in process or over HTTP (``--url``).
Handlers are synchronous; FastAPI runs them in its worker pool.
"""
from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import RunConfig
from .fields import SnapshotError
from .runner import (
    inspect_snapshot,
    run_inequalities,
    run_nullcheck,
    run_simulation,
    run_sweep,
)

app = FastAPI(title="vela", version=__version__,
              description="Viscoelastic pseudo-spectral simulator and verification harness")


class RunRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    out_dir: Optional[str] = None
    write: bool = True


class SweepRequest(RunRequest):
    nu_list: list[float]


class InequalityRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    hardy_count: Optional[int] = Field(None, ge=1)
    sobolev_count: Optional[int] = Field(None, ge=1)
    lam: float = Field(1.0, ge=0.0, le=2.0)


class InspectRequest(BaseModel):
    path: str


class Outcome(BaseModel):
    exit_status: int
    summary: dict[str, Any]


class Health(BaseModel):
    status: str
    version: str


def _bad_request(exc: Exception):
    raise HTTPException(status_code=422, detail=str(exc)) from exc


@app.get("/health", response_model=Health)
def health():
    return Health(status="ok", version=__version__)


@app.post("/simulate", response_model=Outcome)
def simulate(req: RunRequest):
    try:
        res = run_simulation(req.config, req.out_dir, write=req.write)
    except ValueError as exc:
        _bad_request(exc)
    return Outcome(exit_status=res.exit_status, summary=res.summary)


@app.post("/sweep", response_model=Outcome)
def sweep(req: SweepRequest):
    try:
        res = run_sweep(req.config, req.nu_list, req.out_dir, write=req.write)
    except ValueError as exc:
        _bad_request(exc)
    return Outcome(exit_status=res.exit_status, summary=res.summary)


@app.post("/nullcheck", response_model=Outcome)
def nullcheck(req: RunRequest):
    try:
        status, rep = run_nullcheck(req.config)
    except ValueError as exc:
        _bad_request(exc)
    return Outcome(exit_status=status, summary=rep.to_dict())


@app.post("/inequalities", response_model=Outcome)
def inequalities(req: InequalityRequest):
    try:
        status, rep = run_inequalities(req.config, req.hardy_count, req.sobolev_count, req.lam)
    except ValueError as exc:
        _bad_request(exc)
    return Outcome(exit_status=status, summary=rep)


@app.post("/inspect", response_model=Outcome)
def inspect(req: InspectRequest):
    try:
        info = inspect_snapshot(req.path)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except SnapshotError as exc:
        _bad_request(exc)
    return Outcome(exit_status=0, summary=info)
