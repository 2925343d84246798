"""Run configuration: pydantic models backed by an INI file.

Every key has a default, so an empty file is a valid configuration.
``auto`` stands for an unset optional value (dt, T).  Example::

    [grid]
    n = 64
    L = 6.283185307179586

    [material]
    kind = isotropic
    c1 = 2.0
    nu = 0.0

    [solver]
    dt = auto
    T = auto
"""
from __future__ import annotations

import configparser
import io
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

__all__ = [
    "GridSection",
    "MaterialSection",
    "SolverSection",
    "DataSection",
    "DiagnosticsSection",
    "OutputSection",
    "RunConfig",
    "load_config",
    "apply_overrides",
]

AUTO = "auto"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GridSection(_Section):
    n: int = Field(64, description="points per axis, a power of two >= 8")
    L: float = Field(2 * math.pi, gt=0, description="box half length; the box is [-L, L)^3")

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, n):
        if n < 8 or n & (n - 1):
            raise ValueError("n must be a power of two >= 8")
        return n


class MaterialSection(_Section):
    kind: Literal["isotropic", "oldroyd-b", "constant", "adversarial"] = "isotropic"
    c1: float = Field(2.0, ge=1.0, description="pressure wave speed; ignored for oldroyd-b")
    nu: float = Field(0.0, ge=0.0, description="viscosity")


class SolverSection(_Section):
    dt: Optional[float] = Field(None, gt=0, description="time step, default the CFL step")
    T: Optional[float] = Field(None, ge=0, description="horizon, default the cone cap")
    dealias: bool = True
    nonlinear: bool = True
    cadence: int = Field(4, ge=1, description="steps between diagnostic rows")
    snapshot_every: int = Field(0, ge=0, description="steps between snapshots; 0 keeps only "
                                                      "the initial and final states")


class DataSection(_Section):
    seed: int = Field(1, ge=0, lt=2**64)
    epsilon: float = Field(0.01, ge=0.0)
    det_tol: float = Field(1e-8, gt=0, description="largest accepted det residual of the data")


class DiagnosticsSection(_Section):
    m: int = Field(5, gt=4, description="cutoff integer")
    delta: float = Field(0.5, ge=0.0, lt=1.0, description="growth exponent of the high proxy")
    c_max: float = Field(4.0, gt=0, description="largest acceptable theorem constant")
    sobolev: bool = Field(True, description="compute the corollary monitors")
    track_flux: bool = Field(True, description="accumulate the cubic energy flux")
    nullcheck: bool = Field(False, description="run the null condition check with simulate")
    null_samples: int = Field(1000, ge=1)
    null_seed: int = 7
    null_tol: float = Field(1e-6, gt=0)
    div_tol: float = Field(1e-10, gt=0)
    constraint_tol: float = Field(1e-6, gt=0)
    hardy_count: int = Field(100, ge=1)
    sobolev_count: int = Field(50, ge=1)


class OutputSection(_Section):
    directory: str = "vela-run"


SECTIONS = {
    "grid": GridSection,
    "material": MaterialSection,
    "solver": SolverSection,
    "data": DataSection,
    "diagnostics": DiagnosticsSection,
    "output": OutputSection,
}


def _fmt(value) -> str:
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig(_Section):
    grid: GridSection = Field(default_factory=GridSection)
    material: MaterialSection = Field(default_factory=MaterialSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    data: DataSection = Field(default_factory=DataSection)
    diagnostics: DiagnosticsSection = Field(default_factory=DiagnosticsSection)
    output: OutputSection = Field(default_factory=OutputSection)

    # INI round trip ---------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name in SECTIONS:
            cp[name] = {k: _fmt(v) for k, v in getattr(self, name).model_dump().items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        data = {}
        for name in cp.sections():
            if name not in SECTIONS:
                raise ValueError(f"unknown config section [{name}]")
            data[name] = {k: (None if v.strip().lower() == AUTO else v.strip())
                          for k, v in cp[name].items()}
        return cls.model_validate(data)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini())
        return path


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    return RunConfig.from_ini(Path(path).read_text())


def apply_overrides(cfg: RunConfig, items) -> RunConfig:
    """Return a copy with ``section.key=value`` overrides applied."""
    data = cfg.model_dump()
    for item in items or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        if section not in SECTIONS:
            raise ValueError(f"unknown config section {section!r}")
        if name not in SECTIONS[section].model_fields:
            raise ValueError(f"unknown key {name!r} in section [{section}]")
        value = value.strip()
        data[section][name] = None if value.lower() == AUTO else value
    return RunConfig.model_validate(data)
