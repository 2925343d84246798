"""Right-hand sides, pressure elimination and time stepping.

The unknowns are the perturbations Hdot = H - I and v.  With the pressure
removed by Leray projection the system reads

    d_t Hdot = -grad v + N^H
    d_t v    = P[-div Hdot + N^v - (c1^2 - 1) M^H] + nu lap v

and is advanced with an integrating-factor RK4 scheme that treats the
viscous term exactly in Fourier space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fields as fl
from .constitutive import EvaluationError, MaterialModel, make_model
from .fields import Grid

__all__ = [
    "State",
    "SolverConfig",
    "BlowUpError",
    "StateInvalidError",
    "cone_cap",
    "default_dt",
    "ahat_contract",
    "ahat_field",
    "ahat_bilinear",
    "energy_density",
    "transport_term",
    "advective_transport_term",
    "trace_identity_scalar",
    "mh_term",
    "nv_term",
    "nonlinear_rhs",
    "time_derivative",
    "pressure_gradient",
    "pressure_gradient_poisson",
    "constraint_residuals",
    "Integrator",
    "step",
    "generate_initial_data",
]

log = logging.getLogger(__name__)

CHUNK = 32768


class BlowUpError(RuntimeError):
    """Non-finite values appeared; ``state`` is the last finite state."""

    def __init__(self, message, t: float, state: "State | None" = None):
        super().__init__(message)
        self.t = t
        self.state = state


class StateInvalidError(ValueError):
    """The constitutive tensor could not be evaluated on the state."""


@dataclass
class State:
    hdot: np.ndarray
    vdot: np.ndarray
    t: float
    grid: Grid

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "State":
        return cls(grid.zeros(3, 3), grid.zeros(3), t, grid)

    def copy(self) -> "State":
        return State(self.hdot.copy(), self.vdot.copy(), self.t, self.grid)

    def snapshot_fields(self) -> dict[str, np.ndarray]:
        return {"hdot": self.hdot, "vdot": self.vdot, "t": np.array(self.t)}

    @classmethod
    def from_snapshot_fields(cls, grid: Grid, data: dict[str, np.ndarray]) -> "State":
        n = grid.n
        try:
            hdot = data["hdot"].reshape((3, 3) + (n,) * 3)
            vdot = data["vdot"].reshape((3,) + (n,) * 3)
        except KeyError as exc:
            raise fl.SnapshotError(f"snapshot lacks field {exc}") from None
        t = float(data["t"].ravel()[0]) if "t" in data else 0.0
        return cls(hdot, vdot, t, grid)


def cone_cap(grid: Grid, c1: float) -> float:
    """Largest horizon keeping the cone r <= L/4 + c1 T inside r <= 0.8 L."""
    return (0.8 - 0.25) * grid.L / c1


def default_dt(grid: Grid, c1: float) -> float:
    return 0.5 * grid.spacing / c1


@dataclass
class SolverConfig:
    """Time-stepping parameters.

    ``dt`` and ``T`` default to the CFL step and the cone cap.  With
    ``nonlinear=False`` every quadratic term is dropped, which leaves the
    projected linear system.
    """

    grid: Grid = field(default_factory=Grid)
    model: MaterialModel = field(default_factory=make_model)
    dt: float | None = None
    T: float | None = None
    dealias: bool = True
    cadence: int = 1
    seed: int = 1
    epsilon: float = 0.01
    nonlinear: bool = True

    def __post_init__(self):
        c1 = self.model.c1
        bound = default_dt(self.grid, c1)
        if self.dt is None:
            self.dt = bound
        if not 0 < self.dt <= bound * (1 + 1e-12):
            raise ValueError(f"dt = {self.dt} violates the CFL bound {bound:.6g}")
        cap = cone_cap(self.grid, c1)
        if self.T is None:
            self.T = cap
        if not 0 <= self.T <= cap * (1 + 1e-12):
            raise ValueError(
                f"horizon T = {self.T} exceeds the cone cap {cap:.6g}: data of radius "
                f"L/4 travelling at speed c1 = {c1} would leave r <= 0.8 L")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.T / self.dt - 1e-9))

    @property
    def step_dt(self) -> float:
        """Step actually taken: T / n_steps, never above ``dt``, so the run ends at T."""
        n = self.n_steps
        return self.T / n if n else float(self.dt)


# --------------------------------------------------------------------------
# pointwise tensor work
# --------------------------------------------------------------------------

def _points(a, ncomp_axes):
    """Move the grid axes to the front and flatten them."""
    n = a.shape[-1]
    lead = a.shape[:ncomp_axes]
    moved = np.moveaxis(a.reshape(lead + (n**3,)), -1, 0)
    return moved


def ahat_field(model: MaterialModel, H: np.ndarray) -> np.ndarray:
    """Ahat(H) on every grid point, shape (3, 3, 3, 3, n, n, n)."""
    n = H.shape[-1]
    Hp = _points(H, 2)
    out = np.empty((n**3, 3, 3, 3, 3))
    for s in range(0, n**3, CHUNK):
        try:
            out[s:s + CHUNK] = model.ahat(Hp[s:s + CHUNK])
        except (EvaluationError, np.linalg.LinAlgError) as exc:
            raise StateInvalidError(str(exc)) from exc
    return np.moveaxis(out, 0, -1).reshape((3, 3, 3, 3, n, n, n))


def ahat_contract(model: MaterialModel, H: np.ndarray, D: np.ndarray) -> np.ndarray:
    """T[p] = ahat(H)[l, m, p, j] D[j, m, l] pointwise, chunked over the grid."""
    if model.has_fast_fields:
        try:
            return model.contract_field(H, D)
        except EvaluationError as exc:
            raise StateInvalidError(str(exc)) from exc
    n = H.shape[-1]
    Hp = _points(H, 2)
    Dp = _points(D, 3)
    out = np.empty((n**3, 3))
    for s in range(0, n**3, CHUNK):
        try:
            out[s:s + CHUNK] = model.contract(Hp[s:s + CHUNK], Dp[s:s + CHUNK])
        except (EvaluationError, np.linalg.LinAlgError) as exc:
            raise StateInvalidError(str(exc)) from exc
    return np.moveaxis(out, 0, -1).reshape((3, n, n, n))


def ahat_bilinear(model: MaterialModel, H: np.ndarray, M: np.ndarray,
                  K: np.ndarray) -> np.ndarray:
    """ahat(H)[l, m, p, j] M[p, l] K[j, m] at every grid point."""
    if model.has_fast_fields:
        try:
            return model.bilinear_field(H, M, K)
        except EvaluationError as exc:
            raise StateInvalidError(str(exc)) from exc
    n = H.shape[-1]
    Hp, Mp, Kp = _points(H, 2), _points(M, 2), _points(K, 2)
    out = np.empty(n**3)
    for s in range(0, n**3, CHUNK):
        try:
            out[s:s + CHUNK] = model.bilinear(Hp[s:s + CHUNK], Mp[s:s + CHUNK], Kp[s:s + CHUNK])
        except (EvaluationError, np.linalg.LinAlgError) as exc:
            raise StateInvalidError(str(exc)) from exc
    return out.reshape((n, n, n))


def energy_density(model: MaterialModel, H: np.ndarray, M: np.ndarray) -> np.ndarray:
    """ahat(H)[l, m, p, j] M[p, l] M[j, m] at every point."""
    return ahat_bilinear(model, H, M, M)


# --------------------------------------------------------------------------
# nonlinear terms
# --------------------------------------------------------------------------

def _mask(f, grid, on):
    return fl.dealias(f, grid) if on else f


def transport_term(hdot, vdot, grid: Grid, dealias: bool = True) -> np.ndarray:
    """N^H in conservative form, -d_j (Hdot^i_p v^p).

    Equal to -v^p d_p Hdot^i_j - Hdot^i_p d_j v^p whenever Hdot is curl
    free; the conservative form keeps Hdot exactly curl free.
    """
    w = _mask(np.einsum("ip...,p...->i...", hdot, vdot), grid, dealias)
    return -fl.gradient(w, grid)


def advective_transport_term(hdot, vdot, grid: Grid, dealias: bool = True) -> np.ndarray:
    """N^H in advective form -v^p d_p Hdot^i_j - Hdot^i_p d_j v^p."""
    gH = fl.gradient(hdot, grid)
    gv = fl.gradient(vdot, grid)
    out = -np.einsum("p...,ijp...->ij...", vdot, gH) - np.einsum("ip...,pj...->ij...", hdot, gv)
    return _mask(out, grid, dealias)


def trace_identity_scalar(hdot) -> np.ndarray:
    """q = (1/2)((tr Hdot)^2 - tr(Hdot^2)) + det Hdot.

    det(I + Hdot) - 1 = tr Hdot + q, so incompressibility gives tr Hdot = -q.
    """
    tr = np.einsum("ii...->...", hdot)
    tr2 = np.einsum("ij...,ji...->...", hdot, hdot)
    det = (hdot[0, 0] * (hdot[1, 1] * hdot[2, 2] - hdot[1, 2] * hdot[2, 1])
           - hdot[0, 1] * (hdot[1, 0] * hdot[2, 2] - hdot[1, 2] * hdot[2, 0])
           + hdot[0, 2] * (hdot[1, 0] * hdot[2, 1] - hdot[1, 1] * hdot[2, 0]))
    return 0.5 * (tr * tr - tr2) + det


def mh_term(hdot, grid: Grid, dealias: bool = True) -> np.ndarray:
    """M^H = -grad q with q from :func:`trace_identity_scalar`."""
    return -fl.gradient(_mask(trace_identity_scalar(hdot), grid, dealias), grid)


def nv_term(hdot, vdot, model: MaterialModel, grid: Grid, dealias: bool = True,
            gH: np.ndarray | None = None) -> np.ndarray:
    """N^v = -v.grad v - (ahat(H) Hdot d Hdot + [ahat(H) - ahat(I)] d Hdot)."""
    if gH is None:
        gH = fl.gradient(hdot, grid)
    gv = fl.gradient(vdot, grid)
    adv = -np.einsum("p...,ip...->i...", vdot, gv)
    T = ahat_contract(model, np.eye(3)[:, :, None, None, None] + hdot, gH)
    T0 = np.einsum("lmpj,jml...->p...", model.ahat_identity(), gH)
    # ahat(H)[l,m,p,j] H^p_i d_l Hdot^j_m - ahat(I) d Hdot, with H = I + Hdot
    elastic = np.einsum("pi...,p...->i...", hdot, T) + (T - T0)
    return _mask(adv - elastic, grid, dealias)


def nonlinear_rhs(state: State, model: MaterialModel, dealias: bool = True):
    """(N^H, N^v - (c1^2 - 1) M^H) before pressure projection."""
    g = state.grid
    NH = transport_term(state.hdot, state.vdot, g, dealias)
    Nv = nv_term(state.hdot, state.vdot, model, g, dealias)
    MH = mh_term(state.hdot, g, dealias)
    return NH, Nv - (model.c1**2 - 1.0) * MH


def _velocity_forcing(state, model, dealias, nonlinear=True):
    """Total unprojected v right side without viscosity, plus N^v and M^H."""
    g = state.grid
    div = fl.divergence(state.hdot, g)
    if not nonlinear:
        z = np.zeros_like(state.vdot)
        return -div, z, z
    Nv = nv_term(state.hdot, state.vdot, model, g, dealias)
    MH = mh_term(state.hdot, g, dealias)
    return Nv - (model.c1**2 - 1.0) * MH - div, Nv, MH


def pressure_gradient(state: State, rhs_v: np.ndarray) -> np.ndarray:
    """grad p = (I - P) rhs_v for the total unprojected v right side.

    ``rhs_v`` includes the linear term -div Hdot; viscosity is divergence
    free and may be included or left out.
    """
    return rhs_v - fl.leray_project(rhs_v, state.grid)


def pressure_gradient_poisson(state: State, model: MaterialModel, dealias: bool = True,
                              terms: tuple | None = None) -> np.ndarray:
    """grad p from lap p = div N^v - c1^2 div M^H.

    This form uses the constraints to rewrite div div Hdot, so it differs
    from :func:`pressure_gradient` by grad(det(I + Hdot) - 1) plus a curl
    residual contribution.
    """
    g = state.grid
    if terms is None:
        _, Nv, MH = _velocity_forcing(state, model, dealias)
    else:
        Nv, MH = terms
    rhs = fl.divergence(Nv - model.c1**2 * MH, g)
    p, _ = fl.poisson_solve(rhs, g)
    return fl.gradient(p, g)


def time_derivative(state: State, model: MaterialModel, dealias: bool = True,
                    nonlinear: bool = True):
    """(d_t Hdot, d_t v) including pressure and viscosity."""
    g = state.grid
    dH = -fl.gradient(state.vdot, g)
    if nonlinear:
        dH = dH + transport_term(state.hdot, state.vdot, g, dealias)
    rhs, _, _ = _velocity_forcing(state, model, dealias, nonlinear)
    dv = fl.leray_project(rhs, g)
    if model.nu:
        dv = dv + model.nu * fl.laplacian(state.vdot, g)
    return dH, dv


def constraint_residuals(state: State) -> dict[str, float]:
    """Max norms of div v, det(I + Hdot) - 1 and the curl residual."""
    g = state.grid
    det_res = np.einsum("ii...->...", state.hdot) + trace_identity_scalar(state.hdot)
    return {
        "div_v_max": float(np.max(np.abs(fl.divergence(state.vdot, g)))),
        "det_res_max": float(np.max(np.abs(det_res))),
        "curl_res_max": float(np.max(np.abs(fl.curl_residual(state.hdot, g)))),
    }


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------

class Integrator:
    """Integrating-factor RK4 stepper working on dealiased spectra.

    Besides the state it accumulates, with the same RK4 stage weights,
    the dissipation integral nu int ||grad v||^2 dt and (when
    ``track_flux``) the cubic flux int (dE00/dt + nu ||grad v||^2) dt of the
    base energy E00 = (1/2) int ahat(H) Hdot.Hdot + |v|^2.
    """

    def __init__(self, config: SolverConfig, track_flux: bool = False,
                 flux_step: float = 1e-4):
        self.config = config
        self.grid = config.grid
        self.model = config.model
        self.dt = float(config.step_dt)
        self.track_flux = track_flux
        self.flux_step = flux_step
        nu = self.model.nu
        k2 = self.grid.k2
        self.E = np.exp(-nu * k2 * self.dt)
        self.Eh = np.exp(-nu * k2 * self.dt / 2)
        self.mask = self.grid.mask if config.dealias else np.ones_like(self.grid.mask)
        self.dissipation = 0.0
        self.flux = 0.0

    # spectral helpers -------------------------------------------------
    def _to_hat(self, state):
        return fl.fft(state.hdot) * self.mask, fl.fft(state.vdot) * self.mask

    def _from_hat(self, Hh, vh, t):
        g = self.grid
        return State(fl.ifft(Hh, g), fl.ifft(vh, g), t, g)

    def _f(self, Hh, vh, t):
        """Non-viscous projected right side; returns spectra and the real state."""
        g = self.grid
        cfg = self.config
        mask = self.mask
        st = self._from_hat(Hh, vh, t)
        dH = -fl._grad_hat(vh, g)
        rhs = -fl._div_hat(Hh, g)
        if cfg.nonlinear:
            w = np.einsum("ip...,p...->i...", st.hdot, st.vdot)
            dH = dH - fl._grad_hat(fl.fft(w) * mask, g)
            gH = fl.ifft(fl._grad_hat(Hh, g), g)
            gv = fl.ifft(fl._grad_hat(vh, g), g)
            adv = -np.einsum("p...,ip...->i...", st.vdot, gv)
            T = ahat_contract(self.model, np.eye(3)[:, :, None, None, None] + st.hdot, gH)
            T0 = np.einsum("lmpj,jml...->p...", self.model.ahat_identity(), gH)
            Nv = adv - (np.einsum("pi...,p...->i...", st.hdot, T) + (T - T0))
            qh = fl.fft(trace_identity_scalar(st.hdot)) * mask
            rhs = rhs + fl.fft(Nv) * mask + (self.model.c1**2 - 1.0) * fl._grad_hat(qh, g)
        dv = fl._leray_hat(rhs * mask, g)
        return dH * mask, dv, st

    def _q(self, st, kH, kv):
        """Integrands (dissipation, flux) at a stage state."""
        g = self.grid
        nu = self.model.nu
        diss = nu * fl.l2_norm(fl.gradient(st.vdot, g), g) ** 2 if nu else 0.0
        if not self.track_flux:
            return diss, 0.0
        dH = fl.ifft(kH, g)
        dv = fl.ifft(kv, g)
        flux = base_energy_rate(self.model, st, dH, dv, self.flux_step,
                                linear=not self.config.nonlinear)
        return diss, flux

    def step(self, state: State) -> State:
        dt = self.dt
        E, Eh = self.E, self.Eh
        Hh, vh = self._to_hat(state)
        t = state.t
        k1H, k1v, s1 = self._f(Hh, vh, t)
        q1 = self._q(s1, k1H, k1v)
        H2, v2 = Hh + dt / 2 * k1H, Eh * (vh + dt / 2 * k1v)
        k2H, k2v, s2 = self._f(H2, v2, t + dt / 2)
        q2 = self._q(s2, k2H, k2v)
        H3, v3 = Hh + dt / 2 * k2H, Eh * vh + dt / 2 * k2v
        k3H, k3v, s3 = self._f(H3, v3, t + dt / 2)
        q3 = self._q(s3, k3H, k3v)
        H4, v4 = Hh + dt * k3H, E * vh + dt * Eh * k3v
        k4H, k4v, s4 = self._f(H4, v4, t + dt)
        q4 = self._q(s4, k4H, k4v)
        Hn = Hh + dt / 6 * (k1H + 2 * k2H + 2 * k3H + k4H)
        vn = E * vh + dt / 6 * (E * k1v + 2 * Eh * (k2v + k3v) + k4v)
        self.dissipation += dt / 6 * (q1[0] + 2 * q2[0] + 2 * q3[0] + q4[0])
        self.flux += dt / 6 * (q1[1] + 2 * q2[1] + 2 * q3[1] + q4[1])
        out = self._from_hat(Hn, vn, t + dt)
        if not (np.all(np.isfinite(out.hdot)) and np.all(np.isfinite(out.vdot))):
            raise BlowUpError(f"non-finite values at t = {t + dt:.6g}", t + dt, state)
        return out


def base_energy_rate(model: MaterialModel, st: State, dH: np.ndarray, dv: np.ndarray,
                     h: float = 1e-4, linear: bool = False) -> float:
    """d/dt E00 along (dH, dv) with viscosity omitted.

    The derivative of ahat(H) along dH is a central difference with step
    ``h / max|dH|``.  In linear mode ahat is frozen at the identity.
    """
    g = st.grid
    Hd = st.hdot
    I = np.eye(3)[:, :, None, None, None]
    if linear:
        A = model.ahat_identity()
        main = np.einsum("lmpj,pl...,jm...->", A, Hd, dH, optimize=True)
        return float((main + np.sum(st.vdot * dv)) * g.dV)
    H = I + Hd
    total = float(np.sum(ahat_bilinear(model, H, Hd, dH)))
    scale = float(np.max(np.abs(dH)))
    if scale > 0:
        s = h / scale
        dq = (ahat_bilinear(model, H + s * dH, Hd, Hd)
              - ahat_bilinear(model, H - s * dH, Hd, Hd)) / (2 * s)
        total += 0.5 * float(np.sum(dq))
    return float((total + np.sum(st.vdot * dv)) * g.dV)


_INTEGRATORS: dict[int, Integrator] = {}


def step(state: State, config: SolverConfig) -> State:
    """Advance one step of size ``config.step_dt``."""
    integ = _INTEGRATORS.get(id(config))
    if integ is None or integ.config is not config:
        _INTEGRATORS.clear()
        integ = _INTEGRATORS[id(config)] = Integrator(config)
    return integ.step(state)


# --------------------------------------------------------------------------
# initial data
# --------------------------------------------------------------------------

def _gaussian_sum(x, centers, amps, width):
    """Vector potential sum_k a_k g_k and its analytic curl sum_k grad g_k x a_k."""
    pot = np.zeros_like(x)
    crl = np.zeros_like(x)
    for c, a in zip(centers, amps):
        d = x - c.reshape((3,) + (1,) * (x.ndim - 1))
        gk = np.exp(-np.sum(d * d, axis=0) / (2 * width**2))
        pot += a.reshape((3,) + (1,) * (x.ndim - 1)) * gk
        grad = -d / width**2 * gk
        crl += np.stack([grad[1] * a[2] - grad[2] * a[1],
                         grad[2] * a[0] - grad[0] * a[2],
                         grad[0] * a[1] - grad[1] * a[0]])
    return pot, crl


def _flow_displacement(x, centers, amps, width, lam, nsub):
    """X(x) - x for the time-1 flow of lam * curl(potential), by RK4."""
    y = x.copy()
    h = 1.0 / nsub

    def w(p):
        return lam * _gaussian_sum(p, centers, amps, width)[1]

    for _ in range(nsub):
        k1 = w(y)
        k2 = w(y + h / 2 * k1)
        k3 = w(y + h / 2 * k2)
        k4 = w(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y - x


def generate_initial_data(seed: int, epsilon: float, grid: Grid, n_bumps: int = 3,
                          width: float | None = None, nsub: int = 8,
                          max_refine: int = 4, det_tol: float = 1e-8) -> State:
    """Seeded admissible data with (1/2)(||Hdot||^2 + ||v||^2) = epsilon^2.

    The velocity is the spectral curl of a sum of Gaussian vector
    potentials, so it is divergence free.  Hdot is the spectral gradient
    of the displacement of a time-1 volume preserving flow, so it is curl
    free with det(I + Hdot) = 1 up to the flow integrator.  Both families
    have Gaussian width ``width`` (default L/8) and centres within L/16 of
    the origin.  All randomness comes from a Philox generator keyed by
    ``seed``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0:
        return State.zeros(grid)
    width = grid.L / 8 if width is None else width
    rng = np.random.Generator(np.random.Philox(seed))

    def draw():
        u = rng.standard_normal((n_bumps, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = grid.L / 16 * rng.random(n_bumps) ** (1 / 3)
        return u * rad[:, None], rng.standard_normal((n_bumps, 3))

    cv, av = draw()
    cx, ax = draw()
    x = grid.x
    pot, _ = _gaussian_sum(x, cv, av, width)
    v_unit = fl.dealias(fl.curl(fl.dealias(pot, grid), grid), grid)

    def build(lam, nsub):
        D = _flow_displacement(x, cx, ax, width, lam, nsub)
        hd = fl.dealias(fl.gradient(fl.dealias(D, grid), grid), grid)
        return hd

    def energy(lam, nsub):
        hd = build(lam, nsub)
        e = 0.5 * (fl.l2_norm(hd, grid) ** 2 + lam**2 * fl.l2_norm(v_unit, grid) ** 2)
        return e, hd

    target = epsilon**2
    probe = 1e-6
    e0, _ = energy(probe, 2)
    lam = probe * np.sqrt(target / e0)
    lam_prev, f_prev = None, None
    for _ in range(30):
        e, hd = energy(lam, nsub)
        f = np.log(e) - np.log(target)
        if abs(f) < 1e-13:
            break
        if f_prev is None or f == f_prev:
            new = lam * np.exp(-f / 2)
        else:
            new = lam - f * (lam - lam_prev) / (f - f_prev)
        lam_prev, f_prev, lam = lam, f, new
    st = State(hd, lam * v_unit, 0.0, grid)
    res = constraint_residuals(st)["det_res_max"]
    for _ in range(max_refine):
        if res <= det_tol:
            return st
        nsub *= 2
        log.info("det residual %.3g above %.1g; refining flow to %d substeps", res, det_tol, nsub)
        st = State(build(lam, nsub), lam * v_unit, 0.0, grid)
        prev, res = res, constraint_residuals(st)["det_res_max"]
        if res > 0.5 * prev:
            # substeps no longer help: the grid cannot resolve the displacement
            raise ValueError(f"initial data det residual {res:.3g} exceeds {det_tol:g} and is "
                             f"limited by spatial resolution at n = {grid.n}; use a finer grid, "
                             f"a wider profile or a looser det_tol")
    if res > det_tol:
        raise ValueError(f"initial data det residual {res:.3g} exceeds {det_tol:g} "
                         f"after {max_refine} refinements")
    return st
