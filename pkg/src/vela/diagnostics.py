"""Energies, weighted norms, decay ratios and inequality monitors.

Everything is evaluated on a single state together with its time
derivative.  The vector fields are Upsilon = (d_1, d_2, d_3, Omega~_1,
Omega~_2, Omega~_3) and the scaling field S~ = t d_t + r d_r - 1; orders are
truncated to sigma <= 2 and a single application of S~.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fields as fl
from .constitutive import MaterialModel
from .dynamics import (
    State,
    _velocity_forcing,
    ahat_field,
    constraint_residuals,
    mh_term,
    pressure_gradient,
    pressure_gradient_poisson,
    time_derivative,
    transport_term,
)
from .fields import CutoffParams, Grid

__all__ = [
    "DegenerateInputError",
    "CapabilityError",
    "EnergyReport",
    "DecayReport",
    "LEDEntry",
    "Analyzer",
    "energy",
    "energy_table",
    "weighted_norms",
    "spectral_split",
    "apply_symbol",
    "led_ratio",
    "hardy_ratio",
    "sobolev3_check",
    "corollary_monitors",
    "theorem_monitor",
    "TheoremVerdict",
    "windowed_family",
    "CSV_COLUMNS",
]

LAMBDAS = {"+": 1.0, "-": -1.0, "0": 0.0}
CSV_COLUMNS = ["t", "E_0_0", "E_1_0", "E_2_0", "E_2_1", "dissip_int", "div_v_max",
               "det_res_max", "curl_res_max", "X", "Xi", "Psi", "led_int_ratio",
               "led_ext_ratio", "p_ratio", "sob4", "sob5", "sob6", "sob7", "sob8"]
EXTRA_COLUMNS = ["E_1_1", "diss_rate_1_1", "diss_rate_2_0", "diss_rate_2_1", "p_paths_diff",
                 "boundary_max", "proj_bound_ratio"]


class DegenerateInputError(ValueError):
    pass


class CapabilityError(ValueError):
    pass


# --------------------------------------------------------------------------
# pointwise projections
# --------------------------------------------------------------------------

def spectral_split(H: np.ndarray, v: np.ndarray, omega: np.ndarray):
    """Eigen-projections of A(omega) U = (v x omega, H omega).

    Parameters
    ----------
    H, v : ndarray
        Matrix part ``(3, 3, ...)`` and vector part ``(3, ...)``.
    omega : ndarray
        Unit vectors ``(3, ...)``; zero vectors give P0 = identity on H.

    Returns
    -------
    dict
        ``{"+": (H+, v+), "-": (H-, v-), "0": (H0, v0)}`` with eigenvalues
        +1, -1 and 0.
    """
    Hw = np.einsum("ij...,j...->i...", H, omega)
    vp = 0.5 * (v + Hw)
    vm = 0.5 * (v - Hw)
    outer = lambda a: np.einsum("i...,j...->ij...", a, omega)  # noqa: E731
    return {
        "+": (outer(vp), vp),
        "-": (-outer(vm), vm),
        "0": (H - outer(Hw), np.zeros_like(v)),
    }


def apply_symbol(H, v, omega):
    """A(omega)(H, v) = (v x omega, H omega)."""
    return (np.einsum("i...,j...->ij...", v, omega), np.einsum("ij...,j...->i...", H, omega))


def _pair_norm(pair, grid):
    H, v = pair
    s = 0.0
    if H is not None:
        s += float(np.sum(H * H))
    if v is not None:
        s += float(np.sum(v * v))
    return math.sqrt(s * grid.dV)


def _pair_abs(pair):
    H, v = pair
    return np.sqrt(np.sum(H * H, axis=(0, 1)) + np.sum(v * v, axis=0))


# --------------------------------------------------------------------------
# vector-field bookkeeping
# --------------------------------------------------------------------------

class _Field:
    """A pair (H, v) with its spatial gradient computed on demand."""

    def __init__(self, H, v, grid):
        self.H, self.v, self.grid = H, v, grid
        self._g = None

    @property
    def pair(self):
        return self.H, self.v

    @property
    def grad(self):
        if self._g is None:
            self._g = (fl.gradient(self.H, self.grid), fl.gradient(self.v, self.grid))
        return self._g

    @property
    def grad_v(self):
        if self._g is not None:
            return self._g[1]
        return fl.gradient(self.v, self.grid)

    def upsilon(self, which=range(6)):
        """The fields Upsilon_k U for k in ``which`` (d_1..d_3, Omega~_1..Omega~_3)."""
        gH, gv = self.grad
        x = self.grid.x
        out = []
        for k in which:
            if k < 3:
                out.append(_Field(gH[:, :, k], gv[:, k], self.grid))
                continue
            i = k - 3
            a, b = (i + 1) % 3, (i + 2) % 3
            V = fl.rotation_generator(i)
            OH = x[a] * gH[:, :, b] - x[b] * gH[:, :, a]
            OH = OH + np.einsum("ab,bj...->aj...", V, self.H) - np.einsum("ib...,bj->ij...", self.H, V)
            Ov = x[a] * gv[:, b] - x[b] * gv[:, a] + np.einsum("ab,b...->a...", V, self.v)
            out.append(_Field(OH, Ov, self.grid))
        return out

    def radial(self):
        """(r d_r H, r d_r v)."""
        gH, gv = self.grad
        x = self.grid.x
        return (np.einsum("ijk...,k...->ij...", gH, x), np.einsum("ik...,k...->i...", gv, x))

    def symbol(self):
        """A(grad) U = (grad v, div H)."""
        gH, gv = self.grad
        return gv, np.einsum("ijj...->i...", gH)


class _QuadForm:
    """Integral of ahat(H) M . M with ahat tabulated once per state.

    ahat is flattened to a symmetric 9 x 9 form in the pairs (p, l) and
    (j, m) and only its upper triangle is kept.
    """

    def __init__(self, model: MaterialModel, H: np.ndarray, dV: float):
        A = ahat_field(model, H)
        npts = A[0, 0, 0, 0].size
        Q = A.transpose(2, 0, 3, 1, 4, 5, 6).reshape(9, 9, npts)
        self.terms = []
        for a in range(9):
            self.terms.append((a, a, np.ascontiguousarray(Q[a, a])))
            for b in range(a + 1, 9):
                self.terms.append((a, b, Q[a, b] + Q[b, a]))
        self.dV = dV

    def integral(self, M: np.ndarray) -> float:
        m = M.reshape(9, -1)
        return float(sum(np.dot(S, m[a] * m[b]) for a, b, S in self.terms)) * self.dV


def _split_sq(H, v, omega, om2):
    """Pointwise |P+ U|^2, |P- U|^2, |P0 U|^2 without forming the projections."""
    Hw = np.einsum("ij...,j...->i...", H, omega)
    hw2 = np.sum(Hw * Hw, axis=0)
    vp = 0.5 * (v + Hw)
    vm = 0.5 * (v - Hw)
    return {
        "+": np.sum(vp * vp, axis=0) * (1.0 + om2),
        "-": np.sum(vm * vm, axis=0) * (1.0 + om2),
        "0": np.sum(H * H, axis=(0, 1)) - 2.0 * hw2 + hw2 * om2,
    }


BUCKET_KEYS = ("E", "plain", "norm", "gradv2", "X", "Xi", "Psi", "proj_bound")
LOW_X_ORDERS = ((0, 0), (0, 1), (1, 0))
HIGH_X_ORDERS = ((0, 0), (0, 1), (0, 2))


class Analyzer:
    """Streams the vector-field hierarchy of one state.

    Fields S~^a Upsilon^alpha U with a <= 1, a + |alpha| <= 2 are produced
    depth first and reduced on the fly into per-(a, |alpha|) buckets, so
    only a handful of fields is alive at any time.  ``x_orders`` lists the
    (a, |alpha|) buckets that also receive the weighted X, Xi, Psi sums.
    """

    def __init__(self, state: State, model: MaterialModel, dU_dt=None,
                 dealias: bool = True, nonlinear: bool = True,
                 cutoff: CutoffParams | None = None):
        self.state = state
        self.model = model
        self.grid = state.grid
        self.t = state.t
        if dU_dt is None:
            dU_dt = time_derivative(state, model, dealias, nonlinear)
        self.dU = _Field(dU_dt[0], dU_dt[1], self.grid)
        self.U = _Field(state.hdot, state.vdot, self.grid)
        self.cutoff = cutoff or CutoffParams()
        self._H = np.eye(3)[:, :, None, None, None] + state.hdot
        self.SU = None
        self.omega_H_norms = []

    def _scaled(self, f: _Field, df: _Field) -> _Field:
        rH, rv = f.radial()
        return _Field(self.t * df.H + rH - f.H, self.t * df.v + rv - f.v, self.grid)

    def _weights(self):
        g = self.grid
        eta, gamma = fl.cutoffs(self.t, self.cutoff, g)
        w = {iota: fl.japanese(lam * self.t - g.r) for iota, lam in LAMBDAS.items()}
        return eta, gamma, w

    def scan(self, sigma: int = 2, theta: int = 1, dissipation: bool = True,
             x_orders=LOW_X_ORDERS) -> dict:
        """Reduce every field with a + |alpha| <= sigma, a <= theta into buckets."""
        if theta > 1 or theta < 0:
            raise CapabilityError("only a single application of S~ is supported (theta <= 1)")
        if sigma > 2 or sigma < 0 or theta > sigma:
            raise CapabilityError(f"unsupported order (sigma, theta) = ({sigma}, {theta})")
        x_orders = {o for o in x_orders if o[0] <= theta and sum(o) <= sigma}
        g = self.grid
        eta, gamma, w = self._weights()
        w2 = {k: (v * v).ravel() for k, v in w.items()}
        gw2 = {k: ((gamma * v) ** 2).ravel() for k, v in w.items()}
        om2 = np.sum(g.omega**2, axis=0)
        jt = float(fl.japanese(self.t))
        e2 = ((eta * jt) ** 2).ravel()
        qf = _QuadForm(self.model, self._H, g.dV)
        dV = g.dV
        buckets = {}

        def sqsum(a):
            a = a.ravel()
            return float(np.dot(a, a))

        def reduce(a, k, f):
            b = buckets.setdefault((a, k), dict.fromkeys(BUCKET_KEYS, 0.0))
            sv = sqsum(f.v) * dV
            sq = sqsum(f.H) * dV + sv
            b["E"] += 0.5 * (qf.integral(f.H) + sv)
            b["plain"] += 0.5 * sq
            b["norm"] += math.sqrt(sq)
            if dissipation:
                b["gradv2"] += sqsum(f.grad_v) * dV
            if (a, k) in x_orders:
                gH, gv = f.grad
                dens = (np.sum(gH * gH, axis=(0, 1, 2)) + np.sum(gv * gv, axis=(0, 1))).ravel()
                b["Psi"] += math.sqrt(float(np.dot(e2, dens)) * dV)
                for j in range(3):
                    parts = _split_sq(gH[:, :, j], gv[:, j], g.omega, om2)
                    for iota, s in parts.items():
                        s = s.ravel()
                        x_ = math.sqrt(max(float(np.dot(w2[iota], s)), 0.0) * dV)
                        xi_ = math.sqrt(max(float(np.dot(gw2[iota], s)), 0.0) * dV)
                        b["X"] += x_
                        b["Xi"] += xi_
                        if x_ > 0:
                            b["proj_bound"] = max(b["proj_bound"], xi_ / x_)

        U, dU = self.U, self.dU
        reduce(0, 0, U)
        if theta >= 1:
            self.SU = self._scaled(U, dU)
            reduce(1, 0, self.SU)
        if sigma >= 1:
            kids = U.upsilon()
            dkids = dU.upsilon() if theta >= 1 and sigma >= 2 else [None] * 6
            self.omega_H_norms = [fl.l2_norm(f.H, g) for f in kids[3:]]
            for j, (f, df) in enumerate(zip(kids, dkids)):
                reduce(0, 1, f)
                if df is not None:
                    reduce(1, 1, self._scaled(f, df))
                if sigma >= 2:
                    # Upsilon^alpha = Y_1^a1 ... Y_6^a6: second order fields Y_i Y_j, i <= j
                    for ff in f.upsilon(range(j + 1)):
                        reduce(0, 2, ff)
                f._g = None
        return buckets


def _sum_buckets(buckets, sigma, theta, key):
    return sum(v[key] for (a, k), v in buckets.items() if a <= theta and a + k <= sigma)


def energy_table(buckets: dict, sigma: int = 2, theta: int = 1) -> dict:
    """E, the plain squared-norm sum and the grad v sum for every order up to (sigma, theta)."""
    out = {}
    for s in range(sigma + 1):
        for th in range(min(s, theta) + 1):
            out[(s, th)] = {key: _sum_buckets(buckets, s, th, key)
                            for key in ("E", "plain", "gradv2")}
    return out


def energy(state: State, model: MaterialModel, sigma: int = 0, theta: int = 0,
           dU_dt=None) -> float:
    """E_{sigma, theta}: (1/2) sum of int ahat(H) S~^a Y^alpha Hdot . S~^a Y^alpha Hdot + |S~^a Y^alpha v|^2."""
    if not (0 <= theta <= 1 and 0 <= sigma <= 2 and theta <= sigma):
        raise CapabilityError(f"unsupported order (sigma, theta) = ({sigma}, {theta})")
    if theta == 1 and dU_dt is None:
        raise CapabilityError("theta = 1 needs the time derivative dU_dt")
    if dU_dt is None:
        dU_dt = (np.zeros_like(state.hdot), np.zeros_like(state.vdot))
    b = Analyzer(state, model, dU_dt).scan(sigma, theta, dissipation=False, x_orders=())
    return _sum_buckets(b, sigma, theta, "E")


# --------------------------------------------------------------------------
# weighted norms
# --------------------------------------------------------------------------

def weighted_norms(state: State, dU_dt, cutoff: CutoffParams | None = None,
                   model: MaterialModel | None = None, sigma: int = 2, theta: int = 1):
    """(X, Xi, Psi) summed over a + |alpha| <= sigma - 1, a <= theta.

    ``sigma`` may be 3 only with ``theta = 0``.
    """
    from .constitutive import make_model

    if sigma < 1 or theta > 1 or (sigma == 3 and theta) or sigma > 3:
        raise CapabilityError(f"unsupported order (sigma, theta) = ({sigma}, {theta})")
    orders = [(a, k) for a in range(theta + 1) for k in range(sigma - a)]
    an = Analyzer(state, model or make_model(), dU_dt, cutoff=cutoff)
    b = an.scan(max(o[0] + o[1] for o in orders), theta, dissipation=False, x_orders=orders)
    tot = lambda key: sum(b[o][key] for o in orders)  # noqa: E731
    return tot("X"), tot("Xi"), tot("Psi")


# --------------------------------------------------------------------------
# local energy decay
# --------------------------------------------------------------------------

@dataclass
class LEDEntry:
    t: float
    interior_lhs: float
    interior_rhs: float
    exterior_lhs: float
    exterior_rhs: float
    interior_ratio: float
    exterior_ratio: float
    anomaly: bool = False


@dataclass
class DecayReport:
    entries: list[LEDEntry] = field(default_factory=list)

    @property
    def max_interior(self) -> float:
        return max((e.interior_ratio for e in self.entries), default=0.0)

    @property
    def max_exterior(self) -> float:
        return max((e.exterior_ratio for e in self.entries), default=0.0)


def _ratio(lhs, rhs):
    if rhs > 0:
        return lhs / rhs, False
    return 0.0, lhs > 0


def led_ratio(state: State, f: np.ndarray, g: np.ndarray, cutoff: CutoffParams | None = None,
              model: MaterialModel | None = None, dU_dt=None,
              analyzer: Analyzer | None = None) -> LEDEntry:
    """Measured n = 0 sides of the interior and exterior decay estimates.

    ``f`` and ``g`` are the forcing of d_t Hdot + grad v = f and
    d_t v + div Hdot - nu lap v = g (nonlinear terms and pressure).
    """
    cutoff = cutoff or CutoffParams()
    if analyzer is None:
        from .constitutive import make_model

        analyzer = Analyzer(state, model or make_model(), dU_dt, cutoff=cutoff)
    nu = analyzer.model.nu
    grid = state.grid
    t = state.t
    eta, gamma = fl.cutoffs(t, cutoff, grid)
    jt = float(fl.japanese(t))
    U = analyzer.U
    gH, gv = U.grad
    lap_v = fl.laplacian(state.vdot, grid)
    SU = analyzer.SU if analyzer.SU is not None else analyzer._scaled(U, analyzer.dU)
    norm = lambda a: fl.l2_norm(a, grid)  # noqa: E731
    divf = fl.divergence(f, grid)

    lhs_i = _pair_norm((eta * jt * gH, eta * jt * gv), grid) + norm(eta * nu * t * lap_v)
    rhs_i = (nu * norm(SU.grad[0]) + _pair_norm(SU.pair, grid) + _pair_norm((gH, gv), grid)
             + _pair_norm(U.pair, grid) + norm(eta * t * f) + norm(eta * t * g)
             + nu * norm(eta * t * divf))
    rH, rv = U.radial()
    aH, av = U.symbol()
    lhs_e = _pair_norm((gamma * (rH - t * aH), gamma * (rv - t * av)), grid) \
        + norm(gamma * nu * t * lap_v)
    om = analyzer.omega_H_norms
    if not om:
        om = [norm(fl.omega_tilde((state.hdot, None), i, grid)[0]) for i in range(3)]
    rhs_e = (sum(om) + _pair_norm(SU.pair, grid) + norm(gv) + norm(state.vdot)
             + norm(gamma * t * f) + norm(gamma * t * g))
    ri, ai = _ratio(lhs_i, rhs_i)
    re, ae = _ratio(lhs_e, rhs_e)
    return LEDEntry(t, lhs_i, rhs_i, lhs_e, rhs_e, ri, re, ai or ae)


# --------------------------------------------------------------------------
# Hardy and Sobolev
# --------------------------------------------------------------------------

def hardy_ratio(f: np.ndarray, grid: Grid) -> float:
    """||f / rho|| / ||d_rho f|| (origin node excluded)."""
    num = fl.l2_norm(f * grid.inv_r, grid)
    den = fl.l2_norm(fl.radial_derivative(f, grid), grid)
    if den == 0:
        raise DegenerateInputError("d_rho f vanishes identically")
    return num / den


def _tail_norms(values_sq, r, order):
    """sqrt of sum over rho >= r_i of values_sq, aligned with ``order``."""
    v = values_sq.ravel()[order]
    tail = np.cumsum(v[::-1])[::-1]
    return tail


def sobolev3_check(f: np.ndarray, grid: Grid, lam: float = 1.0,
                   r_max: float | None = None) -> float:
    """sup |f(x)| over the product of tail norms on the right of the
    weighted Sobolev inequality with exponent ``lam``.

    The sup runs over grid points with 0 < r <= ``r_max`` (default 0.8 L).
    """
    if not 0 <= lam <= 2:
        raise ValueError("lambda must lie in [0, 2]")
    if not np.any(f):
        raise DegenerateInputError("f vanishes identically")
    r = grid.r
    r_max = 0.8 * grid.L if r_max is None else r_max
    inv_r = grid.inv_r
    with np.errstate(divide="ignore"):
        w1 = np.where(r > 0, inv_r**lam, 0.0)
        w2 = np.where(r > 0, inv_r ** (2 - lam), 0.0)
    lvl0 = [f]
    lvl1 = [fl.omega_scalar(f, i, grid) for i in range(3)]
    lvl2 = [fl.omega_scalar(h, i, grid) for h in lvl1 for i in range(3)]
    first = [fl.radial_derivative(h, grid) for h in lvl0 + lvl1]
    order = np.argsort(r.ravel(), kind="stable")
    dV = grid.dV
    n1 = sum(np.sqrt(_tail_norms((w1 * h) ** 2 * dV, r, order)) for h in first)
    n2 = sum(np.sqrt(_tail_norms((w2 * h) ** 2 * dV, r, order)) for h in lvl0 + lvl1 + lvl2)
    rs = r.ravel()[order]
    # points sharing a radius share the tail from the first of them
    first_idx = np.searchsorted(rs, rs, side="left")
    den = np.sqrt(n1[first_idx] * n2[first_idx])
    num = np.abs(f.ravel()[order])
    sel = (rs > 0) & (rs <= r_max) & (den > 0)
    if not np.any(sel):
        raise DegenerateInputError("no admissible points")
    return float(np.max(num[sel] / den[sel]))


def windowed_family(grid: Grid, count: int, seed: int, modes: int = 3,
                    radius: float | None = None):
    """Seeded smooth functions supported in r <= 2 ``radius`` (default L/4).

    Each is a random trigonometric polynomial of degree ``modes`` in units
    of the fundamental wavenumber, times the smooth step zeta(r / radius).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    radius = grid.L / 4 if radius is None else radius
    window = fl.zeta(grid.r / radius)
    x = grid.x
    k0 = grid.k0
    for _ in range(count):
        f = np.zeros(grid.shape)
        for _ in range(4):
            kv = rng.integers(-modes, modes + 1, size=3) * k0
            ph = rng.uniform(0, 2 * np.pi)
            f += rng.standard_normal() * np.cos(np.einsum("k,k...->...", kv, x) + ph)
        f += rng.standard_normal()
        yield f * window


# --------------------------------------------------------------------------
# corollary monitors
# --------------------------------------------------------------------------

def corollary_monitors(state: State, dU_dt=None, model: MaterialModel | None = None,
                       cutoff: CutoffParams | None = None, buckets: dict | None = None,
                       MH: np.ndarray | None = None) -> dict[str, float]:
    """Ratios of the pointwise left sides to the right sides at alpha = 0, a = 0.

    D2 is the sum of ||Upsilon^beta U|| over |beta| <= 2.  X and Psi use
    sigma = 3, theta = 0.  The sup is taken over 0 < r <= 0.8 L.
    """
    cutoff = cutoff or CutoffParams()
    g = state.grid
    t = state.t
    if buckets is None:
        from .constitutive import make_model

        an = Analyzer(state, model or make_model(), dU_dt, cutoff=cutoff)
        buckets = an.scan(2, 0, dissipation=False, x_orders=HIGH_X_ORDERS)
    r = g.r
    inside = (r > 0) & (r <= 0.8 * g.L)
    D2 = sum(buckets[(0, k)]["norm"] for k in range(3))
    if D2 == 0:
        return {f"sob{i}": 0.0 for i in range(4, 9)}
    X3 = sum(buckets[o]["X"] for o in HIGH_X_ORDERS)
    Psi3 = sum(buckets[o]["Psi"] for o in HIGH_X_ORDERS)
    U = (state.hdot, state.vdot)
    jr = fl.japanese(r)
    out = {"sob4": float(np.max((jr * _pair_abs(U))[inside])) / D2}
    parts = spectral_split(state.hdot, state.vdot, g.omega)
    best = 0.0
    for iota, lam in LAMBDAS.items():
        val = jr * np.sqrt(fl.japanese(lam * t - r)) * _pair_abs(parts[iota])
        best = max(best, float(np.max(val[inside])))
    out["sob5"] = best / (D2 + X3)
    eta, _ = fl.cutoffs(t, cutoff, g)
    supp = inside & (eta > 0)
    sup6 = float(np.max((fl.japanese(t) * _pair_abs(U))[supp])) if np.any(supp) else 0.0
    out["sob6"] = sup6 / (D2 + Psi3)
    if MH is None:
        MH = mh_term(state.hdot, g)
    mfield = _Field(np.zeros((3, 3) + g.shape), MH, g)
    mh_norm = fl.l2_norm(r * MH, g) + sum(fl.l2_norm(r * u.v, g) for u in mfield.upsilon())
    w = g.omega
    radial_H = np.einsum("i...,ij...,j...->...", w, state.hdot, w)
    out["sob7"] = float(np.max((r**1.5 * np.abs(radial_H))[inside])) / (D2 + mh_norm)
    radial_v = np.einsum("i...,i...->...", w, state.vdot)
    out["sob8"] = float(np.max((r**1.5 * np.abs(radial_v))[inside])) / D2
    return out


# --------------------------------------------------------------------------
# per-sample report
# --------------------------------------------------------------------------

@dataclass
class EnergyReport:
    t: float
    energies: dict
    plain: dict
    gradv2: dict
    residuals: dict
    X: float
    Xi: float
    Psi: float
    led: LEDEntry
    p_ratio: float
    p_paths_diff: float
    proj_bound_ratio: float
    sobolev: dict
    boundary_max: float
    dissip_int: float = 0.0

    @classmethod
    def evaluate(cls, state: State, model: MaterialModel, cutoff: CutoffParams | None = None,
                 dealias: bool = True, nonlinear: bool = True, sobolev: bool = True,
                 dissip_int: float = 0.0) -> "EnergyReport":
        cutoff = cutoff or CutoffParams()
        g = state.grid
        rhs, Nv, MH = _velocity_forcing(state, model, dealias, nonlinear)
        gp = pressure_gradient(state, rhs)
        if nonlinear:
            gp2 = pressure_gradient_poisson(state, model, dealias, terms=(Nv, MH))
            NH = transport_term(state.hdot, state.vdot, g, dealias)
        else:
            gp2 = np.zeros_like(gp)
            NH = np.zeros_like(state.hdot)
        dH = -fl.gradient(state.vdot, g) + NH
        dv = fl.leray_project(rhs, g) + model.nu * fl.laplacian(state.vdot, g)
        an = Analyzer(state, model, (dH, dv), dealias, nonlinear, cutoff)
        orders = set(LOW_X_ORDERS) | (set(HIGH_X_ORDERS) if sobolev else set())
        buckets = an.scan(2, 1, dissipation=model.nu > 0, x_orders=orders)
        table = energy_table(buckets, 2, 1)
        X, Xi, Psi = (sum(buckets[o][key] for o in LOW_X_ORDERS) for key in ("X", "Xi", "Psi"))
        pb = max(buckets[o]["proj_bound"] for o in LOW_X_ORDERS)
        fg = Nv - (model.c1**2 - 1.0) * MH - gp
        led = led_ratio(state, NH, fg, cutoff, analyzer=an)
        denom = fl.l2_norm(Nv, g) + fl.l2_norm(MH, g)
        p_ratio, _ = _ratio(fl.l2_norm(gp, g), denom)
        if sobolev:
            sob = corollary_monitors(state, cutoff=cutoff, buckets=buckets, MH=MH)
        else:
            sob = {f"sob{i}": float("nan") for i in range(4, 9)}
        shell = g.r >= 0.8 * g.L
        bmax = float(np.max(_pair_abs((state.hdot, state.vdot))[shell]))
        return cls(
            t=state.t,
            energies={k: v["E"] for k, v in table.items()},
            plain={k: v["plain"] for k, v in table.items()},
            gradv2={k: v["gradv2"] for k, v in table.items()},
            residuals=constraint_residuals(state),
            X=X, Xi=Xi, Psi=Psi, led=led, p_ratio=p_ratio,
            p_paths_diff=fl.l2_norm(gp - gp2, g) if nonlinear else 0.0,
            proj_bound_ratio=pb, sobolev=sob, boundary_max=bmax, dissip_int=dissip_int,
        )

    def row(self) -> dict:
        e = self.energies
        row = {
            "t": self.t, "E_0_0": e[(0, 0)], "E_1_0": e[(1, 0)], "E_2_0": e[(2, 0)],
            "E_2_1": e[(2, 1)], "dissip_int": self.dissip_int, **self.residuals,
            "X": self.X, "Xi": self.Xi, "Psi": self.Psi,
            "led_int_ratio": self.led.interior_ratio, "led_ext_ratio": self.led.exterior_ratio,
            "p_ratio": self.p_ratio, **self.sobolev,
            "E_1_1": e[(1, 1)], "diss_rate_1_1": self.gradv2[(1, 1)],
            "diss_rate_2_0": self.gradv2[(2, 0)], "diss_rate_2_1": self.gradv2[(2, 1)],
            "p_paths_diff": self.p_paths_diff,
            "boundary_max": self.boundary_max, "proj_bound_ratio": self.proj_bound_ratio,
        }
        return row

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("energies", "plain", "gradv2"):
            d[key] = {f"{s}_{th}": v for (s, th), v in getattr(self, key).items()}
        return d


# --------------------------------------------------------------------------
# theorem-shape monitor
# --------------------------------------------------------------------------

@dataclass
class TheoremVerdict:
    passed: bool
    c_prime: float
    c_max: float
    delta: float
    constants: dict = field(default_factory=dict)
    failure_time: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# (energy column, dissipation-rate column, uses the <t>^delta growth factor)
PROXIES = (("E_1_1", "diss_rate_1_1", False),
           ("E_2_0", "diss_rate_2_0", True),
           ("E_2_1", "diss_rate_2_1", True))


def _trapezoid(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(t)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def theorem_monitor(rows: list[dict], nu: float, delta: float = 0.5, c_max: float = 4.0,
                    failure_time: float | None = None) -> TheoremVerdict:
    """Check E(t) + (nu/2) int ||grad S~^a Y^alpha v||^2 <= C' E(0) w(t).

    The low proxy E_{1,1} (as many S~ as derivatives) uses w = 1; the high
    proxies E_{2,0} and E_{2,1} use w = <t>^delta.  C' is the smallest
    constant that works for all three.  ``rows`` are the report rows of
    one run in time order.
    """
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    if failure_time is not None:
        return TheoremVerdict(False, math.inf, c_max, delta, {}, failure_time, "run blew up")
    if not rows:
        raise ValueError("empty history")
    t = np.array([r["t"] for r in rows])
    consts = {}
    for key, rate, grows in PROXIES:
        E = np.array([r[key] for r in rows])
        D = 0.5 * nu * _trapezoid(t, [r[rate] for r in rows])
        if E[0] == 0:
            consts[key] = 1.0 if np.all(E + D == 0) else math.inf
            continue
        w = fl.japanese(t) ** delta if grows else np.ones_like(t)
        consts[key] = float(np.max((E + D) / (E[0] * w)))
    cp = max(consts.values())
    return TheoremVerdict(bool(cp <= c_max), cp, c_max, delta, consts)
