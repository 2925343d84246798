"""Shear-wave null condition for the tensor B at the identity.

B[l, m, n, p, j, k] has two parts: the derivative d ahat[l, m, p, j] / d H[k, n]
and the family ahat[l, m, p, j](I) delta[n, k].  The null condition asks
that B contracted with omega_l omega_m omega_n and three vectors tangent
to omega vanishes.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .constitutive import MaterialModel

__all__ = [
    "NumericalQualityWarning",
    "BTensor",
    "NullReport",
    "b_tensor",
    "p1_project",
    "p2_project",
    "null_residual",
    "null_condition_check",
]

UNIT_TOL = 1e-12


class NumericalQualityWarning(UserWarning):
    """Finite differences at h and h/2 disagree beyond tolerance."""


@dataclass
class BTensor:
    derivative: np.ndarray
    delta_part: np.ndarray
    h: float
    richardson_gap: float = 0.0

    @property
    def total(self) -> np.ndarray:
        return self.derivative + self.delta_part


def _derivative(model: MaterialModel, h: float) -> np.ndarray:
    D = np.empty((3, 3, 3, 3, 3, 3))
    I = np.eye(3)
    for k in range(3):
        for n in range(3):
            E = np.zeros((3, 3))
            E[k, n] = h
            dA = (model.ahat(I + E) - model.ahat(I - E)) / (2 * h)
            # dA[l, m, p, j] -> D[l, m, n, p, j, k]
            D[:, :, n, :, :, k] = dA
    return D


def b_tensor(model: MaterialModel, h: float = 1e-5, tol: float = 1e-6,
             check: bool = True) -> BTensor:
    """Assemble B at H = I by central differences in each entry of H.

    With ``check`` the derivative is recomputed at h / 2 and a
    :class:`NumericalQualityWarning` is issued when the two differ by more
    than ``tol`` in any entry.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    D = _derivative(model, h)
    gap = 0.0
    if check:
        gap = float(np.max(np.abs(D - _derivative(model, h / 2))))
        if not np.isfinite(gap) or gap > tol:
            warnings.warn(f"B finite differences at h = {h:g} and h/2 differ by {gap:.3g}",
                          NumericalQualityWarning, stacklevel=2)
    A0 = model.ahat_identity()
    delta = np.einsum("lmpj,nk->lmnpjk", A0, np.eye(3))
    return BTensor(D, delta, h, gap)


def _check_unit(omega):
    omega = np.asarray(omega, dtype=float)
    if abs(float(np.linalg.norm(omega)) - 1.0) > UNIT_TOL:
        raise ValueError(f"omega must be a unit vector, |omega| = {np.linalg.norm(omega):.17g}")
    return omega


def p1_project(u, omega) -> np.ndarray:
    """Projection onto the plane orthogonal to ``omega``."""
    omega = _check_unit(omega)
    u = np.asarray(u, dtype=float)
    return u - np.dot(u, omega) * omega


def p2_project(u, omega) -> np.ndarray:
    """Projection onto span{omega}."""
    omega = _check_unit(omega)
    u = np.asarray(u, dtype=float)
    return np.dot(u, omega) * omega


def null_residual(B, omega, xi1, xi2, xi3) -> float:
    """|B[l,m,n,p,j,k] w_l w_m w_n (P1 xi1)_p (P1 xi2)_j (P1 xi3)_k|."""
    T = B.total if isinstance(B, BTensor) else np.asarray(B)
    w = _check_unit(omega)
    a, b, c = (p1_project(x, w) for x in (xi1, xi2, xi3))
    return abs(float(np.einsum("lmnpjk,l,m,n,p,j,k->", T, w, w, w, a, b, c, optimize=True)))


@dataclass
class NullReport:
    max_residual: float
    n_samples: int
    derivative_max: float
    delta_max: float
    tol: float
    passed: bool
    seed: int
    richardson_gap: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.to_dict().items() if k != "notes"]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def _samples(rng, n):
    w = rng.standard_normal((n, 3))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    xs = []
    for _ in range(3):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        xs.append(d * rng.random(n)[:, None] ** (1 / 3))
    return w, xs


def _batch_residual(T, w, xs):
    P = [x - np.einsum("si,si->s", x, w)[:, None] * w for x in xs]
    return np.abs(np.einsum("lmnpjk,sl,sm,sn,sp,sj,sk->s", T, w, w, w, *P, optimize=True))


def null_condition_check(model: MaterialModel, n_samples: int = 1000, seed: int = 7,
                         tol: float = 1e-6, h: float = 1e-5) -> NullReport:
    """Max null residual over seeded samples: omega uniform on the sphere,
    xi uniform in the unit ball.  Derivative, delta and summed contractions
    are reported separately.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NumericalQualityWarning)
        B = b_tensor(model, h=h, tol=tol)
    for c in caught:
        notes.append(str(c.message))
        warnings.warn(c.message, NumericalQualityWarning, stacklevel=2)
    rng = np.random.Generator(np.random.Philox(seed))
    w, xs = _samples(rng, n_samples)
    r_der = _batch_residual(B.derivative, w, xs)
    r_del = _batch_residual(B.delta_part, w, xs)
    r_tot = _batch_residual(B.total, w, xs)
    mx = float(r_tot.max())
    return NullReport(mx, n_samples, float(r_der.max()), float(r_del.max()), tol,
                      bool(mx <= tol), seed, B.richardson_gap, notes)
