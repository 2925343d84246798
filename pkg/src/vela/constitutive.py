"""Elasticity tensors for incompressible isotropic viscoelasticity.

Index conventions used throughout the package
---------------------------------------------
Matrices are stored row-major with the *upper* index first, so ``F[i, p]``
is F^i_p and ``H[i, j] = dX^i/dx^j``.

* ``A[i, p, n, k] = d^2 W / dF[i, p] dF[n, k]`` is the elasticity tensor
  A^{pk}_{in}.  Major symmetry reads ``A[i, p, n, k] == A[n, k, i, p]``.
* ``ahat[l, m, p, j]`` is the spatial tensor Ahat^{lm}_{pj}(H).  Major
  symmetry reads ``ahat[p, q, m, r] == ahat[q, p, r, m]`` and the elastic
  force is ``ahat[l, m, p, j] H[p, i] d_l H[j, m]``.

Pointwise routines accept leading batch axes: ``H`` of shape ``(..., 3, 3)``
yields ``ahat`` of shape ``(..., 3, 3, 3, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "EvaluationError",
    "MaterialParams",
    "StrainEnergy",
    "MaterialModel",
    "builtin_strain_energy",
    "builtin_coefficients",
    "piola_stress",
    "elasticity_tensor",
    "ahat_from_elasticity",
    "ahat",
    "ahat_identity",
    "oldroyd_b_ahat",
    "inverse3",
    "null_lagrangian",
    "legendre_hadamard_check",
    "positivity_margin",
    "positivity_radius",
    "make_model",
]

FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4

_I3 = np.eye(3)


class EvaluationError(ValueError):
    """Raised when a constitutive evaluation is not finite or not defined."""


@dataclass(frozen=True)
class MaterialParams:
    c1: float = 2.0
    c2: float = 1.0
    nu: float = 0.0

    def __post_init__(self):
        if self.c2 != 1.0:
            raise ValueError("shear-wave speed c2 is fixed to 1")
        if not self.c1 >= self.c2:
            raise ValueError(f"c1 must be >= c2 = 1, got {self.c1}")
        if not self.nu >= 0.0:
            raise ValueError(f"viscosity must be nonnegative, got {self.nu}")


@dataclass(frozen=True)
class StrainEnergy:
    """Strain energy W(F) evaluated on batches of 3x3 matrices.

    ``evaluator`` must accept an array of shape ``(..., 3, 3)`` and return
    ``(...)``.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    kind: str = "user-supplied"

    def __call__(self, F):
        return self.evaluator(np.asarray(F, dtype=float))


# --------------------------------------------------------------------------
# builtin isotropic strain energy
# --------------------------------------------------------------------------

def builtin_coefficients(c1: float, c2: float = 1.0) -> tuple[float, float, float]:
    """Coefficients (a, b, g) of W = a(I1-3) + b(I1-3)^2 + g(I2-3).

    I1 = tr C and I2 = tr C^2 with C = F^T F.  The coefficients are the
    unique solution of S(I) = 0 together with the isotropic form of A(I)
    for wave speeds (c1, c2).
    """
    # rows: S(I)=0, coefficient of d_in d_pk, of d_ip d_nk, of d_ik d_np
    system = np.array([[2.0, 0.0, 4.0],
                       [2.0, 0.0, 8.0],
                       [0.0, 8.0, 0.0],
                       [0.0, 0.0, 4.0]])
    target = np.array([0.0, c2**2, c1**2 - 2 * c2**2, c2**2])
    coef, *_ = np.linalg.lstsq(system, target, rcond=None)
    if np.max(np.abs(system @ coef - target)) > 1e-12:
        raise EvaluationError("isotropic calibration system is inconsistent")
    # the solution is exact in closed form; return it without lstsq rounding
    return -0.5 * c2**2, (c1**2 - 2 * c2**2) / 8.0, 0.25 * c2**2


def builtin_strain_energy(c1: float, c2: float = 1.0) -> StrainEnergy:
    a, b, g = builtin_coefficients(c1, c2)

    def W(F):
        C = np.swapaxes(F, -1, -2) @ F
        I1 = np.trace(C, axis1=-2, axis2=-1)
        I2 = np.einsum("...ij,...ji->...", C, C)
        return a * (I1 - 3.0) + b * (I1 - 3.0) ** 2 + g * (I2 - 3.0)

    return StrainEnergy(W, kind="builtin-isotropic")


def _builtin_piola(F, coef):
    a, b, g = coef
    C = np.swapaxes(F, -1, -2) @ F
    I1 = np.trace(C, axis1=-2, axis2=-1)[..., None, None]
    return 2 * a * F + 4 * b * (I1 - 3.0) * F + 4 * g * (F @ C)


def _builtin_elasticity(F, coef):
    """Analytic A[i, p, n, k] for the builtin polynomial energy."""
    a, b, g = coef
    Ft = np.swapaxes(F, -1, -2)
    C = Ft @ F
    B = F @ Ft
    I1 = np.trace(C, axis1=-2, axis2=-1)[..., None, None, None, None]
    d = _I3
    dd = np.einsum("in,pk->ipnk", d, d)
    out = (2 * a + 4 * b * (I1 - 3.0)) * dd
    out = out + 8 * b * np.einsum("...ip,...nk->...ipnk", F, F)
    out = out + 4 * g * (np.einsum("in,...kp->...ipnk", d, C)
                         + np.einsum("...ik,...np->...ipnk", F, F)
                         + np.einsum("...in,pk->...ipnk", B, d))
    return out


def _builtin_ahat(F, coef, c2):
    """Closed-form pull-back of the builtin A(F), plus the null Lagrangian.

    With B = F F^T, C = F^T F and G = B F the four-fold contraction of the
    analytic A gives
    (2a + 4b(I1-3)) B x C + 8b G.G + 4g (B^2 x C + G.G' + B x C^2).
    """
    a, b, g = coef
    Ft = np.swapaxes(F, -1, -2)
    B = F @ Ft
    C = Ft @ F
    G = B @ F
    I1 = np.trace(C, axis1=-2, axis2=-1)[..., None, None, None, None]
    # axes are (p, q, m, r)
    Bq = B[..., :, :, None, None]
    Cq = C[..., None, None, :, :]
    out = (2 * a + 4 * b * (I1 - 3.0)) * Bq * Cq
    out += 8 * b * G[..., :, None, :, None] * G[..., None, :, None, :]
    out += 4 * g * ((B @ B)[..., :, :, None, None] * Cq
                    + G[..., None, :, :, None] * G[..., :, None, None, :]
                    + Bq * (C @ C)[..., None, None, :, :])
    return out + null_lagrangian(c2)


# --------------------------------------------------------------------------
# finite-difference stress and elasticity tensor
# --------------------------------------------------------------------------

def _check_det(F):
    dets = np.linalg.det(F)
    if np.any(~np.isfinite(dets)) or np.any(dets <= 0):
        raise EvaluationError("deformation gradient must have det F > 0")


def _finite(x, what):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise EvaluationError(f"non-finite {what}")
    return x


def _unit(i, j):
    e = np.zeros((3, 3))
    e[i, j] = 1.0
    return e


def piola_stress(W: StrainEnergy, F, h: float = FD_STEP_FIRST, order: int = 2) -> np.ndarray:
    """Central finite-difference gradient S = dW/dF.

    ``order=4`` uses the five-point stencil; it serves as a reference for
    the default second-order stencil.
    """
    F = np.asarray(F, dtype=float)
    _check_det(F)
    S = np.empty(F.shape)
    for i in range(3):
        for p in range(3):
            e = _unit(i, p)
            if order == 2:
                d = (W(F + h * e) - W(F - h * e)) / (2 * h)
            elif order == 4:
                d = (-W(F + 2 * h * e) + 8 * W(F + h * e)
                     - 8 * W(F - h * e) + W(F - 2 * h * e)) / (12 * h)
            else:
                raise ValueError("order must be 2 or 4")
            S[..., i, p] = _finite(d, "strain energy")
    return S


def elasticity_tensor(W: StrainEnergy, F, h: float = FD_STEP_SECOND) -> np.ndarray:
    """Nested central differences for A[i, p, n, k] = d^2W/dF[i,p]dF[n,k]."""
    if not h > 1e-8:
        raise EvaluationError(f"second-derivative step {h} underflows double precision")
    F = np.asarray(F, dtype=float)
    _check_det(F)
    A = np.empty(F.shape[:-2] + (3, 3, 3, 3))
    idx = [(i, p) for i in range(3) for p in range(3)]
    for a, (i, p) in enumerate(idx):
        ea = _unit(i, p)
        for b, (n, k) in enumerate(idx[a:], start=a):
            eb = _unit(n, k)
            val = (W(F + h * ea + h * eb) - W(F + h * ea - h * eb)
                   - W(F - h * ea + h * eb) + W(F - h * ea - h * eb)) / (4 * h * h)
            val = _finite(val, "strain energy")
            A[..., i, p, n, k] = val
            A[..., n, k, i, p] = val
    return A


# --------------------------------------------------------------------------
# spatial tensor Ahat
# --------------------------------------------------------------------------

def null_lagrangian(c2: float = 1.0) -> np.ndarray:
    d = _I3
    return c2**2 * (np.einsum("pm,qr->pqmr", d, d) - np.einsum("pr,qm->pqmr", d, d))


def ahat_identity(c1: float, c2: float = 1.0) -> np.ndarray:
    """Closed form Ahat(I) = (c1^2 - c2^2) d^p_m d^q_r + c2^2 d^pq d_mr."""
    d = _I3
    return ((c1**2 - c2**2) * np.einsum("pm,qr->pqmr", d, d)
            + c2**2 * np.einsum("pq,mr->pqmr", d, d))


def inverse3(H):
    """Batched 3x3 inverse by cofactors; raises on (near) singular input."""
    H = np.asarray(H, dtype=float)
    a, b, c = H[..., 0, 0], H[..., 0, 1], H[..., 0, 2]
    d, e, f = H[..., 1, 0], H[..., 1, 1], H[..., 1, 2]
    g, h, i = H[..., 2, 0], H[..., 2, 1], H[..., 2, 2]
    A = e * i - f * h
    B = f * g - d * i
    C = d * h - e * g
    det = a * A + b * B + c * C
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) < 1e-12):
        raise EvaluationError("H is singular")
    out = np.empty(H.shape)
    out[..., 0, 0] = A
    out[..., 1, 0] = B
    out[..., 2, 0] = C
    out[..., 0, 1] = c * h - b * i
    out[..., 1, 1] = a * i - c * g
    out[..., 2, 1] = b * g - a * h
    out[..., 0, 2] = b * f - c * e
    out[..., 1, 2] = c * d - a * f
    out[..., 2, 2] = a * e - b * d
    return out / det[..., None, None]


_inverse = inverse3


def ahat_from_elasticity(A, F, c2: float = 1.0) -> np.ndarray:
    """Pull A(F) back to spatial form and add the null Lagrangian.

    ahat[p, q, m, r] = A[a, b, n, k] F[a, m] F[p, b] F[n, r] F[q, k] + L.
    """
    out = np.einsum("...abnk,...am,...pb,...nr,...qk->...pqmr", A, F, F, F, F,
                    optimize=True)
    return out + null_lagrangian(c2)


def ahat(model: "MaterialModel", H) -> np.ndarray:
    return model.ahat(H)


def oldroyd_b_ahat(H) -> np.ndarray:
    """ahat[l, m, p, j] = (F F^T)[l, m] (F^T F)[p, j] with F = H^{-1}."""
    F = _inverse(H)
    Ft = np.swapaxes(F, -1, -2)
    return np.einsum("...lm,...pj->...lmpj", F @ Ft, Ft @ F)


# --------------------------------------------------------------------------
# material models
# --------------------------------------------------------------------------

# Small-index loops over contiguous grid vectors beat einsum here.

def _mm(A, B):
    out = np.empty(np.broadcast_shapes(A.shape, B.shape))
    for i in range(3):
        for k in range(3):
            out[i, k] = A[i, 0] * B[0, k] + A[i, 1] * B[1, k] + A[i, 2] * B[2, k]
    return out


def _mv(A, x):
    return np.stack([A[i, 0] * x[0] + A[i, 1] * x[1] + A[i, 2] * x[2] for i in range(3)])


def _t(A):
    return np.swapaxes(A, 0, 1)


def _tr(A):
    return A[0, 0] + A[1, 1] + A[2, 2]


def _dot9(X, Y):
    """sum_ij X[i, j] Y[i, j]."""
    acc = X[0, 0] * Y[0, 0]
    for i in range(3):
        for j in range(3):
            if i or j:
                acc = acc + X[i, j] * Y[i, j]
    return acc


def _contract_first(X, D):
    """u[j] = X[l, m] D[j, m, l]."""
    return np.stack([_dot9(X, _t(D[j])) for j in range(3)])


@dataclass(frozen=True)
class MaterialModel:
    """Wave speeds, viscosity and an Ahat(H) evaluator.

    ``kind`` is one of ``isotropic`` (builtin W, analytic derivatives),
    ``strain-energy`` (user W, finite differences), ``oldroyd-b``,
    ``constant`` (Ahat frozen at the identity) or ``adversarial`` (a planted
    violation of the shear-wave null condition, for testing the checker).
    """

    params: MaterialParams = field(default_factory=MaterialParams)
    kind: str = "isotropic"
    energy: StrainEnergy | None = None
    perturbation: float = 1.0

    def __post_init__(self):
        kinds = ("isotropic", "strain-energy", "oldroyd-b", "constant", "adversarial")
        if self.kind not in kinds:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {kinds}")
        if self.kind == "strain-energy" and self.energy is None:
            raise ValueError("strain-energy model requires a StrainEnergy")
        if self.kind == "oldroyd-b" and self.params.c1 != 1.0:
            # Ahat(I) of Oldroyd-B is the c1 = c2 = 1 isotropic tensor
            object.__setattr__(self, "params",
                               MaterialParams(1.0, 1.0, self.params.nu))

    @property
    def c1(self) -> float:
        return self.params.c1

    @property
    def c2(self) -> float:
        return self.params.c2

    @property
    def nu(self) -> float:
        return self.params.nu

    def strain_energy(self) -> StrainEnergy:
        if self.kind == "strain-energy":
            return self.energy
        if self.kind == "isotropic":
            return builtin_strain_energy(self.c1, self.c2)
        raise EvaluationError(f"{self.kind} model is not derived from a strain energy")

    def elasticity(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        if self.kind == "isotropic":
            return _builtin_elasticity(F, builtin_coefficients(self.c1, self.c2))
        return elasticity_tensor(self.strain_energy(), F)

    def ahat_identity(self) -> np.ndarray:
        return ahat_identity(self.c1, self.c2)

    def ahat(self, H) -> np.ndarray:
        H = np.asarray(H, dtype=float)
        if self.kind == "oldroyd-b":
            return oldroyd_b_ahat(H)
        if self.kind == "constant":
            _inverse(H)
            return np.broadcast_to(self.ahat_identity(), H.shape[:-2] + (3, 3, 3, 3)).copy()
        if self.kind == "adversarial":
            _inverse(H)
            s = np.sum(H - _I3, axis=(-2, -1))[..., None, None, None, None]
            return self.ahat_identity() + self.perturbation * s * np.ones((3, 3, 3, 3))
        F = _inverse(H)
        if self.kind == "isotropic":
            return _builtin_ahat(F, builtin_coefficients(self.c1, self.c2), self.c2)
        return ahat_from_elasticity(self.elasticity(F), F, self.c2)

    def _factors(self, H):
        F = _inverse(H)
        Ft = np.swapaxes(F, -1, -2)
        return F @ Ft, Ft @ F, F

    def contract(self, H, D) -> np.ndarray:
        """T[..., p] = ahat(H)[l, m, p, j] D[..., j, m, l].

        With ``D[j, m, l] = d_l Hdot^j_m`` this is the inner contraction of
        the elastic force.  Isotropic and Oldroyd-B models use matrix
        identities instead of forming the 81-component tensor.
        """
        H = np.asarray(H, dtype=float)
        D = np.asarray(D, dtype=float)
        if self.kind not in ("isotropic", "oldroyd-b"):
            return np.einsum("...lmpj,...jml->...p", self.ahat(H), D, optimize=True)
        B, C, F = self._factors(H)
        lead = D.shape[:-3]
        D9 = D.reshape(lead + (3, 9))

        def vec(X):
            return X.reshape(lead + (9, 1))

        uB = D9 @ vec(B)  # B symmetric
        if self.kind == "oldroyd-b":
            return (C @ uB)[..., 0]
        a, b, g = builtin_coefficients(self.c1, self.c2)
        G = B @ F
        Gt = np.swapaxes(G, -1, -2)
        I1 = np.trace(C, axis1=-2, axis2=-1)[..., None, None]
        # w[l] = G[m, j] D[j, m, l];  z[m] = G[l, j] D[j, m, l]
        w = np.moveaxis(D, -1, -3).reshape(lead + (3, 9)) @ vec(np.ascontiguousarray(Gt))
        z = np.swapaxes(D, -3, -2).reshape(lead + (3, 9)) @ vec(np.ascontiguousarray(Gt))
        uB2 = D9 @ vec(B @ B)
        T = (2 * a + 4 * b * (I1 - 3.0)) * (C @ uB) + 8 * b * (Gt @ w)
        T += 4 * g * (C @ uB2 + Gt @ z + C @ (C @ uB))
        T = T[..., 0]
        T += self.c2**2 * (np.einsum("...mmp->...p", D) - np.einsum("...lpl->...p", D))
        return T

    def bilinear(self, H, M, K) -> np.ndarray:
        """ahat(H)[l, m, p, j] M[..., p, l] K[..., j, m] pointwise."""
        H = np.asarray(H, dtype=float)
        if self.kind not in ("isotropic", "oldroyd-b"):
            return np.einsum("...lmpj,...pl,...jm->...", self.ahat(H), M, K, optimize=True)
        B, C, F = self._factors(H)
        Kt = np.swapaxes(K, -1, -2)

        def pair(X, Y):
            return np.sum(Y * (M @ X @ Kt), axis=(-2, -1))

        if self.kind == "oldroyd-b":
            return pair(B, C)
        a, b, g = builtin_coefficients(self.c1, self.c2)
        G = B @ F
        I1 = np.trace(C, axis1=-2, axis2=-1)
        tr = lambda X: np.trace(X, axis1=-2, axis2=-1)  # noqa: E731
        out = (2 * a + 4 * b * (I1 - 3.0)) * pair(B, C) + 8 * b * tr(M @ G) * tr(K @ G)
        out += 4 * g * (pair(B @ B, C) + tr(M @ G @ K @ G) + pair(B, C @ C))
        out += self.c2**2 * (tr(M) * tr(K) - tr(M @ K))
        return out

    # component-first variants: matrices of shape (3, 3, *grid) -----------
    @property
    def has_fast_fields(self) -> bool:
        return self.kind in ("isotropic", "oldroyd-b")

    def contract_field(self, H, D) -> np.ndarray:
        """:meth:`contract` for H of shape (3, 3, *S) and D of shape (3, 3, 3, *S)."""
        if not self.has_fast_fields:
            raise NotImplementedError("use the batch-leading contract")
        F = inverse3(np.moveaxis(np.moveaxis(H, 0, -1), 0, -1))
        F = np.moveaxis(np.moveaxis(F, -1, 0), -1, 0)
        B = _mm(F, _t(F))
        C = _mm(_t(F), F)
        uB = _contract_first(B, D)
        if self.kind == "oldroyd-b":
            return _mv(C, uB)
        a, b, g = builtin_coefficients(self.c1, self.c2)
        G = _mm(B, F)
        Gt = _t(G)
        I1 = C[0, 0] + C[1, 1] + C[2, 2]
        # w[l] = G[m, j] D[j, m, l];  z[m] = G[l, j] D[j, m, l]
        w = np.stack([_dot9(Gt, D[:, :, l]) for l in range(3)])
        z = np.stack([_dot9(Gt, D[:, m, :]) for m in range(3)])
        uB2 = _contract_first(_mm(B, B), D)
        T = _mv(C, (2 * a + 4 * b * (I1 - 3.0)) * uB + 4 * g * (uB2 + _mv(C, uB)))
        T += 8 * b * _mv(Gt, w) + 4 * g * _mv(Gt, z)
        T += self.c2**2 * np.stack([_tr(D[:, :, p]) - _tr(D[:, p, :]) for p in range(3)])
        return T

    def bilinear_field(self, H, M, K) -> np.ndarray:
        """:meth:`bilinear` for component-first matrix fields."""
        if not self.has_fast_fields:
            raise NotImplementedError("use the batch-leading bilinear")
        F = inverse3(np.moveaxis(np.moveaxis(H, 0, -1), 0, -1))
        F = np.moveaxis(np.moveaxis(F, -1, 0), -1, 0)
        B = _mm(F, _t(F))
        C = _mm(_t(F), F)
        Kt = _t(K)

        def pair(X, Y):
            return _dot9(Y, _mm(_mm(M, X), Kt))

        if self.kind == "oldroyd-b":
            return pair(B, C)
        a, b, g = builtin_coefficients(self.c1, self.c2)
        G = _mm(B, F)
        I1 = C[0, 0] + C[1, 1] + C[2, 2]
        MG = _mm(M, G)
        KG = _mm(K, G)
        out = (2 * a + 4 * b * (I1 - 3.0)) * pair(B, C) + 8 * b * _tr(MG) * _tr(KG)
        out += 4 * g * (pair(_mm(B, B), C) + _dot9(MG, _t(KG)) + pair(B, _mm(C, C)))
        out += self.c2**2 * (_tr(M) * _tr(K) - _dot9(M, _t(K)))
        return out

    def quadratic_form(self, H, M) -> np.ndarray:
        """Pointwise ahat(H)[l,m,p,j] M[p,l] M[j,m]."""
        return self.bilinear(H, M, M)


def make_model(kind: str = "isotropic", c1: float = 2.0, nu: float = 0.0,
               energy: StrainEnergy | None = None) -> MaterialModel:
    if kind == "oldroyd-b":
        c1 = 1.0
    return MaterialModel(MaterialParams(c1=c1, c2=1.0, nu=nu), kind=kind, energy=energy)


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------

def _sphere(rng, n):
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def legendre_hadamard_check(A_at_I, n_samples: int, rng=None) -> tuple[float, bool]:
    """Minimum of A[i,j,n,k] w_i xi_j w_n xi_k over sampled unit xi, w."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    xi = _sphere(rng, n_samples)
    w = _sphere(rng, n_samples)
    vals = np.einsum("ijnk,si,sj,sn,sk->s", np.asarray(A_at_I), w, xi, w, xi, optimize=True)
    m = float(vals.min())
    return m, m > 0.0


def positivity_margin(model: MaterialModel, delta: float, n_samples: int = 200,
                      rng=None) -> float:
    """min over |Hdot| = delta of ahat(I+Hdot) Hdot.Hdot / |Hdot|^2 - c2^2."""
    rng = np.random.default_rng(0) if rng is None else rng
    Hd = rng.standard_normal((n_samples, 3, 3))
    Hd *= delta / np.linalg.norm(Hd, axis=(1, 2), keepdims=True)
    q = model.quadratic_form(_I3 + Hd, Hd)
    return float(np.min(q / delta**2 - model.c2**2))


def positivity_radius(model: MaterialModel, deltas=None, n_samples: int = 200,
                      seed: int = 0) -> float:
    """Largest sampled delta with a nonnegative positivity margin (0 if none)."""
    deltas = np.geomspace(1e-3, 0.5, 30) if deltas is None else np.asarray(deltas)
    best = 0.0
    for d in np.sort(deltas):
        if positivity_margin(model, d, n_samples, np.random.default_rng(seed)) < 0:
            break
        best = float(d)
    return best
