"""Periodic-grid fields and spectral operators.

The whole-space problem is run on the box [-L, L)^3 with ``n`` points per
axis.  Fields are plain numpy arrays whose *last three* axes are the grid;
leading axes are tensor components.  A scalar field has shape
``(n, n, n)``, a vector field ``(3, n, n, n)`` and a matrix field
``(3, 3, n, n, n)`` with ``H[i, j] = H^i_j``.

Derivatives append their index after the component axes, so
``gradient(H)[i, j, l] = d_l H^i_j`` and ``gradient(v)[i, j] = d_j v^i``.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "CutoffParams",
    "workers",
    "fft",
    "ifft",
    "dealias",
    "gradient",
    "divergence",
    "laplacian",
    "curl",
    "leray_project",
    "poisson_solve",
    "omega_scalar",
    "omega_tilde",
    "rotation_generator",
    "radial_derivative",
    "euler_operator",
    "s_tilde",
    "zeta",
    "cutoffs",
    "japanese",
    "l2_norm",
    "inner",
    "curl_residual",
    "write_snapshot",
    "read_snapshot",
    "SnapshotError",
]

SNAPSHOT_MAGIC = b"VELA"
SNAPSHOT_VERSION = 1


def workers() -> int:
    """FFT thread count, from ``VELA_NUM_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("VELA_NUM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=True)
class Grid:
    """Uniform periodic grid on [-L, L)^3."""

    n: int = 64
    L: float = 2 * np.pi

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def spacing(self) -> float:
        return 2 * self.L / self.n

    @property
    def dV(self) -> float:
        return self.spacing**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def k0(self) -> float:
        """Fundamental wavenumber pi / L."""
        return np.pi / self.L

    @cached_property
    def x(self) -> np.ndarray:
        x1 = -self.L + self.spacing * np.arange(self.n)
        return np.stack(np.meshgrid(x1, x1, x1, indexing="ij"))

    @cached_property
    def r(self) -> np.ndarray:
        return np.sqrt(np.sum(self.x**2, axis=0))

    @cached_property
    def omega(self) -> np.ndarray:
        """Unit radial vector x / r, zero at the origin node."""
        r = self.r
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(r > 0, self.x / np.where(r > 0, r, 1.0), 0.0)
        return w

    @cached_property
    def inv_r(self) -> np.ndarray:
        r = self.r
        return np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Derivative wavenumbers, Nyquist entries set to zero."""
        m = np.fft.fftfreq(self.n, 1.0 / self.n)
        m[self.n // 2] = 0.0
        mz = np.arange(self.n // 2 + 1, dtype=float)
        mz[-1] = 0.0
        k = self.k0
        return (k * m[:, None, None], k * m[None, :, None], k * mz[None, None, :])

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.k
        return kx**2 + ky**2 + kz**2

    @cached_property
    def mask(self) -> np.ndarray:
        """2/3-rule dealiasing mask on the half spectrum."""
        m = np.abs(np.fft.fftfreq(self.n, 1.0 / self.n))
        mz = np.arange(self.n // 2 + 1)
        cut = self.n / 3.0
        return ((m[:, None, None] < cut) & (m[None, :, None] < cut)
                & (mz[None, None, :] < cut))

    def zeros(self, *components: int) -> np.ndarray:
        return np.zeros(tuple(components) + self.shape)

    def check(self, f: np.ndarray) -> None:
        if f.shape[-3:] != self.shape:
            raise ValueError(f"field of shape {f.shape} does not live on a {self.n}^3 grid")


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def fft(f: np.ndarray) -> np.ndarray:
    return sfft.rfftn(f, axes=(-3, -2, -1), workers=workers())


def ifft(fh: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfftn(fh, s=grid.shape, axes=(-3, -2, -1), workers=workers())


def dealias(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply the 2/3-rule mask to a real field."""
    return ifft(fft(f) * grid.mask, grid)


def _grad_hat(fh, grid):
    kx, ky, kz = grid.k
    return np.stack([1j * kx * fh, 1j * ky * fh, 1j * kz * fh], axis=-4)


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral gradient; the derivative index is appended after the components."""
    grid.check(f)
    return ifft(_grad_hat(fft(f), grid), grid)


def _div_hat(wh, grid):
    kx, ky, kz = grid.k
    return 1j * (kx * wh[..., 0, :, :, :] + ky * wh[..., 1, :, :, :] + kz * wh[..., 2, :, :, :])


def divergence(w: np.ndarray, grid: Grid) -> np.ndarray:
    """Contract the last component index with the derivative: d_j w[..., j]."""
    grid.check(w)
    if w.ndim < 4 or w.shape[-4] != 3:
        raise ValueError("divergence needs a trailing component axis of length 3")
    return ifft(_div_hat(fft(w), grid), grid)


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    return ifft(-grid.k2 * fft(f), grid)


def curl(v: np.ndarray, grid: Grid) -> np.ndarray:
    g = gradient(v, grid)  # g[i, j] = d_j v^i
    return np.stack([g[2, 1] - g[1, 2], g[0, 2] - g[2, 0], g[1, 0] - g[0, 1]])


def _leray_hat(wh, grid):
    kx, ky, kz = grid.k
    k2 = grid.k2
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    kdotw = kx * wh[0] + ky * wh[1] + kz * wh[2]
    return np.stack([wh[0] - kx * kdotw * inv, wh[1] - ky * kdotw * inv,
                     wh[2] - kz * kdotw * inv])


def leray_project(w: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence-free part of a vector field; the mean mode is kept."""
    grid.check(w)
    return ifft(_leray_hat(fft(w), grid), grid)


def poisson_solve(rhs: np.ndarray, grid: Grid) -> tuple[np.ndarray, float]:
    """Zero-mean solution of laplacian(phi) = rhs.

    Returns
    -------
    phi : ndarray
    removed_mean : float
        Mean of ``rhs`` that was subtracted to make the problem solvable.
    """
    grid.check(rhs)
    mean = float(np.mean(rhs))
    rh = fft(rhs - mean)
    k2 = grid.k2
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(k2 > 0, -1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    return ifft(rh * inv, grid), mean


# --------------------------------------------------------------------------
# vector fields
# --------------------------------------------------------------------------

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


def rotation_generator(i: int) -> np.ndarray:
    """Matrix V^(i) with entries eps[i, a, b]; V^(3) e1 = -e2.

    With Omega_i = (x ^ grad)_i this is the sign for which
    Omega_i + V^(i) generates rotations of vector fields.
    """
    return _EPS[i].copy()


def omega_scalar(f: np.ndarray, i: int, grid: Grid) -> np.ndarray:
    """Omega_i f = (x ^ grad f)_i applied to every component of f."""
    g = gradient(f, grid)
    x = grid.x
    a, b = (i + 1) % 3, (i + 2) % 3
    return x[a] * g[..., b, :, :, :] - x[b] * g[..., a, :, :, :]


def omega_tilde(U, i: int, grid: Grid):
    """Modified rotation acting on a pair (H, v); either part may be None.

    Omega~_i H = Omega_i H + [V, H] and Omega~_i v = Omega_i v + V v.
    """
    H, v = U
    V = rotation_generator(i)
    Ho = vo = None
    if H is not None:
        Ho = (omega_scalar(H, i, grid) + np.einsum("ab,bj...->aj...", V, H)
              - np.einsum("ib...,bj->ij...", H, V))
    if v is not None:
        vo = omega_scalar(v, i, grid) + np.einsum("ab,b...->a...", V, v)
    return Ho, vo


def radial_derivative(f: np.ndarray, grid: Grid) -> np.ndarray:
    """d_r f = omega . grad f (zero at the origin node)."""
    g = gradient(f, grid)
    return np.einsum("...kabc,kabc->...abc", g, grid.omega)


def euler_operator(f: np.ndarray, grid: Grid) -> np.ndarray:
    """S0 f = r d_r f = x . grad f."""
    g = gradient(f, grid)
    return np.einsum("...kabc,kabc->...abc", g, grid.x)


def s_tilde(U, t: float, dU_dt, grid: Grid):
    """S~U = t dU/dt + r d_r U - U for a pair (H, v)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = []
    for f, df in zip(U, dU_dt):
        if f is None:
            out.append(None)
            continue
        out.append(t * df + euler_operator(f, grid) - f)
    return tuple(out)


# --------------------------------------------------------------------------
# cutoffs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffParams:
    """Cutoff integer ``m`` and the smooth step profile (exp(-1/u) quotient)."""

    m: int = 5
    profile: str = "exp-quotient"

    def __post_init__(self):
        if int(self.m) != self.m or self.m <= 4:
            raise ValueError(f"m must be an integer > 4, got {self.m}")
        if self.profile != "exp-quotient":
            raise ValueError(f"unknown cutoff profile {self.profile!r}")


def _psi(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def zeta(s) -> np.ndarray:
    """Smooth step: 1 on [0, 1], 0 on [2, inf), monotone in between."""
    a = _psi(2.0 - np.asarray(s, dtype=float))
    b = _psi(np.asarray(s, dtype=float) - 1.0)
    return a / (a + b)


def japanese(t) -> np.ndarray:
    """<t> = (1 + t^2)^(1/2)."""
    return np.sqrt(1.0 + np.asarray(t, dtype=float) ** 2)


def cutoffs(t: float, params: CutoffParams, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Interior cutoff eta = zeta(m r / <t>) and its complement gamma = 1 - eta."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    eta = zeta(params.m * grid.r / japanese(t))
    return eta, 1.0 - eta


# --------------------------------------------------------------------------
# norms and constraints
# --------------------------------------------------------------------------

def l2_norm(f: np.ndarray, grid: Grid) -> float:
    """Discrete L2 norm summed over all components."""
    return float(np.sqrt(np.sum(f * f) * grid.dV))


def inner(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    return float(np.sum(f * g) * grid.dV)


def curl_residual(H: np.ndarray, grid: Grid) -> np.ndarray:
    """R[i, j, k] = d_j H^i_k - d_k H^i_j; zero for gradients."""
    g = gradient(H, grid)  # g[i, k, j] = d_j H^i_k
    return g - g.swapaxes(1, 2)


# --------------------------------------------------------------------------
# snapshots
# --------------------------------------------------------------------------

class SnapshotError(ValueError):
    pass


def write_snapshot(path, grid: Grid, fields: dict[str, np.ndarray]) -> Path:
    """Write named fields in the binary snapshot format.

    Layout (little endian): magic ``VELA``, u32 version, u32 n, f64 L,
    u32 field count, then per field u32 name length, utf-8 name,
    u32 component count and the float64 values in row-major order.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IId", SNAPSHOT_VERSION, grid.n, grid.L))
        fh.write(struct.pack("<I", len(fields)))
        for name, arr in fields.items():
            arr = np.asarray(arr, dtype="<f8")
            if arr.shape[-3:] != grid.shape:
                arr = np.broadcast_to(arr.reshape(arr.shape + (1, 1, 1)),
                                      arr.shape + grid.shape)
            ncomp = int(np.prod(arr.shape[:-3], dtype=int))
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", ncomp))
            fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def read_snapshot(path) -> tuple[Grid, dict[str, np.ndarray]]:
    """Read a snapshot; fields come back as ``(components, n, n, n)`` arrays.

    Callers reshape matrix fields to ``(3, 3, n, n, n)``.
    """
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    off = 4
    version, n, L = struct.unpack_from("<IId", data, off)
    off += struct.calcsize("<IId")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    grid = Grid(n, L)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    fields = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + ln].decode()
        off += ln
        (ncomp,) = struct.unpack_from("<I", data, off)
        off += 4
        size = ncomp * n**3
        if off + 8 * size > len(data):
            raise SnapshotError(f"truncated field {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off)
        off += 8 * size
        fields[name] = arr.reshape((ncomp,) + grid.shape).copy()
    return grid, fields
