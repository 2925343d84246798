"""Shared fixtures: small grids and seeded band-limited fields."""
import numpy as np
import pytest

from vela import fields as fl
from vela.fields import Grid


def smooth_field(grid, lead=(), seed=0, kmax=3, amp=1.0):
    """Real random trigonometric polynomial with |k| <= kmax fundamental modes."""
    rng = np.random.Generator(np.random.Philox(seed))
    n = grid.n
    fh = np.zeros(tuple(lead) + (n, n, n // 2 + 1), dtype=complex)
    m = np.fft.fftfreq(n, 1.0 / n)
    keep = ((np.abs(m)[:, None, None] <= kmax) & (np.abs(m)[None, :, None] <= kmax)
            & (np.arange(n // 2 + 1)[None, None, :] <= kmax))
    shape = fh.shape
    fh[...] = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * keep
    f = fl.ifft(fh, grid)
    return amp * f / np.max(np.abs(f))


def gaussian(grid, width=None, center=(0.0, 0.0, 0.0)):
    width = grid.L / 8 if width is None else width
    d = grid.x - np.asarray(center).reshape(3, 1, 1, 1)
    return np.exp(-np.sum(d * d, axis=0) / (2 * width**2))


@pytest.fixture(scope="session")
def grid8():
    return Grid(8, np.pi)


@pytest.fixture(scope="session")
def grid16():
    return Grid(16, 2 * np.pi)


@pytest.fixture(scope="session")
def grid32():
    return Grid(32, 2 * np.pi)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
