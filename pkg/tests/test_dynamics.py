import numpy as np
import pytest
from scipy.linalg import expm

from conftest import smooth_field
from vela import fields as fl
from vela.constitutive import make_model
from vela.dynamics import (
    BlowUpError,
    Integrator,
    SolverConfig,
    State,
    StateInvalidError,
    advective_transport_term,
    cone_cap,
    constraint_residuals,
    default_dt,
    generate_initial_data,
    nonlinear_rhs,
    pressure_gradient,
    pressure_gradient_poisson,
    step,
    time_derivative,
    trace_identity_scalar,
    transport_term,
)
from vela.fields import Grid

I3 = np.eye(3)


def small_state(grid, seed=0, amp=0.02, kmax=2):
    """Curl-free Hdot and divergence-free v, band limited."""
    disp = smooth_field(grid, (3,), seed=seed, kmax=kmax, amp=amp / 2)
    hdot = fl.gradient(disp, grid)
    v = fl.leray_project(smooth_field(grid, (3,), seed=seed + 100, kmax=kmax, amp=amp), grid)
    return State(hdot, v, 0.0, grid)


# solver config ---------------------------------------------------------------

def test_solver_defaults_and_validation(grid16):
    m = make_model("isotropic", 2.0)
    cfg = SolverConfig(grid16, m)
    assert cfg.dt == default_dt(grid16, 2.0) == 0.5 * grid16.spacing / 2.0
    assert cfg.T == cone_cap(grid16, 2.0)
    assert cfg.n_steps * cfg.step_dt == pytest.approx(cfg.T)
    assert cfg.step_dt <= cfg.dt
    with pytest.raises(ValueError, match="CFL"):
        SolverConfig(grid16, m, dt=2 * cfg.dt)
    with pytest.raises(ValueError, match="cone cap"):
        SolverConfig(grid16, m, T=1.01 * cfg.T)


# nonlinear terms --------------------------------------------------------------

def test_zero_state_has_zero_nonlinearity(grid16):
    NH, Nv = nonlinear_rhs(State.zeros(grid16), make_model())
    assert not np.any(NH) and not np.any(Nv)


def test_velocity_only_state(grid16):
    g = grid16
    st = small_state(g)
    st.hdot[...] = 0.0
    NH, Nv = nonlinear_rhs(st, make_model())
    assert np.max(np.abs(NH)) == 0.0
    adv = -np.einsum("p...,ip...->i...", st.vdot, fl.gradient(st.vdot, g))
    assert np.max(np.abs(Nv - fl.dealias(adv, g))) < 1e-15


def _loop_oracle(st, model):
    """Pointwise loops over the grid and all tensor indices."""
    g = st.grid
    n = g.n
    Hd, v = st.hdot, st.vdot
    gH = fl.gradient(Hd, g)  # gH[j, m, l] = d_l Hdot^j_m
    gv = fl.gradient(v, g)  # gv[i, p] = d_p v^i
    A0 = model.ahat_identity()
    w = np.zeros((3,) + g.shape)
    nv = np.zeros((3,) + g.shape)
    q = np.zeros(g.shape)
    for a in range(n):
        for b in range(n):
            for c in range(n):
                h = Hd[:, :, a, b, c]
                A = model.ahat(I3 + h)
                D = gH[:, :, :, a, b, c]
                for i in range(3):
                    w[i, a, b, c] = sum(h[i, p] * v[p, a, b, c] for p in range(3))
                    adv = -sum(v[p, a, b, c] * gv[i, p, a, b, c] for p in range(3))
                    el = 0.0
                    for l in range(3):
                        for m in range(3):
                            for j in range(3):
                                el += (A[l, m, i, j] - A0[l, m, i, j]) * D[j, m, l]
                                for p in range(3):
                                    el += A[l, m, p, j] * h[p, i] * D[j, m, l]
                    nv[i, a, b, c] = adv - el
                q[a, b, c] = np.linalg.det(I3 + h) - 1.0 - np.trace(h)
    NH = -fl.gradient(fl.dealias(w, g), g)
    MH = -fl.gradient(fl.dealias(q, g), g)
    return NH, fl.dealias(nv, g) - (model.c1**2 - 1) * MH


def test_nonlinear_rhs_matches_loop_oracle(grid16):
    st = small_state(grid16, seed=3, amp=0.05)
    model = make_model("isotropic", 2.0)
    NH, Nv = nonlinear_rhs(st, model)
    oNH, oNv = _loop_oracle(st, model)
    assert np.max(np.abs(NH - oNH)) < 1e-10
    assert np.max(np.abs(Nv - oNv)) < 1e-10


def test_transport_forms_agree_on_gradients(grid16):
    st = small_state(grid16, seed=4, kmax=2)
    a = transport_term(st.hdot, st.vdot, grid16, dealias=False)
    b = advective_transport_term(st.hdot, st.vdot, grid16, dealias=False)
    assert np.max(np.abs(a - b)) < 1e-12


def test_trace_identity_is_det_minus_one(rng):
    Hd = 0.2 * rng.standard_normal((3, 3, 4, 4, 4))
    det = np.linalg.det(np.moveaxis(I3[:, :, None, None, None] + Hd, (0, 1), (-2, -1)))
    lhs = np.trace(Hd) + trace_identity_scalar(Hd)
    assert np.max(np.abs(lhs - (det - 1))) < 1e-14


def test_singular_state_is_invalid(grid16):
    st = State.zeros(grid16)
    st.hdot[0, 0, 0, 0, 0] = -1.0
    with pytest.raises(StateInvalidError):
        nonlinear_rhs(st, make_model())


# pressure ---------------------------------------------------------------------

def test_pressure_zero_state(grid16):
    st = State.zeros(grid16)
    assert not np.any(pressure_gradient(st, np.zeros((3,) + grid16.shape)))


def test_pressure_of_pure_gradient(grid16):
    g = grid16
    st = State.zeros(g)
    rhs = fl.gradient(smooth_field(g, seed=5), g)
    assert np.max(np.abs(pressure_gradient(st, rhs) - rhs)) < 1e-12


def test_pressure_paths_differ_by_gradient_of_det_residual(grid16):
    """Projection minus Poisson path equals -grad(tr Hdot + q) for curl-free Hdot."""
    g = grid16
    st = small_state(g, seed=6, amp=0.05)
    model = make_model("isotropic", 2.0)
    _, Nv = nonlinear_rhs(st, model)
    rhs = Nv - fl.divergence(st.hdot, g)
    gp = pressure_gradient(st, rhs)
    gp2 = pressure_gradient_poisson(st, model)
    resid = np.trace(st.hdot) + fl.dealias(trace_identity_scalar(st.hdot), g)
    assert np.max(np.abs(gp - gp2 + fl.gradient(resid, g))) < 1e-12
    # and the difference is as large as the det residual makes it
    assert fl.l2_norm(gp - gp2, g) > 1e-6


def test_time_derivative_is_projected(grid16):
    st = small_state(grid16, seed=7)
    dH, dv = time_derivative(st, make_model("isotropic", 2.0, nu=0.1))
    assert np.max(np.abs(fl.divergence(dv, grid16))) < 1e-12
    assert np.max(np.abs(fl.curl_residual(dH, grid16))) < 1e-12


# stepping --------------------------------------------------------------------

def test_zero_state_stays_zero(grid16):
    cfg = SolverConfig(grid16, make_model(nu=0.1))
    out = step(State.zeros(grid16), cfg)
    assert not np.any(out.hdot) and not np.any(out.vdot)
    assert out.t == pytest.approx(cfg.step_dt)


def _plane_wave(g, kv, a, t):
    kv = np.asarray(kv, float)
    k = np.linalg.norm(kv)
    ph = np.cos(np.einsum("k,k...->...", kv, g.x) - k * t)
    v = a[:, None, None, None] * ph
    H = np.einsum("i,j->ij", a, kv / k)[:, :, None, None, None] * ph
    return H, v


def phase_error(v, kv, a, t, g):
    """Phase of the e^{ik.x} coefficient of a.v relative to the exact wave."""
    e = np.exp(-1j * np.einsum("k,k...->...", kv, g.x))
    _, ve = _plane_wave(g, kv, a, t)
    c = np.sum(np.einsum("i,i...->...", a, v) * e)
    ce = np.sum(np.einsum("i,i...->...", a, ve) * e)
    return abs(np.angle(c / ce))


def test_shear_wave_phase_speed(grid32):
    g = grid32
    kv = g.k0 * np.array([2.0, 1.0, 0.0])
    a = np.cross(kv, [0.0, 0.0, 1.0])
    a *= 1e-3 / np.linalg.norm(a)
    H, v = _plane_wave(g, kv, a, 0.0)
    T = cone_cap(g, 2.0)
    cfg = SolverConfig(g, make_model("isotropic", 2.0), dt=T / 100, T=T, nonlinear=False)
    integ = Integrator(cfg)
    st = State(H, v, 0.0, g)
    for _ in range(cfg.n_steps):
        st = integ.step(st)
    assert cfg.n_steps == 100
    assert phase_error(st.vdot, kv, a, st.t, g) <= 1e-6
    # the wave stays transverse and keeps its amplitude
    He, ve = _plane_wave(g, kv, a, st.t)
    assert np.max(np.abs(st.vdot - ve)) < 1e-6 * 1e-3


def test_viscous_mode_matches_two_by_two_oracle(grid32):
    g = grid32
    nu = 0.05
    kv = g.k0 * np.array([1.0, 2.0, 2.0])
    k = np.linalg.norm(kv)
    a = np.cross(kv, [1.0, 0.0, 0.0])
    a /= np.linalg.norm(a)
    ph = np.einsum("k,k...->...", kv, g.x)
    # complex amplitudes: H = Re(h a (x) khat e^{ik.x}), v = Re(u a e^{ik.x})
    M = np.array([[0.0, -1j * k], [-1j * k, -nu * k**2]])
    z0 = np.array([1.0, 0.0], dtype=complex)
    T = cone_cap(g, 2.0)
    cfg = SolverConfig(g, make_model("isotropic", 2.0, nu=nu), dt=T / 100, T=T,
                       nonlinear=False)
    integ = Integrator(cfg)
    st = State(np.einsum("i,j->ij", a, kv / k)[:, :, None, None, None] * np.cos(ph),
               np.zeros((3,) + g.shape), 0.0, g)
    for _ in range(cfg.n_steps):
        st = integ.step(st)
    h, u = expm(M * st.t) @ z0
    e = np.exp(1j * ph)
    He = np.einsum("i,j->ij", a, kv / k)[:, :, None, None, None] * np.real(h * e)
    ve = a[:, None, None, None] * np.real(u * e)
    assert np.max(np.abs(st.hdot - He)) < 1e-8
    assert np.max(np.abs(st.vdot - ve)) < 1e-8


def _run(g, model, st, T, n):
    cfg = SolverConfig(g, model, dt=T / n, T=T)
    integ = Integrator(cfg)
    for _ in range(cfg.n_steps):
        st = integ.step(st)
    return st


def test_fourth_order_convergence(grid16):
    g = grid16
    model = make_model("isotropic", 2.0, nu=0.01)
    st0 = small_state(g, seed=8, amp=0.2)
    T = cone_cap(g, 2.0)
    ref = _run(g, model, st0, T, 160)
    err = []
    for n in (20, 40):
        st = _run(g, model, st0, T, n)
        err.append(np.hypot(fl.l2_norm(st.hdot - ref.hdot, g), fl.l2_norm(st.vdot - ref.vdot, g)))
    assert 12 < err[0] / err[1] < 20


def test_blow_up_is_reported(grid16):
    st = small_state(grid16)
    st.vdot[0, 0, 0, 0] = np.nan
    cfg = SolverConfig(grid16, make_model(), nonlinear=False)
    with pytest.raises(BlowUpError) as info:
        Integrator(cfg).step(st)
    assert info.value.state is st


def test_linear_inviscid_energy_is_conserved(grid16):
    """The energy drift is RK4 amplitude error, of order dt^4 over a fixed horizon."""
    g = grid16
    model = make_model("isotropic", 2.0)
    A0 = model.ahat_identity()
    st0 = small_state(g, seed=9)

    def E(s):
        q = np.einsum("lmpj,pl...,jm...->...", A0, s.hdot, s.hdot)
        return 0.5 * (np.sum(q) + np.sum(s.vdot**2)) * g.dV

    e0 = E(st0)
    T = cone_cap(g, 2.0)
    drift = []
    for n in (10, 20):
        cfg = SolverConfig(g, model, dt=T / n, T=T, nonlinear=False)
        integ = Integrator(cfg)
        st = st0
        for _ in range(cfg.n_steps):
            st = integ.step(st)
        drift.append(abs(E(st) - e0) / e0)
    assert drift[0] < 1e-4
    assert drift[0] / drift[1] > 16


# initial data -----------------------------------------------------------------

def test_zero_amplitude_gives_identity_state(grid16):
    st = generate_initial_data(1, 0.0, grid16)
    assert not np.any(st.hdot) and not np.any(st.vdot) and st.t == 0.0


@pytest.fixture(scope="module")
def data64():
    return generate_initial_data(1, 0.01, Grid(64, 2 * np.pi))


def test_initial_data_constraints(data64):
    res = constraint_residuals(data64)
    assert res["div_v_max"] <= 1e-12
    assert res["det_res_max"] <= 1e-8
    assert res["curl_res_max"] <= 1e-10


def test_initial_data_energy_and_determinism(data64):
    g = data64.grid
    e = 0.5 * (fl.l2_norm(data64.hdot, g) ** 2 + fl.l2_norm(data64.vdot, g) ** 2)
    assert e == pytest.approx(0.01**2, rel=1e-10)
    again = generate_initial_data(1, 0.01, g)
    assert np.array_equal(again.hdot, data64.hdot) and np.array_equal(again.vdot, data64.vdot)


def test_other_seeds_are_divergence_free(grid32):
    for seed in (2, 3):
        st = generate_initial_data(seed, 0.01, grid32, det_tol=1e-5)
        assert constraint_residuals(st)["div_v_max"] <= 1e-12
    with pytest.raises(ValueError):
        generate_initial_data(1, -0.1, grid32)


def test_unresolvable_det_tolerance_is_reported(grid32):
    with pytest.raises(ValueError, match="resolution"):
        generate_initial_data(1, 0.01, grid32, det_tol=1e-12)
