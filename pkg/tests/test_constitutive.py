import numpy as np
import pytest

from vela import fields as fl
from vela.constitutive import (
    EvaluationError,
    MaterialModel,
    MaterialParams,
    StrainEnergy,
    ahat_identity,
    builtin_strain_energy,
    elasticity_tensor,
    inverse3,
    legendre_hadamard_check,
    make_model,
    null_lagrangian,
    oldroyd_b_ahat,
    piola_stress,
    positivity_margin,
    positivity_radius,
)
from vela.dynamics import ahat_contract

I3 = np.eye(3)


def unimodular(rng, n=None, spread=0.2):
    shape = (3, 3) if n is None else (n, 3, 3)
    F = I3 + spread * rng.standard_normal(shape)
    d = np.linalg.det(F)
    F = np.where((d > 0)[..., None, None], F, F[..., ::-1, :])
    return F / np.abs(np.linalg.det(F))[..., None, None] ** (1 / 3)


def iso_A(c1, c2=1.0):
    d = I3
    return ((c1**2 - 2 * c2**2) * np.einsum("ij,kn->ijnk", d, d)
            + c2**2 * (np.einsum("jk,in->ijnk", d, d) + np.einsum("jn,ki->ijnk", d, d)))


# params ----------------------------------------------------------------

def test_params_validation():
    MaterialParams(2.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        MaterialParams(0.5)
    with pytest.raises(ValueError):
        MaterialParams(2.0, 2.0)
    with pytest.raises(ValueError):
        MaterialParams(2.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        MaterialModel(kind="neo-hookean")


# piola_stress ---------------------------------------------------------------

def test_builtin_energy_stress_free_at_identity():
    S = piola_stress(builtin_strain_energy(2.0), I3)
    assert np.max(np.abs(S)) < 1e-9


def test_constant_energy_has_zero_stress():
    W = StrainEnergy(lambda F: np.full(F.shape[:-2], 3.7))
    assert np.array_equal(piola_stress(W, I3), np.zeros((3, 3)))


def test_piola_matches_fourth_order_stencil(rng):
    W = builtin_strain_energy(2.0)
    for _ in range(5):
        F = unimodular(rng)
        S2 = piola_stress(W, F)
        S4 = piola_stress(W, F, h=1e-3, order=4)
        assert np.max(np.abs(S2 - S4)) < 1e-8


def test_piola_rejects_bad_input():
    W = builtin_strain_energy(2.0)
    with pytest.raises(EvaluationError):
        piola_stress(W, -I3)
    bad = StrainEnergy(lambda F: np.full(F.shape[:-2], np.nan))
    with pytest.raises(EvaluationError):
        piola_stress(bad, I3)
    with pytest.raises(ValueError):
        piola_stress(W, I3, order=3)


def test_builtin_energy_is_objective_and_isotropic(rng):
    W = builtin_strain_energy(2.5)
    for _ in range(5):
        F = unimodular(rng)
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        Q *= np.sign(np.linalg.det(Q))
        assert W(Q @ F) == pytest.approx(W(F), abs=1e-12)
        assert W(F @ Q) == pytest.approx(W(F), abs=1e-12)


# elasticity_tensor -----------------------------------------------------------

def test_elasticity_major_symmetry(rng):
    W = builtin_strain_energy(2.0)
    A = elasticity_tensor(W, unimodular(rng))
    assert np.max(np.abs(A - A.transpose(2, 3, 0, 1))) < 1e-8


def test_quadratic_energy_has_constant_elasticity(rng):
    K = rng.standard_normal((3, 3, 3, 3))
    K = K + K.transpose(2, 3, 0, 1)

    def W(F):
        G = F - I3
        return 0.5 * np.einsum("...ip,ipnk,...nk->...", G, K, G) + np.sum(G, axis=(-2, -1))

    W = StrainEnergy(W)
    A0 = elasticity_tensor(W, I3)
    assert np.max(np.abs(A0 - K)) < 1e-6
    for _ in range(3):
        assert np.max(np.abs(elasticity_tensor(W, unimodular(rng)) - A0)) < 1e-6


def test_builtin_elasticity_at_identity():
    for c1 in (1.0, 2.0, 3.0):
        A = elasticity_tensor(builtin_strain_energy(c1), I3)
        assert np.max(np.abs(A - iso_A(c1))) < 1e-6
        # analytic path of the model
        assert np.max(np.abs(make_model("isotropic", c1).elasticity(I3) - iso_A(c1))) < 1e-12


def test_elasticity_step_underflow():
    with pytest.raises(EvaluationError):
        elasticity_tensor(builtin_strain_energy(2.0), I3, h=1e-12)


# ahat -------------------------------------------------------------------

def test_ahat_identity_closed_form():
    c1 = 2.0
    d = I3
    want = (c1**2 - 1) * np.einsum("pm,qr->pqmr", d, d) + np.einsum("pq,mr->pqmr", d, d)
    assert np.array_equal(make_model("isotropic", c1).ahat(I3), want)
    assert np.array_equal(ahat_identity(c1), want)


def test_ahat_from_strain_energy_fd_path_at_identity():
    model = MaterialModel(MaterialParams(2.0), kind="strain-energy",
                          energy=StrainEnergy(builtin_strain_energy(2.0).evaluator))
    assert np.max(np.abs(model.ahat(I3) - ahat_identity(2.0))) < 1e-6


@pytest.mark.parametrize("kind", ["isotropic", "oldroyd-b", "adversarial", "constant"])
def test_ahat_major_symmetry(kind, rng):
    model = make_model(kind, 2.0)
    H = unimodular(rng, 4)
    A = model.ahat(H)
    assert np.max(np.abs(A - A.transpose(0, 2, 1, 4, 3))) < 1e-12


def test_fd_path_agrees_with_analytic_path(rng):
    iso = make_model("isotropic", 2.0)
    fd = MaterialModel(MaterialParams(2.0), kind="strain-energy",
                       energy=StrainEnergy(builtin_strain_energy(2.0).evaluator))
    H = unimodular(rng, spread=0.05)
    assert np.max(np.abs(fd.ahat(H) - iso.ahat(H))) < 1e-5


@pytest.mark.parametrize("kind", ["isotropic", "oldroyd-b"])
def test_fast_contractions_match_dense_tensor(kind, rng):
    model = make_model(kind, 2.0)
    H = unimodular(rng, 6, spread=0.1)
    D = rng.standard_normal((6, 3, 3, 3))
    M, K = rng.standard_normal((2, 6, 3, 3))
    A = model.ahat(H)
    assert np.allclose(model.contract(H, D), np.einsum("slmpj,sjml->sp", A, D), atol=1e-12)
    assert np.allclose(model.bilinear(H, M, K), np.einsum("slmpj,spl,sjm->s", A, M, K),
                       atol=1e-12)
    # component-first field variants
    Hf = np.moveaxis(H, 0, -1)[..., None, None]
    Df = np.moveaxis(D, 0, -1)[..., None, None]
    Mf = np.moveaxis(M, 0, -1)[..., None, None]
    Kf = np.moveaxis(K, 0, -1)[..., None, None]
    assert np.allclose(model.contract_field(Hf, Df)[..., 0, 0].T, model.contract(H, D),
                       atol=1e-12)
    assert np.allclose(model.bilinear_field(Hf, Mf, Kf)[:, 0, 0], model.bilinear(H, M, K),
                       atol=1e-12)


def test_singular_h_raises():
    with pytest.raises(EvaluationError):
        make_model().ahat(np.zeros((3, 3)))
    with pytest.raises(EvaluationError):
        oldroyd_b_ahat(np.ones((3, 3)))
    with pytest.raises(EvaluationError):
        inverse3(np.diag([1.0, 1.0, 0.0]))


# positivity ---------------------------------------------------------------

def _samples(rng, n, size):
    Hd = rng.standard_normal((n, 3, 3))
    return Hd * size / np.linalg.norm(Hd, axis=(1, 2), keepdims=True)


def test_positivity_with_trace(rng):
    """Ahat(I + Hdot) Hdot.Hdot >= c2^2 |Hdot|^2 once tr Hdot is not small.

    The excess over |Hdot|^2 at the identity is (c1^2 - 1)(tr Hdot)^2, which
    dominates the O(|Hdot|^3) change of Ahat along Hdot.
    """
    model = make_model("isotropic", 2.0)
    Hd = _samples(rng, 4000, 0.01)
    tr = np.trace(Hd, axis1=1, axis2=2)
    Hd = Hd[np.abs(tr) >= 0.3 * 0.01]
    q = model.quadratic_form(I3 + Hd, Hd)
    assert np.all(q >= model.c2**2 * 0.01**2)


@pytest.mark.parametrize("kind", ["isotropic", "oldroyd-b"])
def test_positivity_up_to_linear_correction(kind, rng):
    """All directions: Ahat(I+Hdot)Hdot.Hdot >= c2^2 (1 - C|Hdot|) |Hdot|^2, C <= 10."""
    model = make_model(kind, 2.0)
    deficits = []
    for size in (0.01, 0.001):
        Hd = _samples(rng, 4000, size)
        q = model.quadratic_form(I3 + Hd, Hd) / size**2
        assert np.all(q >= model.c2**2 * (1 - 10 * size))
        deficits.append(max(0.0, -(q.min() - model.c2**2)))
    # the deficit is first order in |Hdot|
    assert deficits[1] < 0.2 * deficits[0]


@pytest.mark.parametrize("kind", ["isotropic", "oldroyd-b"])
def test_strict_shear_constant_fails_on_traceless_directions(kind, rng):
    """Ahat(I) is degenerate on traceless Hdot, so the strict bound c2^2|Hdot|^2
    fails for a positive fraction of small perturbations.  Recorded, not hidden."""
    model = make_model(kind, 2.0)
    Hd = _samples(rng, 2000, 0.01)
    Hd -= np.trace(Hd, axis1=1, axis2=2)[:, None, None] * I3 / 3
    Hd *= 0.01 / np.linalg.norm(Hd, axis=(1, 2), keepdims=True)
    q = model.quadratic_form(I3 + Hd, Hd) / 0.01**2
    frac = np.mean(q < model.c2**2)
    assert 0.2 < frac < 0.8
    assert positivity_margin(model, 0.01) < 0


def test_positivity_radius_reported():
    model = make_model("isotropic", 2.0)
    r = positivity_radius(model, n_samples=100)
    assert r >= 0
    if r > 0:
        assert positivity_margin(model, r, 100, np.random.default_rng(0)) >= 0


def test_oldroyd_b_identity_matches_unit_speed_closed_form():
    assert np.array_equal(oldroyd_b_ahat(I3), ahat_identity(1.0))


def test_oldroyd_b_positive_near_stretched_state():
    a = 1.1
    H0 = np.diag([a, 1 / a, 1.0])
    rng = np.random.default_rng(3)
    for _ in range(50):
        S = rng.standard_normal((3, 3))
        S = S + S.T
        S *= 0.05 * rng.random() / np.linalg.norm(S)
        A = oldroyd_b_ahat(H0 + S)
        # quadratic form q(M) = A[l,m,p,j] M[p,l] M[j,m] as a 9x9 matrix
        Q = np.einsum("lmpj->pljm", A).reshape(9, 9)
        Q = 0.5 * (Q + Q.T)
        # restricted to symmetric matrices
        basis = []
        for i in range(3):
            for j in range(i, 3):
                E = np.zeros((3, 3))
                E[i, j] = E[j, i] = 1.0
                basis.append(E.ravel())
        B = np.array(basis).T
        assert np.linalg.eigvalsh(B.T @ Q @ B).min() > 0


def test_oldroyd_b_force_is_divergence_of_ffT(grid32):
    """Ahat(H)[l,m,p,j] H^p_i d_l H^j_m = -d_j (F F^T)^{ij} for a gradient H with det 1."""
    g = grid32
    x = g.x
    k = g.k0
    a = 0.05
    # composition of three shears: volume preserving and periodic
    f1 = lambda y, z: a * np.sin(k * y) * np.cos(k * z)  # noqa: E731
    f2 = lambda x_, z: a * np.cos(k * x_ + 0.3) * np.sin(2 * k * z)  # noqa: E731
    f3 = lambda x_, y: a * np.sin(k * x_ - k * y)  # noqa: E731
    X1 = np.stack([x[0] + f1(x[1], x[2]), x[1], x[2]])
    X2 = np.stack([X1[0], X1[1] + f2(X1[0], X1[2]), X1[2]])
    X3 = np.stack([X2[0], X2[1], X2[2] + f3(X2[0], X2[1])])
    disp = X3 - x
    hdot = fl.gradient(disp, g)
    H = I3[:, :, None, None, None] + hdot
    det = np.linalg.det(np.moveaxis(H, (0, 1), (-2, -1)))
    assert np.max(np.abs(det - 1)) < 1e-10
    model = make_model("oldroyd-b")
    T = ahat_contract(model, H, fl.gradient(hdot, g))
    lhs = np.einsum("pi...,p...->i...", H, T)
    F = np.moveaxis(inverse3(np.moveaxis(H, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    FFt = np.einsum("ik...,jk...->ij...", F, F)
    rhs = -fl.divergence(FFt, g)
    assert fl.l2_norm(lhs - rhs, g) <= 1e-8


# Legendre-Hadamard -------------------------------------------------------

def test_legendre_hadamard_isotropic():
    m, ok = legendre_hadamard_check(iso_A(2.0), 10_000, np.random.default_rng(1))
    assert ok and m >= 1 - 1e-12 and m < 1.01


def test_legendre_hadamard_zero_tensor():
    m, ok = legendre_hadamard_check(np.zeros((3, 3, 3, 3)), 100)
    assert m == 0 and not ok


def test_legendre_hadamard_equal_speeds():
    m, ok = legendre_hadamard_check(iso_A(1.0), 1000)
    assert ok and m == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        legendre_hadamard_check(iso_A(1.0), 0)


def test_null_lagrangian_neutral_on_gradients(grid16):
    """L[p,q,m,r] H^m_i d_p Hdot^r_q vanishes when H is a gradient."""
    from conftest import smooth_field

    g = grid16
    disp = smooth_field(g, (3,), seed=4, amp=0.1)
    hdot = fl.gradient(disp, g)
    H = I3[:, :, None, None, None] + hdot
    gH = fl.gradient(hdot, g)  # gH[r, q, p] = d_p Hdot^r_q
    out = np.einsum("pqmr,mi...,rqp...->i...", null_lagrangian(1.0), H, gH)
    assert np.max(np.abs(out)) < 1e-12
