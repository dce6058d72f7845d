import cvxpy as cp
import numpy as np
import pytest
import scipy.linalg as sla

from conftest import random_hermitian, random_model
from freespec.ensembles import band_model, goe_model, gue_model, spike
from freespec.errors import ValidationError
from freespec.free import (
    free_density,
    free_moment,
    free_moment_exact,
    free_support,
    lehner_max,
    lehner_min,
    lehner_objective,
    mde_resolvent,
)
from freespec.iso import bbp_window
from freespec.model import GaussianSeriesModel, compute_parameters, eigen_spectrum, hausdorff_distance, sample


def scalar(a0=0.0, c=1.0):
    return GaussianSeriesModel(np.array([[a0]]), [np.array([[c]])])


def sdp_lehner(model):
    """``inf_M lambda_max(A0 + M^-1 + S(M))`` as a semidefinite program.

    ``t >= lambda_max(A0 + M^-1 + S(M))`` iff ``[[t - A0 - S(M), I], [I, M]]``
    is positive semidefinite, by a Schur complement.
    """
    d = model.d
    a0 = model.a0.real
    coeffs = model.coeffs.real
    m = cp.Variable((d, d), symmetric=True)
    t = cp.Variable()
    s = sum(a @ m @ a for a in coeffs)
    block = cp.bmat([[t * np.eye(d) - a0 - s, np.eye(d)], [np.eye(d), m]])
    prob = cp.Problem(cp.Minimize(t), [(block + block.T) / 2 >> 0])
    prob.solve(solver=cp.CLARABEL)
    return t.value


# --- Lehner variational edge ---------------------------------------------


def test_semicircle_edge_is_two():
    assert lehner_max(scalar()).value == pytest.approx(2.0, abs=1e-8)


def test_shifted_semicircle_edge():
    assert lehner_max(scalar(3.0)).value == pytest.approx(5.0, abs=1e-8)


def test_semicircle_lower_edge():
    assert lehner_min(scalar()).value == pytest.approx(-2.0, abs=1e-8)


def test_lower_edge_is_negated_upper_edge(rng):
    model = random_model(rng, 3, 2)
    assert lehner_min(model).value == -lehner_max(model.negated()).value


def test_lower_edge_respects_support_inclusion(rng):
    base = random_model(rng, 3, 3)
    model = base.with_mean(5 * np.eye(3))
    sigma = compute_parameters(model, restarts=3).sigma
    assert lehner_min(model).value >= 5 - 2 * sigma - 1e-8


@pytest.mark.parametrize("seed", range(6))
def test_lehner_matches_semidefinite_program(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 2, real=True, coeff_scale=0.6)
    assert lehner_max(model).value == pytest.approx(sdp_lehner(model), abs=2e-6)


def test_spiked_isotropic_edge_within_bbp_window():
    d = 8
    v = np.ones(d) / np.sqrt(d)
    model = gue_model(d, spike(2.0, v))
    window = bbp_window(model, restarts=10)
    assert window.value == pytest.approx(2.5)
    assert abs(lehner_max(model).value - window.value) <= window.error_radius


def test_minimizer_certifies_value(rng):
    model = random_model(rng, 4, 3)
    sol = lehner_max(model)
    m = sol.minimizer
    assert sla.eigvalsh(m)[0] > 0
    assert lehner_objective(model, m) == pytest.approx(sol.value, abs=1e-6)
    assert sol.value >= sla.eigvalsh(model.a0)[-1] - 1e-8
    for _ in range(10):
        eps = 0.05 * rng.standard_normal()
        pert = m * (1 + eps)
        assert lehner_objective(model, pert) >= sol.value - 1e-8
        e = random_hermitian(rng, 4, scale=0.01)
        pert = m + e @ e.conj().T
        assert lehner_objective(model, pert) >= sol.value - 1e-8


# --- matrix Dyson equation -----------------------------------------------


def test_deterministic_resolvent_is_exact(rng):
    a0 = random_hermitian(rng, 3)
    model = GaussianSeriesModel(a0, np.zeros((0, 3, 3)))
    z = 0.3 + 0.7j
    assert np.allclose(mde_resolvent(model, z), np.linalg.inv(z * np.eye(3) - a0))


def test_semicircle_stieltjes_transform():
    z = 2j
    g = mde_resolvent(scalar(), z)[0, 0]
    assert abs(g - (z - np.sqrt(z * z - 4)) / 2) <= 1e-9


def test_resolvent_solves_equation_with_negative_imaginary_part(rng):
    model = random_model(rng, 4, 3)
    z = 0.2 + 0.05j
    g = mde_resolvent(model, z)
    residual = g - np.linalg.inv(z * np.eye(4) - model.a0 - model.covariance(g))
    assert np.linalg.norm(residual) <= 1e-10
    assert sla.eigvalsh((g - g.conj().T) / 2j)[-1] <= 1e-12


def test_centered_resolvent_reflection_symmetry(rng):
    model = random_model(rng, 4, 3).with_mean(np.zeros((4, 4)))
    z = 0.4 + 0.1j
    # For Hermitian models the reflection involves the adjoint.
    assert np.allclose(mde_resolvent(model, -np.conj(z)), -mde_resolvent(model, z).conj().T, atol=1e-10)
    real = random_model(rng, 4, 3, real=True).with_mean(np.zeros((4, 4)))
    assert np.allclose(mde_resolvent(real, -np.conj(z)), -np.conj(mde_resolvent(real, z)), atol=1e-10)


def test_resolvent_rejects_real_argument():
    with pytest.raises(ValidationError):
        mde_resolvent(scalar(), 1.0)


def test_semicircle_density():
    sol = free_density(scalar(), -3, 3, steps=2000, eta=1e-4)
    assert np.all(sol.density >= 0)
    assert 0.99 <= sol.integral() <= 1.01
    mid = free_density(scalar(), -1e-3, 1e-3, steps=3, eta=1e-4).density[1]
    assert abs(mid - 1 / np.pi) <= 1e-3
    assert sol.to_csv().splitlines()[0] == "x,density,residual"


def test_density_of_structured_model_is_normalized():
    sol = free_density(band_model(12, 5), -3, 3, steps=1500, eta=1e-3)
    assert np.all(sol.density >= 0)
    assert sol.integral() == pytest.approx(1, abs=1e-2)


# --- support ---------------------------------------------------------------


def test_semicircle_support():
    (a, b), = free_support(scalar())
    assert a == pytest.approx(-2, abs=1e-3) and b == pytest.approx(2, abs=1e-3)


def test_spiked_model_support_has_outlier_component():
    d = 8
    model = gue_model(d, spike(2.0, np.ones(d) / np.sqrt(d)))
    support = free_support(model)
    assert len(support) == 2
    window = bbp_window(model, restarts=10)
    assert abs(support.upper - window.value) <= window.error_radius
    assert support.upper == pytest.approx(lehner_max(model).value, abs=1e-9)


def test_deterministic_support_is_fattened_spectrum():
    model = GaussianSeriesModel(np.diag([1.0, -1.0]), np.zeros((0, 2, 2)))
    support = free_support(model)
    assert len(support) == 2
    eta = 1e-4
    for (a, b), e in zip(support, (-1.0, 1.0)):
        assert a <= e <= b and b - a <= 10 * eta


@pytest.mark.parametrize("seed", range(8))
def test_support_inclusion(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 2, real=True, coeff_scale=0.4)
    support = free_support(model)
    sigma = compute_parameters(model, restarts=2).sigma
    eta = 1e-4 * sigma
    ev = sla.eigvalsh(model.a0)
    for a, b in support:
        xs = np.linspace(a, b, 2001)
        assert np.max(np.min(np.abs(xs[:, None] - ev[None, :]), axis=1)) <= 2 * sigma + 10 * eta


def test_band_sample_is_close_to_free_support():
    d, width = 256, 32
    model = band_model(d, width)
    support = free_support(model)
    p = compute_parameters(model, restarts=2)
    bound = 10 * p.v_tilde * np.log(d) ** 0.75
    dists = [hausdorff_distance(eigen_spectrum(sample(model, s)), support) for s in range(20)]
    assert max(dists) <= bound


# --- moments ----------------------------------------------------------------


def test_semicircle_moments_are_catalan():
    assert free_moment(scalar(), 2) == pytest.approx(1.0, abs=1e-3)
    assert free_moment(scalar(), 4) == pytest.approx(2.0, abs=1e-2)
    assert [free_moment_exact(scalar(), k) for k in (2, 4, 6)] == pytest.approx([1, 2, 5])


def test_deterministic_moment():
    model = GaussianSeriesModel(np.diag([1.0, -1.0]), np.zeros((0, 2, 2)))
    assert free_moment(model, 2) == pytest.approx(1.0)


def test_quadrature_moment_matches_recursion(rng):
    model = random_model(rng, 3, 2, real=True, coeff_scale=0.5)
    for k in (2, 4):
        assert free_moment(model, k) == pytest.approx(free_moment_exact(model, k), rel=1e-4, abs=1e-6)


def test_odd_moment_rejected():
    with pytest.raises(ValidationError):
        free_moment(scalar(), 3)


def _trace_moments(model, p, samples=2000):
    vals = []
    for s in range(samples):
        x = sample(model, s)
        vals.append(np.trace(np.linalg.matrix_power(x, 2 * p)).real / model.d)
    vals = np.array(vals)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(samples)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_noncommutative_khintchine_moment_window(p):
    model = band_model(16, 5)
    mean, se = _trace_moments(model, p)
    second = model.covariance(np.eye(16, dtype=complex))
    low = (np.trace(np.linalg.matrix_power(second, p)).real / 16) ** (1 / (2 * p))
    # Delta method: standard error of mean^(1/2p).
    se_root = se * mean ** (1 / (2 * p) - 1) / (2 * p)
    value = mean ** (1 / (2 * p))
    assert low - 3 * se_root <= value <= np.sqrt(2 * p) * low + 3 * se_root


@pytest.mark.parametrize("p", [1, 2, 3])
def test_free_moment_tracks_sample_moment(p):
    model = band_model(16, 5)
    mean, se = _trace_moments(model, p)
    free = free_moment(model, 2 * p)
    v_tilde = compute_parameters(model, restarts=3).v_tilde
    se_root = se * mean ** (1 / (2 * p) - 1) / (2 * p)
    assert abs(mean ** (1 / (2 * p)) - free ** (1 / (2 * p))) <= 2 * p**0.75 * v_tilde + 3 * se_root


def test_goe_free_moment_recursion_matches_quadrature():
    model = goe_model(6)
    assert free_moment(model, 4) == pytest.approx(free_moment_exact(model, 4), rel=1e-5)
