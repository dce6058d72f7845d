import itertools
from math import comb

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from freespec.applications import (
    CsbmInstance,
    GraphDecodingInstance,
    ScovParams,
    TensorPcaInstance,
    all_subsets,
    binomial_table,
    circulant_graph,
    colex_rank,
    colex_unrank,
    csbm_build,
    csbm_estimate,
    csbm_overlap,
    csbm_snr,
    decode_build,
    decode_round,
    export_coordinates,
    flip_probability_for,
    kikuchi_matrix,
    kikuchi_params,
    kikuchi_test,
    random_regular_graph,
    read_coordinates,
    scov_closed_forms,
    scov_pi_forms,
    scov_sample,
    scov_variational,
    spiked_block_build,
    theta_prime,
)
from freespec.block import BlockModelSpec, build_block_model
from freespec.errors import ValidationError
from freespec.free import lehner_max
from freespec.model import RectangularModel, dilate

# --- subset ranking -------------------------------------------------------------


@given(n=st.integers(1, 12), data=st.data())
def test_colex_rank_is_a_bijection(n, data):
    k = data.draw(st.integers(1, n))
    subsets = all_subsets(n, k)
    table = binomial_table(n, k)
    assert np.array_equal(colex_rank(subsets, table), np.arange(comb(n, k)))
    r = data.draw(st.integers(0, comb(n, k) - 1))
    assert tuple(colex_unrank(r, k, n)) == tuple(subsets[r])


# --- Kikuchi ----------------------------------------------------------------------


def test_kikuchi_params_examples():
    a = kikuchi_params(10, 4, 2)
    assert (a.k_star, a.sigma_sq, a.v_sq, a.s1_factor, a.r) == (28, 28, 6, 28, 1)
    assert kikuchi_params(12, 4, 2).k_star == 45


@pytest.mark.parametrize("n,p,ell", [(10, 4, 3), (10, 8, 6), (10, 5, 3), (10, 2, 1), (4, 4, 3), (3, 4, 2)])
def test_kikuchi_params_range(n, p, ell):
    with pytest.raises(ValidationError):
        kikuchi_params(n, p, ell)


def _basis_matrices(n, p, ell):
    """``E_U`` with ``M - EM = sum_U Z_U E_U``."""
    count = comb(n, p)
    x = np.ones(n)
    out = []
    for u in range(count):
        z = np.zeros(count)
        z[u] = 1.0
        out.append(kikuchi_matrix(TensorPcaInstance(n, p, ell, 0.0, x, z)).toarray())
    return out


@pytest.mark.parametrize("n,p,ell", [(6, 4, 2), (7, 4, 2), (8, 4, 2), (8, 6, 4)])
def test_kikuchi_noise_is_isotropic(n, p, ell):
    basis = _basis_matrices(n, p, ell)
    second = sum(e @ e for e in basis)
    sigma_sq = kikuchi_params(n, p, ell).sigma_sq
    assert np.array_equal(second, sigma_sq * np.eye(second.shape[0]))


@pytest.mark.parametrize("n,p,ell", [(6, 4, 2), (8, 4, 2), (8, 6, 4)])
def test_kikuchi_weak_variance(n, p, ell):
    basis = _basis_matrices(n, p, ell)
    # Cov(M) = sum_U vec(E_U) vec(E_U)^T; the E_U have disjoint supports.
    vecs = np.array([e.ravel() for e in basis])
    cov_norm = sla.eigvalsh(vecs @ vecs.T)[-1]
    assert cov_norm == pytest.approx(kikuchi_params(n, p, ell).v_sq)


def test_kikuchi_matrix_structure():
    inst = TensorPcaInstance.random(9, 4, 2, 0.7, seed=3)
    m = kikuchi_matrix(inst)
    assert m.shape == (comb(9, 2),) * 2
    assert np.all(m.diagonal() == 0)
    assert abs(m - m.T).max() == 0
    assert np.all(np.diff(m.indptr) == inst.params.k_star)


def test_kikuchi_entries_follow_symmetric_difference():
    n, p, ell = 8, 6, 4
    inst = TensorPcaInstance.random(n, p, ell, 0.3, seed=1)
    dense = kikuchi_matrix(inst).toarray()
    rows = [frozenset(s) for s in all_subsets(n, ell)]
    cols = {frozenset(u): i for i, u in enumerate(all_subsets(n, p))}
    for i, s in enumerate(rows):
        for j, t in enumerate(rows):
            u = s ^ t
            if len(u) == p:
                expected = inst.lam * np.prod(inst.x[list(u)]) + inst.noise[cols[u]]
                assert dense[i, j] == expected
            else:
                assert dense[i, j] == 0


@pytest.mark.parametrize("n,p,ell", [(10, 4, 2), (12, 4, 2), (12, 6, 4)])
def test_kikuchi_signal_is_low_rank(n, p, ell):
    inst = TensorPcaInstance.random(n, p, ell, 1.0, seed=0, noise=False)
    s = sla.svdvals(kikuchi_matrix(inst).toarray())
    params = kikuchi_params(n, p, ell)
    assert s[0] == pytest.approx(params.s1_factor)
    assert s[params.r] <= p / n * s[0] + 1e-9


def test_pure_signal_top_eigenvalue():
    inst = TensorPcaInstance.random(9, 4, 2, 1.0, seed=5, noise=False)
    top = sla.eigvalsh(kikuchi_matrix(inst).toarray())[-1]
    assert top == pytest.approx(inst.params.k_star)


def test_kikuchi_test_on_zero_matrix():
    dim = comb(8, 2)
    res = kikuchi_test(sp.csr_matrix((dim, dim)), 8, 4, 2)
    assert res.statistic == 0 and not res.decision


def test_kikuchi_test_on_strong_pure_signal():
    n, p, ell = 10, 4, 2
    k_star = kikuchi_params(n, p, ell).k_star
    inst = TensorPcaInstance.random(n, p, ell, 3 / np.sqrt(k_star), seed=2, noise=False)
    res = kikuchi_test(kikuchi_matrix(inst), n, p, ell)
    assert res.statistic == pytest.approx(3, abs=1e-6)
    assert res.decision and res.threshold == pytest.approx(2 + n**-0.2)


def test_kikuchi_test_rejects_at_weak_signal():
    n, p, ell = 14, 4, 2
    k_star = kikuchi_params(n, p, ell).k_star
    decisions = [
        kikuchi_test(kikuchi_matrix(TensorPcaInstance.random(n, p, ell, 0.5 / np.sqrt(k_star), seed=s)), n, p, ell).decision
        for s in range(10)
    ]
    assert sum(decisions) <= 2


def test_kikuchi_dimension_cap():
    inst = TensorPcaInstance.random(12, 4, 2, 1.0, seed=0)
    with pytest.raises(ValidationError):
        kikuchi_matrix(inst, cap=10)


def test_coordinate_export_round_trip(tmp_path):
    inst = TensorPcaInstance.random(8, 4, 2, 0.5, seed=11)
    m = kikuchi_matrix(inst)
    path = tmp_path / "m.txt"
    export_coordinates(m, inst, path)
    header, back = read_coordinates(path)
    assert header == {"n": "8", "p": "4", "ell": "2", "seed": "11"}
    assert (back != m).nnz == 0


def test_instance_json_round_trip():
    inst = TensorPcaInstance.random(8, 4, 2, 0.5, seed=4)
    back = TensorPcaInstance.from_dict(inst.to_dict())
    assert np.array_equal(back.noise, inst.noise) and np.array_equal(back.x, inst.x)


def test_instance_validation():
    with pytest.raises(ValidationError):
        TensorPcaInstance(8, 4, 2, -1.0, np.ones(8), np.zeros(comb(8, 4)))
    with pytest.raises(ValidationError):
        TensorPcaInstance(8, 4, 2, 1.0, np.zeros(8), np.zeros(comb(8, 4)))
    with pytest.raises(ValidationError):
        TensorPcaInstance(8, 4, 2, 1.0, np.ones(8), np.zeros(3))


# --- graph decoding -------------------------------------------------------------


def test_theta_prime_examples():
    assert theta_prime(0.5, 10) == 0
    assert theta_prime(0.25, 100) == pytest.approx(10 * 0.5 / np.sqrt(0.75))
    assert theta_prime(0.0, 10) == float("inf")
    with pytest.raises(ValidationError):
        theta_prime(0.6, 10)


@given(theta=st.floats(0, 50), k=st.integers(1, 200))
def test_flip_probability_inverts_theta_prime(theta, k):
    p = flip_probability_for(theta, k)
    assert 0 <= p <= 0.5
    if p > 0:
        assert theta_prime(p, k) == pytest.approx(theta, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("d,k", [(10, 2), (11, 4), (12, 3)])
def test_graphs_are_regular(d, k):
    for a in (circulant_graph(d, k), random_regular_graph(d, k, seed=1)):
        assert np.all(np.asarray(a.sum(axis=1)).ravel() == k)
        assert (a - a.T).nnz == 0 and not a.diagonal().any()


def test_instance_rejects_irregular_graph():
    a = sp.csr_matrix(np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float))
    with pytest.raises(ValidationError):
        GraphDecodingInstance(a, 0.1, np.ones(3), 0)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_rescaled_noise_is_isotropic_exactly(p):
    inst = GraphDecodingInstance.random(6, 2, p, seed=4, graph="circulant")
    mats = decode_build(inst)
    edges = list(zip(*sp.triu(inst.adjacency, 1).nonzero()))
    scale = mats.y_prime.max() if mats.y_prime.max() > 0 else -mats.y_prime.min()
    second = np.zeros((inst.d, inst.d))
    for flips in itertools.product((1, -1), repeat=len(edges)):
        weight = np.prod([p if f < 0 else 1 - p for f in flips])
        y = np.zeros((inst.d, inst.d))
        for (i, j), f in zip(edges, flips):
            y[i, j] = y[j, i] = inst.x[i] * inst.x[j] * f * scale
        c = y - mats.mean_prime
        second += weight * c @ c
    assert np.allclose(second, np.eye(inst.d), atol=1e-12)


def test_decode_build_noiseless_limit():
    inst = GraphDecodingInstance.random(8, 3, 0.0, seed=0, graph="random-regular")
    mats = decode_build(inst)
    assert mats.infinite and mats.y_prime is None
    assert np.array_equal(mats.y, inst.x[:, None] * inst.adjacency.toarray() * inst.x[None, :])


def test_rounding_expectation():
    d = 1000
    x = np.where(np.arange(d) % 3 == 0, -1.0, 1.0)
    overlaps = [x @ decode_round(x / np.sqrt(d), 1.0, seed=s) / d for s in range(50)]
    assert np.mean(overlaps) == pytest.approx(0.5, abs=0.02)


def test_rounding_orthogonal_vector():
    d = 1000
    rng = np.random.default_rng(0)
    x = rng.choice([-1.0, 1.0], size=d)
    v = rng.standard_normal(d)
    v -= (v @ x) / d * x
    v /= np.linalg.norm(v)
    overlaps = [x @ decode_round(v, 1.0, seed=s) / d for s in range(50)]
    assert abs(np.mean(overlaps)) <= 0.02


def test_rounding_guarantee():
    d, eps = 1000, 0.5
    rng = np.random.default_rng(1)
    x = rng.choice([-1.0, 1.0], size=d)
    w = rng.standard_normal(d)
    w -= (w @ x) / d * x
    w /= np.linalg.norm(w)
    v = np.sqrt(0.5) * x / np.sqrt(d) + np.sqrt(0.5) * w
    assert (x @ v) ** 2 / d == pytest.approx(0.5)
    hits = [abs(x @ decode_round(v, eps, seed=s)) / d >= eps / 8 for s in range(100)]
    assert sum(hits) >= 90


def test_rounding_is_deterministic_and_validated():
    v = np.ones(10) / np.sqrt(10)
    assert np.array_equal(decode_round(v, 0.3, 7), decode_round(v, 0.3, 7))
    with pytest.raises(ValidationError):
        decode_round(v, 0.0, 0)


@pytest.mark.parametrize("theta", [0.5, 2.0])
def test_decoding_overlap_desk_scale(theta):
    d, k = 500, 51
    p = flip_probability_for(theta, k)
    overlaps = []
    for seed in range(10):
        mats = decode_build(GraphDecodingInstance.random(d, k, p, seed))
        _, u = sla.eigh(mats.y_prime, subset_by_index=[d - 1, d - 1])
        x = GraphDecodingInstance.random(d, k, p, seed).x
        overlaps.append((x @ u[:, 0]) ** 2 / d)
    assert abs(np.mean(overlaps) - max(0.0, 1 - theta**-2)) <= 0.15


# --- contextual block model -----------------------------------------------------


def test_csbm_snr_examples():
    assert csbm_snr(1, 0, 1).snr == pytest.approx(1)
    assert csbm_snr(0, 1, 1).snr == pytest.approx(1)
    r = csbm_snr(0.8, 0.8, 1)
    assert r.snr > 1 and r.supercritical


@given(lam=st.floats(0, 3), mu=st.floats(0, 3), gamma=st.floats(0.1, 10))
def test_csbm_criteria_agree(lam, mu, gamma):
    r = csbm_snr(lam, mu, gamma)
    if abs(lam**2 + mu**2 / gamma - 1) > 1e-9:
        assert r.supercritical == (r.snr > 1)


def test_csbm_zero_signal_matrix():
    inst = CsbmInstance.random(5, 3, 0.0, 0.0, seed=0)
    _, _, x = csbm_build(inst)
    assert x.shape == (8, 8) and np.all(x == 0)
    assert csbm_estimate(x, 5).degenerate


def test_csbm_matrix_is_symmetric_with_blocks():
    inst = CsbmInstance.random(7, 4, 0.8, 1.2, seed=1)
    a, y, x = csbm_build(inst)
    assert a.shape == (7, 7) and y.shape == (4, 7) and x.shape == (11, 11)
    assert np.array_equal(x, x.T)
    c = np.sqrt(inst.mu * inst.p / inst.n)
    assert np.allclose(x[:7, :7], 0.8 * a - (0.64 + c**2) * np.eye(7))
    assert np.allclose(x[7:, 7:], -1.2 * np.eye(4))
    assert np.allclose(x[7:, :7], c * y)


def test_csbm_entry_variances():
    n, p, lam, mu = 3, 2, 0.9, 1.5
    draws = np.array([csbm_build(CsbmInstance(n, p, lam, mu, np.ones(n), s))[2] for s in range(10_000)])
    var = draws.var(axis=0, ddof=1)
    top = lam**2 * (1 + np.eye(n)) / n
    # Features carry the rank-one term sqrt(mu/n) u v* with u ~ N(0, 1/p).
    side = (mu * p / n) * (1 + mu / n) / p * np.ones((p, n))
    expected = np.block([[top, side.T], [side, np.zeros((p, p))]])
    se = expected * np.sqrt(2 / (len(draws) - 1))
    assert np.all(np.abs(var - expected) <= 5 * se + 1e-15)


def test_csbm_feature_free_limit_is_spiked_wigner():
    n, lam = 1000, 3.0
    overlaps = []
    for seed in range(5):
        inst = CsbmInstance.random(n, 10, lam, 0.0, seed)
        est = csbm_estimate(csbm_build(inst)[2], n, seed=seed)
        v_hat = est.v_hat / np.linalg.norm(est.v_hat)
        overlaps.append(csbm_overlap(inst.v, v_hat))
    assert np.mean(overlaps) == pytest.approx(1 - lam**-2, abs=0.05)


def test_csbm_estimate_uses_sparse_path():
    inst = CsbmInstance.random(400, 200, 1.5, 1.0, seed=2)
    x = csbm_build(inst)[2]
    est = csbm_estimate(x, 400, seed=0)
    assert est.eigenvalue == pytest.approx(sla.eigvalsh(x)[-1], abs=1e-8)
    assert np.linalg.norm(est.v_hat) <= 1 + 1e-12


# --- block-structured spiked matrix ----------------------------------------------


def test_spiked_block_snr_examples():
    assert spiked_block_build([[1.0]], (6,), np.ones(6), 0)[2] == pytest.approx(1)
    assert spiked_block_build([[0.5]], (6,), np.ones(6), 0)[2] == pytest.approx(2)


def test_spiked_block_signal_part():
    delta = np.array([[1.0, 2.0], [2.0, 0.5]])
    x = np.array([1.0, -1, 1, 1, -1, -1])
    full, null, _ = spiked_block_build(delta, (3, 3), x, seed=9)
    spec = BlockModelSpec((3, 3), 1 / delta, x)
    assert np.allclose(full - null, spec.expanded_B * np.outer(x, x) / 6, atol=1e-15)
    assert np.allclose(full, full.T) and np.allclose(null, null.T)


def test_spiked_block_matches_block_model_moments():
    delta = np.array([[1.0, 2.0], [2.0, 0.5]])
    x = np.ones(6)
    draws = np.array([spiked_block_build(delta, (3, 3), x, seed=s)[1] for s in range(4000)])
    model = build_block_model(BlockModelSpec((3, 3), 1 / delta, x), include_signal=False)
    mean = draws.mean(axis=0)
    var = draws.var(axis=0, ddof=1)
    expected = (1 + np.eye(6)) * BlockModelSpec((3, 3), 1 / delta).expanded_B / 6
    assert np.all(np.abs(mean - model.a0.real) <= 5 * np.sqrt(expected / 4000))
    assert np.all(np.abs(var - expected) <= 5 * expected * np.sqrt(2 / 3999))


# --- sample covariance ------------------------------------------------------------


def test_scov_closed_form_examples():
    e = scov_closed_forms(0.0, 0.25)
    assert (e.S, e.H_plus, e.H_minus) == pytest.approx((2.25, 1.25, -0.75))
    assert scov_closed_forms(1.0, 0.25).S == pytest.approx(2.5)


@given(delta=st.floats(0.01, 4))
def test_scov_closed_forms_are_continuous_at_branch_points(delta):
    r = np.sqrt(delta)
    for lam in (r, 1 + r, 1 - r):
        if lam <= 0:
            continue
        lo, hi = scov_closed_forms(lam * (1 - 1e-10), delta), scov_closed_forms(lam * (1 + 1e-10), delta)
        for a, b in zip((lo.S, lo.H_plus, lo.H_minus), (hi.S, hi.H_plus, hi.H_minus)):
            assert a == pytest.approx(b, abs=1e-7)


def test_scov_lower_error_edge_below_threshold():
    delta = 0.16
    for lam in (0.0, 0.3, 0.6):
        assert scov_closed_forms(lam, delta).H_minus == pytest.approx(delta - 2 * np.sqrt(delta))


def test_scov_pi_forms_match_closed_forms_on_grid():
    worst = 0.0
    for lam in np.linspace(0, 5, 20):
        for delta in np.linspace(0.05, 3, 20):
            a, b = scov_pi_forms(lam, delta), scov_closed_forms(lam, delta)
            worst = max(worst, abs(a.S - b.S), abs(a.H_plus - b.H_plus), abs(a.H_minus - b.H_minus))
    assert worst <= 1e-7


def test_scov_pi_forms_null_case():
    assert scov_pi_forms(0.0, 0.36).S == pytest.approx(1.6**2, abs=1e-8)


def test_variational_identity_covariance():
    assert scov_variational(np.ones(250), 1000).norm == pytest.approx(1.5**2, abs=1e-6)


def _spiked_gap(n, p, lam):
    var = scov_variational(ScovParams(n, p, lam).spectrum, n)
    lim = scov_closed_forms(lam, p / n)
    return max(abs(var.norm - lim.S), abs(var.h_plus - lim.H_plus), abs(var.h_minus - lim.H_minus))


def test_variational_spiked_approaches_limits():
    lam, delta = 2.0, 0.25
    small, large = _spiked_gap(400, 100, lam), _spiked_gap(4000, 1000, lam)
    assert large <= 3 * (1 + lam + delta) / np.sqrt(4000)
    # The spike weight scales like n^(-1/2), so the gap does too.
    assert large <= 1.2 * small / np.sqrt(10)


def test_variational_methods_agree():
    spectrum = ScovParams(200, 50, 1.5).spectrum
    a = scov_variational(spectrum, 200, method="general")
    b = scov_variational(spectrum, 200, method="rank-one")
    assert (a.norm, a.h_plus, a.h_minus) == pytest.approx((b.norm, b.h_plus, b.h_minus), abs=1e-7)


def test_variational_validation():
    with pytest.raises(ValidationError):
        scov_variational(np.zeros(3), 10)
    with pytest.raises(ValidationError):
        scov_variational([3.0, 2.0, 1.0], 10, method="rank-one")


def test_dilated_free_model_squared_edge():
    n, p = 8, 4
    coeffs = np.zeros((p * n, p, n))
    coeffs[np.arange(p * n), np.repeat(np.arange(p), n), np.tile(np.arange(n), p)] = 1.0
    model = dilate(RectangularModel(np.zeros((p, n)), coeffs))
    edge = lehner_max(model).value
    assert edge**2 / n == pytest.approx(scov_variational(np.ones(p), n).norm, abs=1e-4)


def test_scov_sample_identity_case():
    res = scov_sample(ScovParams(2000, 500, 0.0), seed=0)
    lim = scov_closed_forms(0.0, 0.25)
    assert abs(res.norm - lim.S) <= 0.15
    assert res.h_minus <= 0 <= res.h_plus
