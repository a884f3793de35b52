import json
import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kpw.kernel import (
    DegenerateGramError,
    KernelParams,
    check_samples,
    gaussian_gram,
    gaussian_kernel,
    gram_bundle,
    kernel_bound,
    median_heuristic,
    output_matrix,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _random_pair(rng, n=4, m=3, D=2):
    return rng.normal(size=(n, D)), rng.normal(size=(m, D))


# --- KernelParams ---------------------------------------------------------


@pytest.mark.parametrize("kwargs", [dict(sigma2=0.0), dict(sigma2=-1.0), dict(sigma2=1.0, rho=1.5), dict(sigma2=1.0, rho=-0.1), dict(sigma2=1.0, d=0)])
def test_params_reject_invalid(kwargs):
    with pytest.raises(ValueError):
        KernelParams(**kwargs)


def test_params_json_round_trip():
    p = KernelParams(2.5, 0.25, 3)
    assert json.loads(p.to_json()) == {"sigma2": 2.5, "rho": 0.25, "d": 3}
    assert KernelParams.from_json(p.to_json()) == p


def test_check_samples_promotes_vectors_and_rejects_nan():
    assert check_samples([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(ValueError):
        check_samples([[1.0, np.nan]])
    with pytest.raises(ValueError):
        check_samples(np.empty((0, 2)))


# --- scalar kernel ----------------------------------------------------------


def test_gaussian_kernel_identity_and_convention():
    x = np.array([0.3, -1.2])
    assert gaussian_kernel(x, x, 0.7) == 1.0
    # squared distance 2 sigma^2 gives e^{-1}
    assert gaussian_kernel([0.0], [math.sqrt(2 * 1.7)], 1.7) == pytest.approx(math.exp(-1), rel=1e-15)


def test_gaussian_kernel_hand_value():
    assert gaussian_kernel([1.0, 0.0], [0.0, 0.0], 3.0) == pytest.approx(math.exp(-1.0 / 6.0), rel=1e-15)


def test_gaussian_kernel_errors():
    with pytest.raises(ValueError):
        gaussian_kernel([0.0, 1.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel([0.0], [1.0], 0.0)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), st.floats(1e-2, 1e2))
def test_gaussian_kernel_symmetric_and_bounded(x, y, s2):
    k = gaussian_kernel(x, y, s2)
    assert k == gaussian_kernel(y, x, s2)
    assert 0.0 <= k <= 1.0


def test_gram_matches_pointwise_kernel():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    gram = gaussian_gram(a, b, 1.3)
    expected = np.array([[gaussian_kernel(p, q, 1.3) for q in b] for p in a])
    np.testing.assert_allclose(gram, expected, rtol=1e-14)


# --- output matrix and bound ------------------------------------------------


def test_output_matrix_extremes():
    np.testing.assert_array_equal(output_matrix(1.0, 3), np.eye(3))
    np.testing.assert_array_equal(output_matrix(0.0, 2), np.ones((2, 2)))


def test_output_matrix_eigenvalues():
    eig = np.linalg.eigvalsh(output_matrix(0.5, 3))
    np.testing.assert_allclose(eig, [0.5, 0.5, 2.0], atol=1e-14)


@pytest.mark.parametrize("rho", [1.5, -0.2])
def test_output_matrix_rejects_rho(rho):
    with pytest.raises(ValueError):
        output_matrix(rho, 2)


@pytest.mark.parametrize("rho,d,expected", [(1.0, 4, 1.0), (0.5, 2, 1.5), (0.0, 5, 5.0)])
def test_kernel_bound_values(rho, d, expected):
    b = kernel_bound(KernelParams(1.0, rho, d))
    assert b == pytest.approx(expected, rel=1e-15)
    assert b == pytest.approx(np.linalg.eigvalsh(output_matrix(rho, d)).max(), rel=1e-12)


def test_matrix_kernel_within_bound_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        params = KernelParams(float(rng.uniform(0.1, 5)), float(rng.uniform()), d)
        x, y = rng.normal(size=3), rng.normal(size=3)
        eig = np.linalg.eigvalsh(gaussian_kernel(x, y, params.sigma2) * output_matrix(params.rho, d))
        assert eig.max() <= kernel_bound(params) + 1e-10
        assert eig.min() >= -1e-10


# --- median heuristic -------------------------------------------------------


def test_median_heuristic_small_sets():
    assert median_heuristic([[0.0], [1.0]]) == pytest.approx(1.0)
    assert median_heuristic([[0.0], [1.0], [3.0]]) == pytest.approx(4.0)
    assert median_heuristic([[0.0], [0.0], [1.0]]) == pytest.approx(1.0)


def test_median_heuristic_matches_pair_enumeration():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(9, 3))
    dists = [np.linalg.norm(pts[i] - pts[j]) for i, j in combinations(range(9), 2)]
    assert median_heuristic(pts) == pytest.approx(np.median(dists) ** 2, rel=1e-12)


def test_median_heuristic_errors():
    with pytest.raises(ValueError):
        median_heuristic([[1.0, 2.0]])
    with pytest.raises(ValueError):
        median_heuristic([[1.0], [1.0], [1.0]])


# --- Gram bundle -------------------------------------------------------------


def test_scalar_gram_psd():
    rng = np.random.default_rng(3)
    for _ in range(20):
        xs, ys = _random_pair(rng, 6, 5, 3)
        b = gram_bundle(xs, ys, KernelParams(float(rng.uniform(0.2, 4)), 0.5, 2))
        np.testing.assert_allclose(b.scalar_gram, b.scalar_gram.T)
        assert np.linalg.eigvalsh(b.scalar_gram).min() >= -1e-10


def test_two_point_gram_by_hand():
    q = math.exp(-0.5 * 0.64 / 1.0)
    b = gram_bundle([[0.0]], [[0.8]], KernelParams(1.0, 1.0, 1))
    g = np.kron(b.signed_scalar_gram, b.out_matrix)
    np.testing.assert_allclose(g, [[1.0, -q], [-q, 1.0]], atol=1e-15)
    assert np.linalg.det(g) == pytest.approx(1 - q * q, rel=1e-12)


def test_block_sign_structure():
    rng = np.random.default_rng(4)
    xs, ys = _random_pair(rng, 3, 2, 2)
    params = KernelParams(1.5, 0.3, 2)
    b = gram_bundle(xs, ys, params)
    g = b.signed_gram
    pts = np.vstack([xs, ys])
    signs = [1, 1, 1, -1, -1]
    P = output_matrix(params.rho, params.d)
    for i in range(5):
        for j in range(5):
            block = g[2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
            expected = signs[i] * signs[j] * gaussian_kernel(pts[i], pts[j], params.sigma2) * P
            np.testing.assert_allclose(block, expected, atol=1e-8)


@pytest.mark.parametrize("d,rho", [(1, 0.5), (2, 0.5), (3, 0.0), (3, 1.0)])
def test_inverse_cholesky_whitens(d, rho):
    rng = np.random.default_rng(5 + d)
    xs, ys = _random_pair(rng, 5, 4, 3)
    b = gram_bundle(xs, ys, KernelParams(1.0, rho, d))
    u = b.inv_chol
    g = b.signed_gram
    assert np.linalg.norm(u.T @ g @ u - np.eye(b.dim)) <= 1e-8
    np.testing.assert_allclose(g, g.T)


def test_duplicate_point_needs_jitter():
    x = np.array([[0.2, -0.4]])
    b = gram_bundle(x, x, KernelParams(1.0, 1.0, 1))
    raw = b.signed_scalar_gram
    assert abs(np.linalg.det(raw)) < 1e-14
    assert b.jitter_used > 0
    assert np.linalg.eigvalsh(b.signed_gram).min() > 0


def test_degenerate_gram_beyond_cap():
    # the pooled signed Gram [[1, -1], [-1, 1]] stays exactly singular under 1e-20 jitter
    x = np.zeros((1, 1))
    with pytest.raises(DegenerateGramError):
        gram_bundle(x, x, KernelParams(1.0, 1.0, 1), jitter_base=1e-20, jitter_cap=1e-19)


def test_sphere_point_inverts_omega():
    rng = np.random.default_rng(6)
    xs, ys = _random_pair(rng, 3, 4, 2)
    b = gram_bundle(xs, ys, KernelParams(0.8, 0.5, 2))
    s = rng.normal(size=b.dim)
    np.testing.assert_allclose(b.sphere_point(b.omega(s)), s, atol=1e-9)
    np.testing.assert_allclose(b.omega(s), b.inv_chol @ s, atol=1e-10)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        gram_bundle(np.zeros((2, 2)), np.zeros((2, 3)), KernelParams(1.0))


def test_precomputed_scalar_gram_is_used_verbatim():
    rng = np.random.default_rng(7)
    xs, ys = _random_pair(rng)
    params = KernelParams(1.1, 0.5, 2)
    pooled = np.vstack([xs, ys])
    a = gram_bundle(xs, ys, params)
    b = gram_bundle(xs, ys, params, scalar_gram=gaussian_gram(pooled, pooled, 1.1))
    np.testing.assert_array_equal(a.chol_k, b.chol_k)
    with pytest.raises(ValueError):
        gram_bundle(xs, ys, params, scalar_gram=np.eye(3))
