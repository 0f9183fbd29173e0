import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tmm.errors import DegenerateInputError, InvalidArgumentError
from tmm.kernels import (GaussianKernel, RkhsElement, TensorMaternKernel, ZonalKernel,
                         gram, is_admissible, kernel_gradient, rkhs_norm, transported_kernel)
from tmm.lattice import Lattice, LatticeKernel, matern_spectral_profile
from tmm.transport import erf_map, identity_map

E = np.e


def all_kernels(D):
    lat = Lattice.unit(D)
    return [TensorMaternKernel(D), GaussianKernel(D, 0.7), ZonalKernel(D, "exp", 2.0),
            LatticeKernel(lat, matern_spectral_profile(lat)),
            transported_kernel(TensorMaternKernel(D), erf_map(D, 0.0, 1.5))]


def test_matern_diagonal_is_one():
    assert TensorMaternKernel(3).eval([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == 1.0


def test_gaussian_unit_distance():
    assert GaussianKernel(1).eval([0.0], [1.0]) == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_matern_l1_distance():
    assert TensorMaternKernel(2).eval([0, 0], [1, 2]) == pytest.approx(np.exp(-3.0), abs=1e-15)


def test_zonal_inner_product():
    k = ZonalKernel(2)
    assert k.eval([1.0, 2.0], [0.5, -1.0]) == pytest.approx(np.exp(-1.5))


def test_eval_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        GaussianKernel(2).eval([0.0], [1.0, 2.0])


def test_gram_single_point():
    assert gram(GaussianKernel(2), [[0.3, 0.4]]).tolist() == [[1.0]]


def test_gram_gaussian_pair():
    G = gram(GaussianKernel(1), [0.0, 1.0])
    np.testing.assert_allclose(G, [[1, 1 / E], [1 / E, 1]], atol=1e-15)


def test_gram_matern_three_points():
    G = gram(TensorMaternKernel(1), [0.0, 0.5, 1.0])
    np.testing.assert_allclose(G[0, 1], np.exp(-0.5))
    np.testing.assert_allclose(G[0, 2], np.exp(-1.0))
    assert np.linalg.eigvalsh(G)[0] > 0


def test_gram_rejects_duplicates():
    with pytest.raises(DegenerateInputError):
        gram(GaussianKernel(1), [0.2, 0.2, 0.5])


@pytest.mark.parametrize("D", [1, 2, 4])
def test_symmetry_and_admissibility(D):
    rng = np.random.default_rng(D)
    Y = rng.random((64, D)) * 0.9 + 0.05
    for k in all_kernels(D):
        K = k(Y, Y)
        np.testing.assert_allclose(K, K.T, rtol=1e-12, atol=1e-14)
        assert is_admissible(K), k.id


def test_rkhs_norm_single_center():
    assert rkhs_norm(RkhsElement([[0.2, 0.1]], [1.0], GaussianKernel(2))) == pytest.approx(1.0)


def test_rkhs_norm_zero_weights():
    assert rkhs_norm(RkhsElement([[0.0], [1.0]], [0.0, 0.0], GaussianKernel(1))) == 0.0


def test_rkhs_norm_two_centers():
    f = RkhsElement([[0.0], [1.0]], [1.0, -1.0], GaussianKernel(1))
    assert rkhs_norm(f) == pytest.approx(np.sqrt(2 - 2 / E), rel=1e-14)
    assert f.norm() == pytest.approx(1.124385, abs=1e-6)


def test_gradient_gaussian_at_diagonal_is_zero():
    np.testing.assert_allclose(kernel_gradient(GaussianKernel(3), [0.1, 0.2, 0.3], [0.1, 0.2, 0.3]), 0.0)


def test_gradient_gaussian_unit_distance():
    assert kernel_gradient(GaussianKernel(1), [0.0], [1.0])[0] == pytest.approx(2 / E, rel=1e-14)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_gradients_match_finite_differences(D):
    rng = np.random.default_rng(10 + D)
    h = 1e-6
    for k in all_kernels(D):
        for _ in range(5):
            x, y = rng.random(D) * 0.8 + 0.1, rng.random(D) * 0.8 + 0.1
            g = kernel_gradient(k, x, y)
            fd = np.array([(k.eval(x + h * e, y) - k.eval(x - h * e, y)) / (2 * h) for e in np.eye(D)])
            np.testing.assert_allclose(g, fd, atol=1e-4, err_msg=k.id)


@pytest.mark.parametrize("D", [1, 3])
def test_row_sums_match_dense(D):
    rng = np.random.default_rng(D)
    X, Y = rng.random((7, D)), rng.random((11, D))
    for k in all_kernels(D):
        s, g = k.row_sums(X, Y)
        np.testing.assert_allclose(s, k(X, Y).sum(axis=1), rtol=1e-12)
        np.testing.assert_allclose(g, k.gradient(X, Y).sum(axis=1), rtol=1e-10, atol=1e-13)


def test_paired_matches_matrix_diagonal():
    rng = np.random.default_rng(3)
    A, B = rng.random((9, 2)), rng.random((9, 2))
    for k in all_kernels(2):
        np.testing.assert_allclose(k.paired(A, B), np.diag(k(A, B)), rtol=1e-12)


def test_transport_identity_equals_base():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    base = GaussianKernel(2, 0.8)
    np.testing.assert_allclose(transported_kernel(base, identity_map(2))(X, Y), base(X, Y), atol=1e-14)


def test_transported_diagonal_is_one():
    k = transported_kernel(GaussianKernel(2), erf_map(2))
    assert k.eval([0.3, -2.0], [0.3, -2.0]) == 1.0


def test_transport_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        transported_kernel(GaussianKernel(2), erf_map(3))


def test_invalid_scale():
    with pytest.raises(InvalidArgumentError):
        GaussianKernel(2, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_symmetry_property(v):
    x, y = np.array(v[:2]), np.array(v[2:])
    for k in all_kernels(2)[:3] + all_kernels(2)[4:]:
        assert k.eval(x, y) == pytest.approx(k.eval(y, x), rel=1e-13, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=6))
def test_rkhs_norm_nonnegative(w):
    centers = np.linspace(0, 1, len(w))[:, None]
    f = RkhsElement(centers, w, GaussianKernel(1, 0.3))
    assert rkhs_norm(f) >= 0.0
    assert rkhs_norm(f) ** 2 == pytest.approx(f.inner(f), rel=1e-8, abs=1e-12)
