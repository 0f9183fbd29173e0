import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from tmm.errors import InvalidArgumentError, TruncationWarning
from tmm.kernels import kernel_gradient
from tmm.lattice import (Lattice, LatticeKernel, constant_profile, custom_profile,
                         default_matern_scale, gaussian_spectral_profile,
                         matern_spectral_profile, sea_bound)


def test_constant_profile_gives_constant_kernel():
    lat = Lattice.unit(2)
    k = LatticeKernel(lat, constant_profile(lat))
    rng = np.random.default_rng(0)
    np.testing.assert_allclose(k(rng.random((10, 2)), rng.random((5, 2))), 1.0)


def test_translation_invariant_diagonal():
    lat = Lattice.unit(1)
    k = LatticeKernel(lat, matern_spectral_profile(lat, 1.0))
    x = np.random.default_rng(1).random(20)
    np.testing.assert_allclose(k.paired(x, x), k.eval([0.0], [0.0]), rtol=1e-13)


def test_periodicity():
    lat = Lattice.unit(1)
    k = LatticeKernel(lat, matern_spectral_profile(lat))
    x = np.random.default_rng(2).random(20) * 3 - 1
    np.testing.assert_allclose(k(x + 1.0, [0.0]), k(x, [0.0]), atol=1e-10)


def test_matern_profile_values():
    lat = Lattice.unit(1)
    p = matern_spectral_profile(lat, 1.0)
    assert p.at_index([0]) == 1.0
    assert p.at_index([1]) == pytest.approx(1 / (1 + 4 * np.pi ** 2), rel=1e-14)
    # Fourier transform of exp(-|u|), normalized to 1 at zero frequency
    ft = 2 * quad(lambda u: np.exp(-u) * np.cos(2 * np.pi * u), 0, np.inf, limit=200)[0] / 2.0
    assert p.at_index([1]) == pytest.approx(ft, rel=1e-6)


def test_matern_profile_decreasing():
    lat = Lattice.unit(2)
    p = matern_spectral_profile(lat, 0.4)
    assert p.at_index([2, 0]) < p.at_index([1, 0])


def test_default_scale():
    assert default_matern_scale(12) == 1.0


def test_closed_form_matches_truncated_series():
    lat = Lattice.unit(1)
    p = matern_spectral_profile(lat, 0.3)
    k = LatticeKernel(lat, p)
    x = np.linspace(-0.5, 0.5, 11)
    a = np.arange(1, 200001)
    rho = 1 / (1 + (2 * np.pi * 0.3 * a) ** 2)
    series = 1 + 2 * (rho[None, :] * np.cos(2 * np.pi * x[:, None] * a[None, :])).sum(axis=1)
    np.testing.assert_allclose(k(x, [0.0])[:, 0], series, rtol=1e-5)


def test_gaussian_family_matches_series():
    lat = Lattice.unit(1)
    k = LatticeKernel(lat, gaussian_spectral_profile(lat, 0.2))
    x = np.linspace(0, 1, 7)
    a = np.arange(1, 200)
    series = 1 + 2 * (np.exp(-(np.pi * 0.2 * a) ** 2) * np.cos(2 * np.pi * x[:, None] * a)).sum(axis=1)
    np.testing.assert_allclose(k(x, [0.0])[:, 0], series, rtol=1e-12)


def test_custom_profile_and_non_rectangular_lattice():
    lat = Lattice(np.array([[1.0, 0.0], [0.5, 1.0]]))
    p = custom_profile(lat, {(0, 0): 1.0, (1, 0): 0.3, (-1, 0): 0.3, (0, 1): 0.2, (0, -1): 0.2})
    k = LatticeKernel(lat, p)
    x = np.array([[0.1, 0.2]])
    dual = lat.dual_generators
    expect = (1 + 2 * 0.3 * np.cos(2 * np.pi * x @ dual[0]) + 2 * 0.2 * np.cos(2 * np.pi * x @ dual[1]))
    expect = expect / lat.cell_volume
    np.testing.assert_allclose(k(x, np.zeros((1, 2)))[0, 0], expect[0], rtol=1e-12)
    # invariant under lattice translations
    np.testing.assert_allclose(k(x + lat.generators[1], np.zeros((1, 2))), k(x, np.zeros((1, 2))), atol=1e-12)


def test_lattice_gradient_finite_difference():
    lat = Lattice.unit(1)
    k = LatticeKernel(lat, matern_spectral_profile(lat))
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(10):
        x, y = rng.random(1), rng.random(1)
        fd = (k.eval(x + h, y) - k.eval(x - h, y)) / (2 * h)
        assert kernel_gradient(k, x, y)[0] == pytest.approx(fd, abs=1e-4)


@pytest.mark.parametrize("N,expected", [(16, 0.062), (512, 0.002)])
def test_sea_bound_one_dimension(N, expected):
    lat = Lattice.unit(1)
    assert sea_bound(matern_spectral_profile(lat), N) == pytest.approx(expected, rel=0.15)


def test_sea_bound_constant_profile():
    lat = Lattice.unit(2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        assert sea_bound(constant_profile(lat), 7) == 0.0


def test_sea_bound_matches_brute_force_in_two_dimensions():
    lat = Lattice.unit(2)
    p = matern_spectral_profile(lat)
    a = np.arange(-3000, 3001)
    r1 = 1 / (1 + (2 * np.pi * p.scale * a) ** 2)
    top = np.sort(np.outer(r1[2700:3301], r1[2700:3301]).ravel())[::-1][:32]
    tail = r1.sum() ** 2 - top.sum()
    assert sea_bound(p, 32) == pytest.approx(np.sqrt(tail / 32), rel=1e-3)


def test_sea_bound_rejects_bad_N():
    lat = Lattice.unit(1)
    with pytest.raises(InvalidArgumentError):
        sea_bound(matern_spectral_profile(lat), 0)


def test_profile_for_other_lattice_rejected():
    with pytest.raises(InvalidArgumentError):
        LatticeKernel(Lattice.unit(1), matern_spectral_profile(Lattice(np.array([[2.0]]))))
