import numpy as np
import pytest

from tmm.errors import DomainError, InvalidArgumentError
from tmm.sde import (SabrModel, SdeModel, diffusion_preset, drift_diffusion, drift_preset,
                     euler_paths, monte_carlo_expectation, terminal_values)


def test_sabr_drift_and_diffusion():
    m = SabrModel()
    r, s = drift_diffusion(m, 0.0, [0.03, 0.10])
    np.testing.assert_array_equal(r, [0.0, 0.0])
    # sigma = diag(alpha F, nu alpha) times the Cholesky factor of the correlation
    L = np.linalg.cholesky([[1, 0.5], [0.5, 1]])
    np.testing.assert_allclose(s, np.diag([0.003, 0.01]) @ L, rtol=1e-14)
    np.testing.assert_allclose(s[0], [0.003, 0.0], atol=1e-18)
    np.testing.assert_allclose(s @ s.T, [[0.003 ** 2, 0.5 * 0.003 * 0.01], [0.5 * 0.003 * 0.01, 0.01 ** 2]])


def test_zero_vol_of_vol_freezes_alpha():
    paths = euler_paths(SabrModel(nu=0.0), np.linspace(0, 1, 11), 100, seed=0)
    np.testing.assert_array_equal(paths[:, :, 1], 0.10)


def test_normal_sabr_diffusion_independent_of_forward():
    m = SabrModel(beta=0.0, F0=0.03)
    a = drift_diffusion(m, 0.0, [0.01, 0.1])[1]
    b = drift_diffusion(m, 0.0, [0.05, 0.1])[1]
    np.testing.assert_array_equal(a, b)


def test_constant_paths_without_dynamics():
    m = SdeModel(2, drift_preset("zero", 2), diffusion_preset("zero", 2))
    P = euler_paths(m, [0, 0.5, 1.0], 10, x0=np.array([1.0, 2.0]))
    np.testing.assert_array_equal(P, np.broadcast_to([1.0, 2.0], P.shape))


def test_sabr_martingale_monte_carlo():
    mean, se = monte_carlo_expectation(SabrModel(), 2.0, lambda X: X[:, 0], n_paths=1_000_000,
                                       seed=1, n_steps=32)
    assert abs(mean - 0.03) < 3 * se


def test_alpha_stays_positive():
    P = euler_paths(SabrModel(nu=1.5), np.linspace(0, 5, 51), 20_000, seed=2)
    assert P[:, :, 1].min() > 0


def test_forward_floor_respects_shift():
    m = SabrModel(F0=0.001, alpha0=1.5, beta=0.0, shift=0.01)
    X = terminal_values(m, 2.0, 20_000, seed=0, n_steps=64)
    assert X[:, 0].min() > -0.01


def test_terminal_values_deterministic_and_block_independent():
    m = SabrModel()
    a = terminal_values(m, 1.0, 1000, seed=4, n_steps=8, block=1000)
    b = terminal_values(m, 1.0, 1000, seed=4, n_steps=8, block=1000)
    np.testing.assert_array_equal(a, b)


def test_correlated_increments():
    m = SdeModel(2, drift_preset("zero", 2), diffusion_preset("constant", 2, [1.0, 1.0]),
                 correlation=[[1, -0.6], [-0.6, 1]])
    X = euler_paths(m, [0, 1.0], 200_000, seed=3, x0=np.zeros(2))[-1]
    assert np.corrcoef(X.T)[0, 1] == pytest.approx(-0.6, abs=0.01)


def test_mean_reverting_and_geometric_presets():
    r = drift_preset("mean-reverting", 1, (2.0, 1.0))
    np.testing.assert_allclose(r(0, np.array([[3.0]])), [[-4.0]])
    s = diffusion_preset("geometric", 2, [0.1, 0.2])
    np.testing.assert_allclose(s(0, np.array([[2.0, 3.0]]))[0], np.diag([0.2, 0.6]))


def test_invalid_parameters():
    with pytest.raises(InvalidArgumentError):
        SabrModel(beta=1.5)
    with pytest.raises(InvalidArgumentError):
        SabrModel(rho12=1.0)
    with pytest.raises(DomainError):
        SabrModel(F0=-0.01)
    with pytest.raises(InvalidArgumentError):
        SdeModel(2, None, None, correlation=[[1, 2], [2, 1]])
    with pytest.raises(InvalidArgumentError):
        euler_paths(SabrModel(), [0.0, 1.0, 0.5], 3)
    with pytest.raises(DomainError):
        drift_diffusion(SabrModel(), 0.0, [-0.5, 0.1])
    with pytest.raises(InvalidArgumentError):
        drift_preset("cubic", 1)


def test_singular_correlation_uses_square_root():
    m = SdeModel(2, drift_preset("zero", 2), diffusion_preset("constant", 2, 1.0),
                 correlation=[[1, 1], [1, 1]])
    np.testing.assert_allclose(m.chol @ m.chol.T, [[1, 1], [1, 1]], atol=1e-12)
