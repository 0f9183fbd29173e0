import numpy as np
import pytest

from tmm.discrepancy import EmpiricalMeasure, OptimizerOptions, discrepancy
from tmm.errors import InvalidArgumentError
from tmm.forward import ForwardOptions, fitted_kernel, match_moments, moment, propagate
from tmm.kernels import GaussianKernel, RkhsElement
from tmm.sde import SabrModel, SdeModel, diffusion_preset, drift_preset

FAST = ForwardOptions(aux_factor=6, optimizer=OptimizerOptions(restarts=1, max_iters=40))


def test_frozen_dynamics():
    m = SdeModel(2, drift_preset("zero", 2), diffusion_preset("zero", 2))
    flow = propagate(m, None, [0.3, -0.2], [0, 0.5, 1.0], 10, FAST)
    for j in range(3):
        np.testing.assert_allclose(flow.points(j), flow.points(0), atol=1e-12)
    assert max(c.value for c in flow.certificates[1:]) < 1e-4
    assert flow.certificates[0].value < 0.05


def test_pure_drift_translates():
    m = SdeModel(2, drift_preset("constant", 2, [1.0, 0.0]), diffusion_preset("zero", 2))
    flow = propagate(m, None, [0.3, -0.2], [0, 0.5], 10, FAST)
    np.testing.assert_allclose(flow.points(1) - flow.points(0), [[0.5, 0.0]] * 10, atol=1e-12)


def test_sabr_flow_moments(small_sabr_flow):
    flow = small_sabr_flow
    for j in range(len(flow.times)):
        assert flow.points(j)[:, 0].mean() == pytest.approx(0.03, rel=0.02)
        assert np.all(flow.points(j)[:, 1] > 0)
    spread = [flow.points(j)[:, 0].std() for j in range(1, len(flow.times))]
    assert np.all(np.diff(spread) > 0)


def test_certificates_are_recorded(small_sabr_flow):
    flow = small_sabr_flow
    assert len(flow.certificates) == len(flow.times) == len(flow.states)
    assert len(flow.steps) == len(flow.times) - 1
    for j, rec in enumerate(flow.steps):
        assert len(rec.cloud) == 10 * flow.N
        np.testing.assert_array_equal(np.bincount(rec.parents), 10)
        E = discrepancy(flow.kernels[j + 1], EmpiricalMeasure(rec.cloud), flow.points(j + 1)).value
        assert flow.certificates[j + 1].value == pytest.approx(E, rel=1e-10)


def test_moment_of_constant(small_sabr_flow):
    mean, bound = moment(small_sabr_flow, 2, lambda Y: np.ones(len(Y)))
    assert mean == 1.0


def test_moment_bound_on_kernel_sections(small_sabr_flow):
    flow = small_sabr_flow
    rng = np.random.default_rng(0)
    for j in range(1, len(flow.times)):
        cloud = flow.steps[j - 1].cloud
        K = flow.kernels[j]
        for x0 in cloud[rng.choice(len(cloud), 5)]:
            phi = RkhsElement(x0[None], [1.0], K)
            mean, bound = moment(flow, j, phi)
            exact = phi(cloud).mean()
            assert abs(mean - exact) <= bound * (1 + 1e-9) + 1e-15


def test_moment_bound_with_foreign_kernel(small_sabr_flow):
    flow = small_sabr_flow
    K = GaussianKernel(2, [0.005, 0.01])
    x0 = np.array([0.031, 0.1])
    phi = RkhsElement(x0[None], [1.0], K)
    mean, bound = moment(flow, 3, phi)
    assert abs(mean - phi(flow.steps[2].cloud).mean()) <= bound * (1 + 1e-9)


def test_deterministic():
    m = SabrModel()
    a = propagate(m, None, m.x0, [0, 0.25, 0.5], 15, FAST)
    b = propagate(m, None, m.x0, [0, 0.25, 0.5], 15, FAST)
    for j in range(3):
        np.testing.assert_array_equal(a.points(j), b.points(j))


def test_fitted_kernel_centers_cloud():
    C = np.random.default_rng(0).normal([1.0, 5.0], [2.0, 0.5], size=(1000, 2))
    k = fitted_kernel(C)
    S = k.map.apply(C)
    assert np.abs(S.mean(axis=0)).max() < 0.05


def test_invalid_inputs():
    m = SabrModel()
    with pytest.raises(InvalidArgumentError):
        propagate(m, None, m.x0, [0, 1], 1, FAST)
    with pytest.raises(InvalidArgumentError):
        propagate(m, None, [0.03], [0, 1], 5, FAST)
    with pytest.raises(InvalidArgumentError):
        propagate(m, None, m.x0, [0.5, 1], 5, FAST)
    with pytest.raises(InvalidArgumentError):
        propagate(m, GaussianKernel(3), m.x0, [0, 1], 5, FAST)


def test_match_moments():
    rng = np.random.default_rng(0)
    C = rng.multivariate_normal([1.0, 2.0], [[1.0, 0.4], [0.4, 0.5]], size=2000)
    Y = 0.8 * C[:50] + 0.1
    Z = match_moments(Y, C)
    np.testing.assert_allclose(Z.mean(axis=0), C.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(np.cov(Z.T, bias=True), np.cov(C.T, bias=True), atol=1e-12)
    # singular covariance: shift only
    flat = np.column_stack([np.arange(5.0), np.zeros(5)])
    np.testing.assert_allclose(match_moments(flat, flat + 1.0), flat + 1.0)
