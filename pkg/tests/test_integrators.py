import numpy as np
import pytest

from integrasym.errors import DomainExit, StepFailure
from integrasym.integrators import (
    integrate,
    integrate_rk4,
    integrate_rk45,
    rk4_step,
    rkf45_step,
)


def growth(y):
    return y


def blowup(y):
    return y**2


def rotation(y):
    return np.column_stack([-y[:, 1], y[:, 0]])


def test_rk4_step_order():
    y = np.array([[1.0]])
    assert rk4_step(growth, y, 0.1)[0, 0] == pytest.approx(np.exp(0.1), rel=1e-6)


def test_rkf45_step_error_estimate():
    y1, err = rkf45_step(growth, np.array([[1.0]]), 0.1)
    assert y1[0, 0] == pytest.approx(np.exp(0.1), rel=1e-8)
    assert 0 < err[0, 0] < 1e-6


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_exponential(method):
    y = integrate(growth, np.array([[1.0], [2.0]]), 1.0, method=method)
    assert y.shape == (2, 1)
    assert np.allclose(y[:, 0], [np.e, 2 * np.e], rtol=1e-8, atol=0)


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_backward_time(method):
    y = integrate(growth, np.array([1.0]), -1.0, method=method)
    assert y[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-8)


def test_rotation_preserves_radius():
    start = np.array([[1.0, 0.0], [0.0, 0.5]])
    y = integrate_rk45(rotation, start, 2 * np.pi, tol=1e-12)
    assert np.allclose(y, start, atol=1e-9)


def test_zero_time_and_zero_field():
    start = np.array([[0.3, -0.2]])
    assert np.array_equal(integrate(rotation, start, 0.0), start)
    still = integrate(lambda y: np.zeros_like(y), start, 5.0)
    assert np.array_equal(still, start)


def test_domain_exit():
    bounds = np.array([[0.0, 2.0]])
    with pytest.raises(DomainExit):
        integrate(growth, np.array([[1.0]]), 1.0, bounds=bounds)
    with pytest.raises(DomainExit):
        integrate(growth, np.array([[1.0]]), 1.0, method="rk4", bounds=bounds)
    inside = integrate(growth, np.array([[1.0]]), 0.5, bounds=bounds)
    assert inside[0, 0] == pytest.approx(np.exp(0.5), rel=1e-8)


def test_finite_time_blowup():
    # y' = y^2 from y(0) = 1 reaches infinity at t = 1
    with pytest.raises(StepFailure):
        integrate(blowup, np.array([[1.0]]), 2.0)


def test_argument_validation():
    with pytest.raises(ValueError):
        integrate(growth, np.array([[1.0]]), 1.0, method="euler")
    with pytest.raises(ValueError):
        integrate_rk4(growth, np.array([[1.0]]), 1.0, step=0.0)
    with pytest.raises(ValueError):
        integrate_rk45(growth, np.array([[1.0]]), 1.0, tol=-1.0)
    with pytest.raises(ValueError):
        integrate(lambda y: y[:, :1], np.array([[1.0, 2.0]]), 1.0)


def test_fixed_step_count_too_large():
    with pytest.raises(StepFailure):
        integrate_rk4(growth, np.array([[1.0]]), 1.0, step=1e-6)
