import dataclasses

import numpy as np
import pytest

from delaylearn.dde import TimeGrid
from delaylearn.errors import ConfigurationError, OracleError
from delaylearn.loss import DataSet, sample_dataset
from delaylearn.models import linear_model, logistic_model, model_from_rhs_fd, zero_model
from delaylearn.oracle import (
    central_difference,
    fd_loss_gradient,
    gradcheck,
    relative_errors,
)


def test_relative_errors_floor():
    np.testing.assert_allclose(relative_errors([0.0, 1.0], [0.0, 1.1]), [0.0, 0.1 / 1.1])
    assert relative_errors(0.0, 1e-13)[()] == pytest.approx(0.1)


def test_central_difference_exact_on_quadratic():
    g = central_difference(lambda z: float(z @ z), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_allclose(g, [2.0, -4.0, 1.0], rtol=1e-9)


def test_fd_step_sign_symmetric():
    fn = lambda z: float(np.sin(z[0]) * np.exp(z[1]))
    a = central_difference(fn, [0.3, 0.2], 1e-5)
    b = central_difference(fn, [0.3, 0.2], -1e-5)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_zero_model_gradient_is_zero():
    grid = TimeGrid(2.0, 0.01)
    data = DataSet([0.0, 1.0, 2.0], [1.0, 2.0, 2.0])
    fd = fd_loss_gradient(zero_model(), [0.5], 0.5, data, grid)
    assert not np.any(fd.as_vector()[:2])
    assert fd.d_x0[0] == pytest.approx(-4.0)
    report = gradcheck(zero_model(), [0.5], 0.5, data, grid)
    assert report.passed and report.failing == []


def test_linear_model_signs_agree():
    grid = TimeGrid(10.0, 1e-3)
    data = sample_dataset(linear_model(), [-2.0, -2.0], 1.0, [-1.0], grid, 100)
    report = gradcheck(linear_model(), [-1.5, -2.5], 1.3, data, grid)
    assert np.all(np.sign(report.analytic.as_vector()) == np.sign(report.numeric.as_vector()))
    assert report.passed


def test_logistic_benchmark_passes(logistic_data):
    model, grid, data = logistic_data
    report = gradcheck(model, [2.0, 2.0], 2.0, data, grid, fd_step=1e-5, tol=1e-2)
    assert report.passed, report.to_dict()
    d = report.to_dict()
    assert set(d["rel_errors"]) == {"theta1", "theta2", "tau", "x0_0"}
    assert d["dt"] == 1e-3 and d["floor"] == 1e-12


def test_sign_flipped_jacobian_is_caught(logistic_data):
    model, grid, data = logistic_data
    broken = dataclasses.replace(model, d_rhs_dy=lambda x, y, th: -model.d_rhs_dy(x, y, th))
    report = gradcheck(broken, [2.0, 2.0], 2.0, data, grid)
    assert not report.passed
    assert "tau" in report.failing


def test_zero_residual_needs_a_floor(logistic_data):
    # At the truth the adjoint gradient is exactly zero while FD carries O(h^2)
    # truncation noise; only a floor above that noise makes the check pass.
    model, grid, data = logistic_data
    strict = gradcheck(model, [1.0, 1.0], 1.0, data, grid)
    assert not np.any(strict.analytic.as_vector())
    assert np.abs(strict.numeric.as_vector()).max() < 1e-6
    assert not strict.passed
    assert gradcheck(model, [1.0, 1.0], 1.0, data, grid, floor=1e-4).passed


def test_tau_perturbation_below_dt_rejected():
    grid = TimeGrid(1.0, 0.1)
    data = DataSet([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ConfigurationError):
        fd_loss_gradient(logistic_model(), [1.0, 1.0], 0.1, data, grid)


def test_blow_up_names_perturbation():
    model = model_from_rhs_fd(lambda x, y, th: th[0] * x * x, 1, 1)
    grid = TimeGrid(1.0, 0.01)
    data = DataSet([0.0, 1.0], [10.0, 10.0])

    def fn(z):
        from delaylearn.dde import solve_forward
        return solve_forward(model, z, 0.5, [10.0], grid).states[-1, 0]

    with pytest.raises(OracleError) as err:
        central_difference(fn, [1e4], label="theta")
    assert err.value.perturbation == "theta[0]"
    assert data.count == 2
