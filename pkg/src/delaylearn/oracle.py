"""Brute-force checks for the adjoint gradients.

The finite differences perturb the inputs of the same Euler solver the adjoint
differentiates, so a disagreement beyond the O(dt) discretization gap points at
the adjoint code rather than at the integrator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjoint import GradientBundle, loss_gradient_discrete
from .dde import TimeGrid, solve_forward
from .errors import BlowUpError, ConfigurationError, OracleError
from .loss import DataSet, loss_discrete

FD_STEP = 1e-5
REL_FLOOR = 1e-12


def relative_errors(a, b, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _step(value: float, fd_step: float) -> float:
    return fd_step * max(1.0, abs(value))


def central_difference(fn, z, fd_step: float = FD_STEP, label: str = "z") -> np.ndarray:
    """Central differences of a scalar ``fn`` at every component of ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty(z.size)
    for i in range(z.size):
        h = _step(z[i], fd_step)
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        try:
            out[i] = (fn(zp) - fn(zm)) / (2.0 * h)
        except BlowUpError as exc:
            raise OracleError(f"perturbed solve for {label}[{i}] blew up: {exc}",
                              perturbation=f"{label}[{i}]") from exc
    return out


def fd_loss_gradient(model, theta, tau: float, data: DataSet, grid: TimeGrid,
                     fd_step: float = FD_STEP, x0=None) -> GradientBundle:
    """Central differences of loss_discrete(solve_forward(...)) in theta, tau and x0.

    ``x0`` defaults to the first measurement; perturbing it moves the whole
    constant history.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x0 = data.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    tau = float(tau)
    h_tau = _step(tau, fd_step)
    if tau - h_tau < grid.dt:
        raise ConfigurationError(f"tau - fd step = {tau - h_tau!r} falls below dt={grid.dt!r}")

    def loss(th, ta, x):
        return loss_discrete(solve_forward(model, th, ta, x, grid), data).total

    d_theta = central_difference(lambda th: loss(th, tau, x0), theta, fd_step, "theta")
    d_tau = central_difference(lambda t: loss(theta, t[0], x0), [tau], fd_step, "tau")[0]
    d_x0 = central_difference(lambda x: loss(theta, tau, x), x0, fd_step, "x0")
    return GradientBundle(d_theta, d_tau, d_x0)


def fd_terminal_sensitivity(model, theta, tau: float, x0, grid: TimeGrid, component: int = 0,
                            fd_step: float = FD_STEP, hold_history: bool = False) -> GradientBundle:
    """Central differences of x^i(T) itself.

    With ``hold_history`` the x0 perturbation moves only the initial point and
    leaves the history on [-tau, 0) at the unperturbed x0, which is the
    derivative the adjoint value p(0) represents.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    tau = float(tau)

    def end(th, ta, x):
        hist = x0 if hold_history else None
        return solve_forward(model, th, ta, x, grid, history=hist).states[-1, component]

    return GradientBundle(
        central_difference(lambda th: end(th, tau, x0), theta, fd_step, "theta"),
        central_difference(lambda t: end(theta, t[0], x0), [tau], fd_step, "tau")[0],
        central_difference(lambda x: end(theta, tau, x), x0, fd_step, "x0"),
    )


@dataclass(frozen=True)
class GradCheckReport:
    analytic: GradientBundle
    numeric: GradientBundle
    rel_errors: np.ndarray
    fd_step: float
    dt: float
    tol: float
    passed: bool
    floor: float = REL_FLOOR

    @property
    def labels(self) -> list[str]:
        return self.analytic.labels()

    @property
    def failing(self) -> list[str]:
        return [name for name, e in zip(self.labels, self.rel_errors) if not e < self.tol]

    def to_dict(self) -> dict:
        names = self.labels
        return {
            "passed": self.passed,
            "tol": self.tol,
            "fd_step": self.fd_step,
            "dt": self.dt,
            "floor": self.floor,
            "analytic": dict(zip(names, self.analytic.as_vector().tolist())),
            "numeric": dict(zip(names, self.numeric.as_vector().tolist())),
            "rel_errors": dict(zip(names, self.rel_errors.tolist())),
            "failing": self.failing,
        }


def gradcheck(model, theta, tau: float, data: DataSet, grid: TimeGrid,
              fd_step: float = FD_STEP, tol: float = 1e-2,
              floor: float = REL_FLOOR) -> GradCheckReport:
    """Compare the adjoint loss gradient against fd_loss_gradient component by component.

    ``floor`` is the absolute denominator floor of the relative error. Central
    differences carry an O(fd_step**2) truncation term, so at an exact minimum,
    where the adjoint gradient is identically zero, a floor near that size is
    needed for the comparison to be meaningful.
    """
    forward = solve_forward(model, theta, tau, data.x0, grid)
    analytic = loss_gradient_discrete(model, theta, tau, forward, data)
    numeric = fd_loss_gradient(model, theta, tau, data, grid, fd_step)
    rel = relative_errors(analytic.as_vector(), numeric.as_vector(), floor)
    return GradCheckReport(analytic, numeric, rel, fd_step, grid.dt, tol,
                           bool(np.max(rel) < tol), floor)
