"""Backward adjoint solves and gradient assembly for delayed dynamics.

The adjoint covector p(t) obeys, backward in time from t = T,

    p'(t) = -p(t) Df_x(x(t), y(t)) - p(t + tau) Df_y(x(t + tau), x(t)) [t + tau < T]
            - dl/dx(x(t))

with p(t) = 0 beyond T. Pairing it with the parameter partials gives

    dx^i(T)/dtheta =  int_0^T p_i(t) df/dtheta(x(t), y(t)) dt
    dx^i(T)/dtau   = -int_0^{T-tau} p_i(t + tau) Df_y(x(t + tau), x(t)) x'(t) dt
    dx^i(T)/dx(0)  =  p_i(0)

All three are discretized on the forward grid: explicit Euler backward for p,
left Riemann sums for the integrals, linear interpolation for p(t + tau).

Paths may carry jumps at interior nodes (used to fold several data times
into one backward pass), so each node stores the left limit ``covectors[k]``
and the right limit ``right[k]``. On [t_k, t_{k+1}) the path interpolates
``right[k]`` and ``covectors[k+1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dde import TimeGrid, Trajectory, delay_offset, lagged_values
from .errors import BlowUpError, ConfigurationError
from .loss import DataSet, residuals


@dataclass(frozen=True)
class AdjointPath:
    grid: TimeGrid
    covectors: np.ndarray
    right: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.covectors[-1]

    def at(self, t: float) -> np.ndarray:
        """p(t) with zero extension past T.

        Interior node queries return the right limit; p(T) is the terminal value.
        """
        g = self.grid
        pos = (t - g.t_start) / g.dt
        if abs(pos - round(pos)) < 1e-9:
            pos = float(round(pos))
        if pos > g.n_steps:
            return np.zeros(self.covectors.shape[1])
        if pos < 0:
            raise ConfigurationError(f"adjoint queried before t=0 at {float(t)!r}")
        k = int(np.floor(pos))
        w = pos - k
        if k >= g.n_steps:
            return self.covectors[g.n_steps].copy()
        return (1.0 - w) * self.right[k] + w * self.covectors[k + 1]


@dataclass(frozen=True)
class GradientBundle:
    d_theta: np.ndarray
    d_tau: float
    d_x0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_theta", np.atleast_1d(np.asarray(self.d_theta, dtype=float)))
        object.__setattr__(self, "d_x0", np.atleast_1d(np.asarray(self.d_x0, dtype=float)))
        object.__setattr__(self, "d_tau", float(self.d_tau))
        if not np.isfinite(self.as_vector()).all():
            raise BlowUpError("non-finite gradient component")

    def as_vector(self) -> np.ndarray:
        """[d_theta..., d_tau, d_x0...]"""
        return np.concatenate([self.d_theta, [self.d_tau], self.d_x0])

    def labels(self) -> list[str]:
        return (
            [f"theta{i + 1}" for i in range(self.d_theta.size)]
            + ["tau"]
            + [f"x0_{i}" for i in range(self.d_x0.size)]
        )

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(
            self.d_theta + other.d_theta, self.d_tau + other.d_tau, self.d_x0 + other.d_x0
        )

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle(c * self.d_theta, c * self.d_tau, c * self.d_x0)

    @classmethod
    def zeros(cls, d: int, n: int) -> "GradientBundle":
        return cls(np.zeros(d), 0.0, np.zeros(n))


class Linearization:
    """Jacobians of f along one forward trajectory, shared by all backward solves.

    ``adv_*`` arrays cover the nodes k with t_k + tau < T and hold quantities at
    the advanced time t_k + tau.
    """

    def __init__(self, model, theta, tau: float, forward: Trajectory):
        self.model = model
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.tau = float(tau)
        self.forward = forward
        grid = forward.grid
        self.n_steps = grid.n_steps
        self.dt = grid.dt
        self.base, self.frac = delay_offset(self.tau, grid.dt)

        xs = forward.states
        ys = lagged_values(forward, self.tau)
        self.lagged = ys
        with np.errstate(over="ignore", invalid="ignore"):
            self.f = model.batch("rhs", xs, ys, self.theta)
            self.jx = model.batch("d_rhs_dx", xs, ys, self.theta)
            self.jy = model.batch("d_rhs_dy", xs, ys, self.theta)
            self.jtheta = model.batch("d_rhs_dtheta", xs, ys, self.theta)

            # Nodes whose advanced time t_k + tau lies strictly before T.
            k = np.arange(self.n_steps + 1)
            m = k + self.base
            self.n_adv = int(np.count_nonzero(m < self.n_steps))
            ka = k[: self.n_adv]
            ma = m[: self.n_adv]
            if self.frac == 0.0:
                x_adv = xs[ma]
            else:
                x_adv = (1.0 - self.frac) * xs[ma] + self.frac * xs[ma + 1]
            self.adv_jy = model.batch("d_rhs_dy", x_adv, xs[ka], self.theta)
        for name in ("f", "jx", "jy", "jtheta", "adv_jy"):
            if not np.isfinite(getattr(self, name)).all():
                raise BlowUpError(f"non-finite model Jacobian ({name}) along the trajectory")

    def advanced(self, covectors: np.ndarray, right: np.ndarray, k: int) -> np.ndarray:
        """p(t_k + tau) from a (partially) solved path; zero once t_k + tau >= T."""
        m = k + self.base
        if m >= self.n_steps:
            return np.zeros(covectors.shape[1])
        if self.frac == 0.0:
            return right[m]
        return (1.0 - self.frac) * right[m] + self.frac * covectors[m + 1]

    def advanced_all(self, adjoint: AdjointPath) -> np.ndarray:
        """p(t_k + tau) for every k < n_adv, vectorized."""
        m = np.arange(self.n_adv) + self.base
        if self.frac == 0.0:
            return adjoint.right[m]
        return (1.0 - self.frac) * adjoint.right[m] + self.frac * adjoint.covectors[m + 1]


def _check_forward(lin: Linearization, forward: Trajectory, grid: TimeGrid | None) -> None:
    if grid is not None and grid != forward.grid:
        raise ConfigurationError("adjoint grid does not match the forward trajectory grid")
    if lin.forward is not forward:
        raise ConfigurationError("linearization was built for a different trajectory")


def _backward(lin: Linearization, terminal: np.ndarray, jumps: np.ndarray | None = None,
              running_cost_grad: Callable | None = None) -> AdjointPath:
    n_steps, dt, n = lin.n_steps, lin.dt, lin.forward.dim
    cov = np.zeros((n_steps + 1, n))
    right = np.zeros((n_steps + 1, n))
    cov[n_steps] = terminal
    times = lin.forward.times
    xs = lin.forward.states
    jx, adv_jy = lin.jx, lin.adv_jy
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps, 0, -1):
            p = cov[k]
            slope = p @ jx[k]
            if k < lin.n_adv:
                slope = slope + lin.advanced(cov, right, k) @ adv_jy[k]
            if running_cost_grad is not None:
                slope = slope + np.asarray(running_cost_grad(times[k], xs[k]), dtype=float)
            p_prev = p + dt * slope
            if not np.isfinite(p_prev).all():
                raise BlowUpError(f"non-finite adjoint at step {k - 1}", step=k - 1)
            right[k - 1] = p_prev
            cov[k - 1] = p_prev if jumps is None else p_prev + jumps[k - 1]
    return AdjointPath(lin.forward.grid, cov, right)


def solve_adjoint(model, theta, tau, forward: Trajectory, terminal,
                  running_cost_grad: Callable | None = None, *, grid: TimeGrid | None = None,
                  linearization: Linearization | None = None) -> AdjointPath:
    """Integrate the adjoint from p(T) = ``terminal`` down to t = 0.

    ``running_cost_grad(t, x)`` returns dl/dx at a node when the loss has an
    integral term.
    """
    lin = linearization or Linearization(model, theta, tau, forward)
    _check_forward(lin, forward, grid)
    terminal = np.atleast_1d(np.asarray(terminal, dtype=float))
    if terminal.shape != (forward.dim,):
        raise ConfigurationError(
            f"terminal covector has shape {terminal.shape}, expected ({forward.dim},)"
        )
    return _backward(lin, terminal, running_cost_grad=running_cost_grad)


def sensitivity_x0(adjoint: AdjointPath) -> np.ndarray:
    """dx(T)/dx(0) paired with the terminal covector: the adjoint at t = 0."""
    return adjoint.covectors[0].copy()


def sensitivity_x0_total(model, theta, tau, forward, adjoint, *, linearization=None) -> np.ndarray:
    """Derivative when the whole constant history moves with x0.

    Adds int_0^tau p(t) Df_y(x(t), x0) dt to p(0), the contribution of the
    lagged argument reading the history.
    """
    lin = linearization or Linearization(model, theta, tau, forward)
    k = min(lin.base + 1, lin.n_steps)  # nodes whose lagged value is the history
    return adjoint.covectors[0] + lin.dt * np.einsum(
        "kn,knm->m", adjoint.right[:k], lin.jy[:k]
    )


def sensitivity_theta(model, theta, tau, forward, adjoint, *, linearization=None) -> np.ndarray:
    lin = linearization or Linearization(model, theta, tau, forward)
    n = lin.n_steps
    return lin.dt * np.einsum("kn,knd->d", adjoint.right[:n], lin.jtheta[:n])


def sensitivity_tau(model, theta, tau, forward, adjoint, *, linearization=None) -> float:
    """Minus the left Riemann sum of p(t+tau) Df_y(x(t+tau), x(t)) f(x(t), y(t))."""
    lin = linearization or Linearization(model, theta, tau, forward)
    if lin.n_adv == 0:
        return 0.0
    p_adv = lin.advanced_all(adjoint)
    return float(
        -lin.dt * np.einsum("kn,knm,km->", p_adv, lin.adv_jy, lin.f[: lin.n_adv])
    )


def _bundle(lin: Linearization, adjoint: AdjointPath) -> GradientBundle:
    m, th, tau, fw = lin.model, lin.theta, lin.tau, lin.forward
    return GradientBundle(
        sensitivity_theta(m, th, tau, fw, adjoint, linearization=lin),
        sensitivity_tau(m, th, tau, fw, adjoint, linearization=lin),
        sensitivity_x0_total(m, th, tau, fw, adjoint, linearization=lin),
    )


def terminal_sensitivities(model, theta, tau, forward: Trajectory) -> list[GradientBundle]:
    """d x^i(T) / d(theta, tau, x0) for each component i, one backward solve each."""
    lin = Linearization(model, theta, tau, forward)
    out = []
    for i in range(forward.dim):
        e = np.zeros(forward.dim)
        e[i] = 1.0
        out.append(_bundle(lin, _backward(lin, e)))
    return out


def loss_gradient_discrete(model, theta, tau, forward: Trajectory, data: DataSet) -> GradientBundle:
    """Gradient of sum_j ||X_j - x(t_j)||^2 with respect to theta, tau and x0.

    Uses one backward pass per state component regardless of the number of
    data points: the residual weights -2 (X_j^i - x^i(t_j)) enter as jumps of
    the adjoint at the data nodes, which by linearity equals summing a fresh
    solve from every t_j.
    """
    idx, r = residuals(forward, data)
    lin = Linearization(model, theta, tau, forward)
    n_steps = lin.n_steps
    total = GradientBundle.zeros(lin.theta.size, forward.dim)
    for i in range(forward.dim):
        jumps = np.zeros((n_steps + 1, forward.dim))
        np.add.at(jumps[:, i], idx, -2.0 * r[:, i])
        adj = _backward(lin, jumps[n_steps], jumps)
        total = total + _bundle(lin, adj)
    return total


def loss_gradient_per_datum(model, theta, tau, forward: Trajectory, data: DataSet) -> GradientBundle:
    """Reference for loss_gradient_discrete: a fresh backward solve from every t_j.

    Costs n * N_data solves; kept for verification.
    """
    idx, r = residuals(forward, data)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n = forward.dim
    total = GradientBundle.zeros(theta.size, n)
    for j, m in enumerate(idx):
        if m == 0:
            # x(0) = x0 does not depend on theta or tau.
            total = total + GradientBundle(np.zeros(theta.size), 0.0, -2.0 * r[j])
            continue
        sub = forward.truncated(int(m))
        lin = Linearization(model, theta, tau, sub)
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            total = total + _bundle(lin, _backward(lin, e)).scaled(-2.0 * r[j, i])
    return total


def loss_gradient_shifted(model, theta, tau, forward: Trajectory, data: DataSet) -> GradientBundle:
    """Time-shift reuse: the adjoint for x^i(t_j) taken as p_i(T - t_j + t).

    Exact only when Df_x and Df_y are constant along the trajectory (e.g. the
    linear model). For state-dependent Jacobians the shifted path integrates
    the wrong coefficients and the result is biased; use
    loss_gradient_discrete instead.
    """
    idx, r = residuals(forward, data)
    lin = Linearization(model, theta, tau, forward)
    N, dt, n = lin.n_steps, lin.dt, forward.dim
    total = GradientBundle.zeros(lin.theta.size, n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        p = _backward(lin, e)
        for j, m in enumerate(idx):
            m = int(m)
            c = -2.0 * r[j, i]
            if m == 0:
                total = total + GradientBundle(np.zeros(lin.theta.size), 0.0, c * e)
                continue
            shift = N - m
            ps = p.right[shift: shift + m]
            d_theta = dt * np.einsum("kn,knd->d", ps, lin.jtheta[:m])
            # advanced nodes within [0, t_j): k + base + (frac > 0) <= m - 1 + ...
            k_adv = np.arange(lin.n_adv)
            k_adv = k_adv[k_adv + lin.base < m]
            mm = k_adv + lin.base + shift
            if lin.frac == 0.0:
                p_adv = p.right[mm]
            else:
                p_adv = (1.0 - lin.frac) * p.right[mm] + lin.frac * p.covectors[mm + 1]
            d_tau = -dt * np.einsum("kn,knm,km->", p_adv, lin.adv_jy[k_adv], lin.f[k_adv])
            kh = min(lin.base + 1, m)
            d_x0 = p.covectors[shift] + dt * np.einsum("kn,knm->m", ps[:kh], lin.jy[:kh])
            total = total + GradientBundle(d_theta, d_tau, d_x0).scaled(c)
    return total


def loss_gradient_general(model, theta, tau, forward: Trajectory,
                          running_cost_grad: Callable | None,
                          terminal_cost_grad: Callable | None) -> GradientBundle:
    """Gradient of int_0^T l(x) dt + g(x(T)) from a single adjoint solve.

    ``running_cost_grad(t, x)`` -> dl/dx, ``terminal_cost_grad(x)`` -> dg/dx;
    either may be None for a zero cost.
    """
    lin = Linearization(model, theta, tau, forward)
    if terminal_cost_grad is None:
        terminal = np.zeros(forward.dim)
    else:
        terminal = np.atleast_1d(np.asarray(terminal_cost_grad(forward.states[-1]), dtype=float))
    if terminal.shape != (forward.dim,):
        raise ConfigurationError(f"terminal cost gradient has shape {terminal.shape}")
    adj = _backward(lin, terminal, running_cost_grad=running_cost_grad)
    return _bundle(lin, adj)
