"""Adam and the training loop that learns (theta, tau) from a DataSet."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .adjoint import loss_gradient_discrete
from .dde import TimeGrid, solve_forward
from .errors import BlowUpError, ConfigurationError, FitError
from .loss import DataSet, loss_discrete

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_BLOWUPS = 5


@dataclass(frozen=True)
class AdamState:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0

    def __post_init__(self):
        if self.lr < 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1) or self.epsilon <= 0:
            raise ConfigurationError(
                f"bad Adam hyperparameters lr={self.lr}, betas=({self.beta1}, {self.beta2}), "
                f"epsilon={self.epsilon}"
            )


def adam_step(state: AdamState, params, grad) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and parameters."""
    params = np.asarray(params, dtype=float)
    g = np.asarray(grad, dtype=float)
    if g.shape != params.shape:
        raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {params.shape}")
    if not np.isfinite(g).all():
        raise FitError(f"non-finite gradient {g.tolist()}")
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    t = state.step_count + 1
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, m=m, v=v, step_count=t), new_params


@dataclass
class FitConfig:
    """Training settings. ``theta_init`` / ``tau_init`` of None draw from U(-2, 2)
    (tau conditioned positive). ``tau_bounds`` of None means [2 dt, T/2]."""

    grid: TimeGrid
    theta_init: Sequence[float] | None = None
    tau_init: float | None = None
    max_epochs: int = 500
    loss_threshold: float = 0.01
    tau_bounds: tuple[float, float] | None = None
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.loss_threshold >= 0:
            raise ConfigurationError(f"loss_threshold must be >= 0, got {self.loss_threshold}")
        if self.tau_bounds is None:
            self.tau_bounds = (2.0 * self.grid.dt, self.grid.t_end / 2.0)
        lo, hi = (float(b) for b in self.tau_bounds)
        if lo < self.grid.dt or hi < lo:
            raise ConfigurationError(
                f"tau bounds {self.tau_bounds} must satisfy dt <= tau_min <= tau_max"
            )
        self.tau_bounds = (lo, hi)
        # Validate the Adam settings eagerly.
        AdamState(self.lr, self.beta1, self.beta2, self.epsilon)


@dataclass
class FitResult:
    theta: np.ndarray
    tau: float
    final_loss: float
    epochs_used: int
    converged: bool
    loss_history: list[float] = field(default_factory=list)
    iterate_history: list[tuple[list[float], float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta],
            "tau": float(self.tau),
            "final_loss": float(self.final_loss),
            "epochs_used": int(self.epochs_used),
            "converged": bool(self.converged),
            "loss_history": [float(v) for v in self.loss_history],
            "iterate_history": [
                {"theta": [float(v) for v in th], "tau": float(t)} for th, t in self.iterate_history
            ],
        }


def initial_iterate(model, config: FitConfig, seed: int) -> tuple[np.ndarray, float]:
    rng = np.random.default_rng(seed)
    if config.theta_init is None:
        theta = rng.uniform(-2.0, 2.0, size=model.dim_theta)
    else:
        theta = np.atleast_1d(np.asarray(config.theta_init, dtype=float)).copy()
        if theta.size != model.dim_theta:
            raise ConfigurationError(
                f"theta_init has {theta.size} entries, model {model.name!r} expects {model.dim_theta}"
            )
    tau = rng.uniform(0.0, 2.0) if config.tau_init is None else float(config.tau_init)
    lo, hi = config.tau_bounds
    return theta, min(max(tau, lo), hi)


def fit(model, data: DataSet, config: FitConfig, seed: int = 0) -> FitResult:
    """Learn theta and tau by Adam on the adjoint gradient of the discrete loss.

    Each epoch solves forward from the first measurement, evaluates the loss,
    stops once it is at or below ``loss_threshold``, otherwise takes one joint
    Adam step on (theta, tau) and clamps tau into ``tau_bounds``. An iterate
    whose forward solve blows up is pulled halfway back toward the previous
    one; five failures in a row abort with FitError.
    """
    theta, tau = initial_iterate(model, config, seed)
    lo, hi = config.tau_bounds
    d = theta.size
    adam = AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    params = np.append(theta, tau)
    prev = params.copy()
    losses: list[float] = []
    iterates: list[tuple[list[float], float]] = []
    failures = 0
    converged = False
    last_ok = None

    for epoch in range(1, config.max_epochs + 1):
        th, ta = params[:d].copy(), float(params[d])
        iterates.append((th.tolist(), ta))
        try:
            forward = solve_forward(model, th, ta, data.x0, config.grid)
            with np.errstate(over="ignore"):
                loss = loss_discrete(forward, data).total
            if not math.isfinite(loss):
                raise BlowUpError("loss overflowed")
        except BlowUpError as exc:
            failures += 1
            losses.append(math.inf)
            logger.info("epoch %d: blow-up at step %s, backing off", epoch, exc.step)
            if failures >= MAX_CONSECUTIVE_BLOWUPS:
                raise FitError(
                    f"{failures} consecutive blow-ups; last iterate theta={th.tolist()}, tau={ta}"
                ) from exc
            params = 0.5 * (params + prev)
            continue
        failures = 0
        losses.append(loss)
        last_ok = (th, ta, loss)
        logger.debug("epoch %d: loss=%.6g theta=%s tau=%.6g", epoch, loss, th, ta)
        if loss <= config.loss_threshold:
            converged = True
            break
        grad = loss_gradient_discrete(model, th, ta, forward, data)
        prev = params.copy()
        adam, params = adam_step(adam, params, np.append(grad.d_theta, grad.d_tau))
        params[d] = min(max(params[d], lo), hi)

    if last_ok is None:
        raise FitError("no epoch produced a finite trajectory")
    th, ta, loss = last_ok
    return FitResult(th, ta, loss, len(losses), converged, losses, iterates)


def _coordinate(name: str, d: int) -> int:
    """Index into the (theta_1..theta_d, tau) vector for a coordinate name."""
    if name == "tau":
        return d
    if name.startswith("theta") and name[5:].isdigit() and 1 <= int(name[5:]) <= d:
        return int(name[5:]) - 1
    raise ConfigurationError(f"unknown coordinate {name!r}; use theta1..theta{d} or tau")


@dataclass(frozen=True)
class Landscape:
    names: tuple[str, ...]
    coords: tuple[np.ndarray, ...]
    values: np.ndarray

    def argmin(self) -> tuple[float, ...]:
        """Coordinates of the smallest loss."""
        idx = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return tuple(float(c[i]) for c, i in zip(self.coords, idx))

    def rows(self):
        """(coordinate..., loss) tuples in C order."""
        for idx in np.ndindex(*self.values.shape):
            yield tuple(float(c[i]) for c, i in zip(self.coords, idx)) + (float(self.values[idx]),)


def scan_landscape(model, data: DataSet, axes: Mapping[str, Sequence[float]],
                   frozen: Mapping[str, float], grid: TimeGrid) -> Landscape:
    """Loss on the Cartesian product of ``axes``; other coordinates come from ``frozen``.

    Blown-up solves are recorded as +inf.
    """
    d = model.dim_theta
    names = tuple(axes)
    if not names:
        raise ConfigurationError("scan needs at least one axis")
    coords = tuple(np.asarray(axes[k], dtype=float).ravel() for k in names)
    if any(c.size == 0 for c in coords):
        raise ConfigurationError("scan axes must be nonempty")
    base = np.full(d + 1, np.nan)
    for k, v in frozen.items():
        if k not in axes:
            base[_coordinate(k, d)] = float(v)
    scan_idx = [_coordinate(k, d) for k in names]
    missing = [i for i in range(d + 1) if np.isnan(base[i]) and i not in scan_idx]
    if missing:
        raise ConfigurationError(f"coordinates {missing} are neither scanned nor frozen")
    tau_vals = coords[names.index("tau")] if "tau" in names else [base[d]]
    if min(tau_vals) < grid.dt:
        raise ConfigurationError(f"scan reaches tau={float(min(tau_vals))!r} below dt={grid.dt!r}")

    values = np.empty(tuple(c.size for c in coords))
    for idx in np.ndindex(*values.shape):
        p = base.copy()
        for axis, (i, c) in enumerate(zip(scan_idx, coords)):
            p[i] = c[idx[axis]]
        try:
            forward = solve_forward(model, p[:d], p[d], data.x0, grid)
            with np.errstate(over="ignore"):
                values[idx] = loss_discrete(forward, data).total
        except BlowUpError:
            values[idx] = math.inf
    return Landscape(names, coords, values)
