"""Forward Euler integration of x'(t) = f(x(t), x(t - tau)) with constant history.

The grid always starts at t = 0. Lagged values that fall between grid nodes are
linearly interpolated from the states already computed; lagged times at or
before zero read the constant history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConfigurationError, OutOfRangeError

# Relative tolerance (in units of dt) under which a time is treated as a node.
NODE_SNAP = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with ``n_steps`` Euler steps of size ``dt``."""

    t_end: float
    dt: float
    t_start: float = 0.0
    n_steps: int = field(init=False)

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and math.isfinite(self.dt)):
            raise ConfigurationError("grid bounds must be finite")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.t_start != 0.0:
            raise ConfigurationError("grids start at t = 0")
        span = self.t_end - self.t_start
        if span <= 0:
            raise ConfigurationError(f"t_end must exceed t_start, got {self.t_end}")
        n = int(round(span / self.dt))
        if n < 1 or abs(n * self.dt - span) >= 1e-12 * self.t_end:
            raise ConfigurationError(
                f"dt={self.dt!r} does not divide the horizon {span!r} into whole steps"
            )
        object.__setattr__(self, "n_steps", n)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def node_index(self, t: float, tol: float = NODE_SNAP) -> int:
        """Index of the node at time ``t``; raises if ``t`` is not within ``tol*dt`` of one."""
        if t < self.t_start - tol * self.dt or t > self.t_end + tol * self.dt:
            raise OutOfRangeError(f"time {float(t)!r} outside [{self.t_start}, {self.t_end}]")
        pos = (t - self.t_start) / self.dt
        k = int(round(pos))
        if abs(pos - k) > tol:
            raise ConfigurationError(f"time {float(t)!r} is not on the grid (dt={self.dt!r})")
        return k

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(t_end=self.t_end, dt=self.dt / factor, t_start=self.t_start)

    def truncated(self, n_steps: int) -> "TimeGrid":
        """Grid with the same step ending at node ``n_steps``."""
        if not 1 <= n_steps <= self.n_steps:
            raise OutOfRangeError(f"cannot truncate {self.n_steps}-step grid to {n_steps}")
        return TimeGrid(t_end=self.t_start + n_steps * self.dt, dt=self.dt, t_start=self.t_start)


@dataclass(frozen=True)
class Trajectory:
    """Solved states on ``grid``; ``states[k]`` is x(t_k), ``states[0]`` is ``x0``.

    ``history`` is the constant value of x on [-tau, 0). It is ``None`` in the
    usual case where it equals ``x0``; the finite-difference oracle sets it to
    perturb the initial point alone.
    """

    grid: TimeGrid
    states: np.ndarray
    x0: np.ndarray
    history: np.ndarray | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if states.ndim == 1:
            states = states[:, None]
        if states.shape != (self.grid.n_steps + 1, x0.size):
            raise ConfigurationError(
                f"expected states of shape {(self.grid.n_steps + 1, x0.size)}, got {states.shape}"
            )
        if not np.isfinite(states).all():
            bad = int(np.argmin(np.isfinite(states).all(axis=1)))
            raise BlowUpError(f"non-finite state at step {bad}", step=bad)
        if not np.array_equal(states[0], x0):
            raise ConfigurationError("states[0] must equal x0")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "x0", x0)
        if self.history is not None:
            object.__setattr__(
                self, "history", np.atleast_1d(np.asarray(self.history, dtype=float))
            )

    @property
    def dim(self) -> int:
        return self.x0.size

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def history_value(self) -> np.ndarray:
        return self.x0 if self.history is None else self.history

    def truncated(self, n_steps: int) -> "Trajectory":
        """Prefix of the trajectory ending at node ``n_steps``."""
        return Trajectory(
            self.grid.truncated(n_steps), self.states[: n_steps + 1], self.x0, self.history
        )


@dataclass(frozen=True)
class DelayedState:
    current: np.ndarray
    lagged: np.ndarray


def delay_offset(tau: float, dt: float) -> tuple[int, float]:
    """Split tau/dt into an integer node count and a fractional remainder in [0, 1).

    Remainders within NODE_SNAP of a whole number are snapped so node-aligned
    delays read stored states exactly.
    """
    q = tau / dt
    r = round(q)
    if abs(q - r) <= NODE_SNAP * max(1.0, q):
        return int(r), 0.0
    base = math.floor(q)
    return base, q - base


def history_lookup(traj: Trajectory, t: float, tau: float) -> np.ndarray:
    """x(t - tau): the history value for t - tau <= 0, else linear interpolation."""
    grid = traj.grid
    if t < grid.t_start - NODE_SNAP * grid.dt or t > grid.t_end + NODE_SNAP * grid.dt:
        raise OutOfRangeError(f"query time {float(t)!r} outside [{grid.t_start}, {grid.t_end}]")
    pos = (t - tau - grid.t_start) / grid.dt
    if pos <= NODE_SNAP:
        return traj.history_value.copy()
    k = round(pos)
    if abs(pos - k) <= NODE_SNAP:
        return traj.states[k].copy()
    j = math.floor(pos)
    w = pos - j
    return (1.0 - w) * traj.states[j] + w * traj.states[j + 1]


def lagged_values(traj: Trajectory, tau: float) -> np.ndarray:
    """y(t_k) = x(t_k - tau) for every node, as used by the Euler recurrence."""
    base, frac = delay_offset(tau, traj.grid.dt)
    states = traj.states
    out = np.empty_like(states)
    n_hist = min(base + 1, len(states))  # nodes with t_k - tau <= 0
    out[:n_hist] = traj.history_value
    if n_hist < len(states):
        k = np.arange(n_hist, len(states))
        if frac == 0.0:
            out[n_hist:] = states[k - base]
        else:
            out[n_hist:] = frac * states[k - base - 1] + (1.0 - frac) * states[k - base]
    return out


def delayed_state(traj: Trajectory, k: int, tau: float) -> DelayedState:
    return DelayedState(traj.states[k].copy(), history_lookup(traj, traj.times[k], tau))


def _check_tau(tau: float, dt: float) -> None:
    if not math.isfinite(tau) or tau < dt * (1.0 - NODE_SNAP):
        raise ConfigurationError(f"tau={tau!r} must be at least the step dt={dt!r}")


def solve_forward(model, theta, tau: float, x0, grid: TimeGrid, *, history=None) -> Trajectory:
    """Explicit Euler: x_{k+1} = x_k + dt * f(x_k, x(t_k - tau)).

    ``history`` overrides the constant value on [-tau, 0) (defaults to ``x0``).
    Raises BlowUpError carrying the step index on the first non-finite state.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    tau = float(tau)
    _check_tau(tau, grid.dt)
    if not np.isfinite(x0).all():
        raise ConfigurationError("x0 must be finite")
    if x0.size != model.dim_state:
        raise ConfigurationError(f"x0 has dimension {x0.size}, model expects {model.dim_state}")
    hist = x0 if history is None else np.atleast_1d(np.asarray(history, dtype=float))

    n, dt = grid.n_steps, grid.dt
    base, frac = delay_offset(tau, dt)
    states = np.empty((n + 1, x0.size))
    states[0] = x0
    rhs = model.rhs
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            if k <= base:
                y = hist
            elif frac == 0.0:
                y = states[k - base]
            else:
                y = frac * states[k - base - 1] + (1.0 - frac) * states[k - base]
            x_next = states[k] + dt * np.asarray(rhs(states[k], y, theta), dtype=float)
            if not np.isfinite(x_next).all():
                raise BlowUpError(
                    f"non-finite state at step {k + 1} (t={(k + 1) * dt:.6g})", step=k + 1
                )
            states[k + 1] = x_next
    return Trajectory(grid, states, x0, None if history is None else hist)


def solve_forward_reference(
    model, theta, tau: float, x0, grid: TimeGrid, refinement: int = 16, *, history=None
) -> Trajectory:
    """Solve on ``grid`` refined ``refinement`` times and keep the coarse nodes."""
    if refinement < 2:
        raise ConfigurationError(f"refinement must be at least 2, got {refinement}")
    fine = solve_forward(model, theta, tau, x0, grid.refined(refinement), history=history)
    return Trajectory(grid, fine.states[::refinement], fine.x0, fine.history)
