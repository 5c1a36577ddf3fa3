"""Trajectory-matching loss sum_j ||X_j - x(t_j)||^2 and synthetic data generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dde import TimeGrid, Trajectory, solve_forward
from .errors import ConfigurationError, OutOfRangeError

# Data times must sit within this fraction of dt from a grid node.
DATA_SNAP = 1e-9


@dataclass(frozen=True)
class DataSet:
    """Measurements X_j at strictly increasing times t_j, with t_0 = 0.

    X_0 doubles as the constant initial history of the model being fitted.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or len(values) != len(times):
            raise ConfigurationError(
                f"{len(times)} times but values of shape {values.shape}"
            )
        if len(times) < 2:
            raise ConfigurationError("a dataset needs at least two points")
        if not (np.isfinite(times).all() and np.isfinite(values).all()):
            raise ConfigurationError("dataset contains non-finite entries")
        if times[0] != 0.0:
            raise ConfigurationError(f"first data time must be 0, got {float(times[0])!r}")
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("data times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def x0(self) -> np.ndarray:
        return self.values[0].copy()


@dataclass(frozen=True)
class LossValue:
    total: float
    per_point: np.ndarray


def data_node_indices(grid: TimeGrid, times) -> np.ndarray:
    """Grid node index of each data time; errors name the first offending time."""
    idx = np.empty(len(times), dtype=int)
    for j, t in enumerate(float(v) for v in times):
        if t > grid.t_end + DATA_SNAP * grid.dt:
            raise OutOfRangeError(f"data time t_{j}={t!r} beyond the horizon {grid.t_end!r}")
        pos = (t - grid.t_start) / grid.dt
        k = int(round(pos))
        if abs(pos - k) > DATA_SNAP:
            raise ConfigurationError(
                f"data time t_{j}={t!r} is not on the solver grid (dt={grid.dt!r})"
            )
        idx[j] = k
    return idx


def residuals(forward: Trajectory, data: DataSet) -> tuple[np.ndarray, np.ndarray]:
    """(node indices, X_j - x(t_j)) for every data point."""
    if data.dim != forward.dim:
        raise ConfigurationError(f"data dimension {data.dim} != state dimension {forward.dim}")
    idx = data_node_indices(forward.grid, data.times)
    return idx, data.values - forward.states[idx]


def loss_discrete(forward: Trajectory, data: DataSet) -> LossValue:
    _, r = residuals(forward, data)
    per_point = np.sum(r * r, axis=1)
    return LossValue(float(np.sum(per_point)), per_point)


def sample_dataset(model, theta, tau, x0, grid: TimeGrid, sample_every: int = 1) -> DataSet:
    """Every ``sample_every``-th node of the forward solution, starting at t = 0."""
    if sample_every < 1:
        raise ConfigurationError(f"sample_every must be >= 1, got {sample_every}")
    traj = solve_forward(model, theta, tau, x0, grid)
    return DataSet(traj.times[::sample_every], traj.states[::sample_every])
