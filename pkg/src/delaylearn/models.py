"""Parameterized right-hand sides f_theta(x, y) with their partial derivatives.

Every model carries ``rhs``, ``d_rhs_dx``, ``d_rhs_dy`` and ``d_rhs_dtheta``
evaluated at a single point (x, y are length-n vectors, theta length-d). The
adjoint solver consumes the Jacobians pointwise along a trajectory, so models
flagged ``vectorized`` also accept stacked inputs of shape (m, n) and return
(m, n), (m, n, n) and (m, n, d) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

FD_STEP = 1e-6


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dim_state: int
    dim_theta: int
    rhs: Callable
    d_rhs_dx: Callable
    d_rhs_dy: Callable
    d_rhs_dtheta: Callable
    vectorized: bool = False

    def batch(self, which: str, xs: np.ndarray, ys: np.ndarray, theta) -> np.ndarray:
        """Evaluate ``which`` (one of the four callables) at every row of xs, ys."""
        fn = getattr(self, which)
        theta = np.asarray(theta, dtype=float)
        if self.vectorized:
            return np.asarray(fn(xs, ys, theta), dtype=float)
        return np.array([fn(x, y, theta) for x, y in zip(xs, ys)], dtype=float)


# The built-in benchmarks are scalar; written with trailing-axis indexing so they
# broadcast over stacked (m, 1) inputs.


def _logistic_rhs(x, y, theta):
    return theta[0] * x * (1.0 - theta[1] * y)


def _logistic_dx(x, y, theta):
    return (theta[0] * (1.0 - theta[1] * y))[..., None]


def _logistic_dy(x, y, theta):
    return (-theta[0] * theta[1] * x)[..., None]


def _logistic_dtheta(x, y, theta):
    return np.stack([x * (1.0 - theta[1] * y), -theta[0] * x * y], axis=-1)


def logistic_model() -> ModelSpec:
    """f(x, y) = theta_1 x (1 - theta_2 y), the delayed logistic growth benchmark."""
    return ModelSpec(
        "logistic", 1, 2, _logistic_rhs, _logistic_dx, _logistic_dy, _logistic_dtheta,
        vectorized=True,
    )


def _linear_rhs(x, y, theta):
    return theta[0] * x + theta[1] * y


def _linear_dx(x, y, theta):
    return np.full(np.shape(x) + (1,), theta[0], dtype=float)


def _linear_dy(x, y, theta):
    return np.full(np.shape(y) + (1,), theta[1], dtype=float)


def _linear_dtheta(x, y, theta):
    return np.stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)], axis=-1)


def linear_model() -> ModelSpec:
    """f(x, y) = theta_1 x + theta_2 y, the delayed exponential decay benchmark."""
    return ModelSpec(
        "linear", 1, 2, _linear_rhs, _linear_dx, _linear_dy, _linear_dtheta, vectorized=True
    )


def _central_jacobian(fn, z, h):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        cols.append((np.asarray(fn(z + e)) - np.asarray(fn(z - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def model_from_rhs_fd(rhs: Callable, n: int, d: int, fd_step: float = FD_STEP,
                      name: str = "custom") -> ModelSpec:
    """Wrap a bare ``rhs(x, y, theta)`` with central-difference Jacobians."""

    def f(x, y, theta):
        return np.atleast_1d(np.asarray(rhs(x, y, theta), dtype=float))

    def dx(x, y, theta):
        return _central_jacobian(lambda z: f(z, y, theta), x, fd_step)

    def dy(x, y, theta):
        return _central_jacobian(lambda z: f(x, z, theta), y, fd_step)

    def dtheta(x, y, theta):
        return _central_jacobian(lambda z: f(x, y, z), theta, fd_step)

    return ModelSpec(name, n, d, f, dx, dy, dtheta)


def zero_model(n: int = 1, d: int = 1) -> ModelSpec:
    """f = 0; every trajectory is constant. Handy as a degenerate test case."""
    return ModelSpec(
        "zero", n, d,
        lambda x, y, th: np.zeros(np.shape(x)),
        lambda x, y, th: np.zeros(np.shape(x) + (n,)),
        lambda x, y, th: np.zeros(np.shape(x) + (n,)),
        lambda x, y, th: np.zeros(np.shape(x) + (d,)),
        vectorized=True,
    )


MODELS = {"logistic": logistic_model, "linear": linear_model}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
