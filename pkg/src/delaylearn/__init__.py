"""Learning the delay and parameters of a delay differential equation with adjoint gradients."""

from .adjoint import (
    AdjointPath,
    GradientBundle,
    loss_gradient_discrete,
    loss_gradient_general,
    sensitivity_tau,
    sensitivity_theta,
    sensitivity_x0,
    solve_adjoint,
)
from .dde import TimeGrid, Trajectory, history_lookup, solve_forward, solve_forward_reference
from .errors import BlowUpError, ConfigurationError, FitError, OracleError, OutOfRangeError
from .loss import DataSet, LossValue, loss_discrete, sample_dataset
from .models import ModelSpec, linear_model, logistic_model, model_from_rhs_fd
from .optimize import AdamState, FitConfig, FitResult, adam_step, fit, scan_landscape
from .oracle import GradCheckReport, fd_loss_gradient, gradcheck

__version__ = "0.1.0"
