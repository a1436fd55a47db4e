"""WDRO estimators for generalized linear models and their first-order bias adjustment."""
from .debias import (
    AdjustResult,
    NewtonOptions,
    K_n,
    adjust_closed_form_linear,
    adjust_newton,
    adjust_special_case,
    empirical_C,
    empirical_H,
    empirical_curvature,
    empirical_curvature_fn,
    existence_check,
    invert_F_bisection,
    isotropic_linear_curvature_fn,
    population_curvature_mc,
)
from .dual import FitResult, WdroConfig, fit_dro, fit_erm, inner_sup, robust_loss, robust_loss_linear_closed_form
from .errors import *  # noqa: F401,F403
from .models import Dataset, GlmModel, ModelKind, d2loss_dt2, dloss_dt, grad_beta, grad_x, hess_beta, loss
from .simulate import ExperimentConfig, ExperimentReport, Record, amse_summary, bias_summary, run_experiment
from .synthetic import DistributionSpec, generate_linear, generate_logistic, generate_poisson

__version__ = "0.1.0"
