"""Propensity-score weighting with exact covariate balance inside pre-specified subgroups."""

__version__ = "0.1.0"

from .baselines import fit_cbps, fit_gsbps, fit_logistic, fit_logistic_s
from .data import ColumnRoles, Dataset, DesignMatrix, Estimand, build_design, design_for, load_csv, reduce_design
from .diagnostics import BalanceReport, balance_report, diagnostic_matrix, parse_transforms, standardized_difference
from .effects import EffectEstimate, all_effects, hajek_difference, ipw_effect
from .exceptions import (CollinearDesignError, ConvergenceError, DataError, GSBPSError, NumericalError,
                         SeparationError)
from .kernel import KernelFeatures, bandwidth_grid, gaussian_kernel, kpca_features
from .loss import LossEval, balance_residual, balance_weights, bernoulli_eval, cbsr_eval, propensity
from .solver import PropensityFit, SolverSettings, gmm_objective, solve
from .tuner import KernelSettings, TuneResult, fit_kgsbps, select_candidate, tune_kgsbps
from .simulation import Scenario, ScenarioResult, generate, run_monte_carlo

__all__ = [name for name in dir() if not name.startswith("_")]
