"""Comparison propensity models: pooled logistic, per-subgroup logistic, CBPS.

Also hosts ``fit_gsbps``, the parametric subgroup-balancing fit, since it
only differs from CBPS by the interaction columns of its design.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .data import Dataset, Estimand, design_for
from .exceptions import DataError, SeparationError
from .loss import balance_weights
from .solver import PropensityFit, SolverSettings, solve


def fit_logistic(dataset: Dataset, estimand="ATE", settings: Optional[SolverSettings] = None) -> PropensityFit:
    """Maximum-likelihood logistic fit on main effects ``[1, S, Z]``."""
    X = design_for(dataset, interactions=False)
    return solve(dataset.treatment, X, estimand, settings, objective="likelihood")


def fit_cbps(dataset: Dataset, estimand="ATE", settings: Optional[SolverSettings] = None) -> PropensityFit:
    """Just-identified CBPS: exact overall balance of ``[1, S, Z]``."""
    return solve(dataset.treatment, design_for(dataset, interactions=False), estimand, settings)


def fit_gsbps(dataset: Dataset, estimand="ATE", settings: Optional[SolverSettings] = None) -> PropensityFit:
    """Exact overall and subgroup balance of ``[1, S, Z, S x Z]``."""
    return solve(dataset.treatment, design_for(dataset), estimand, settings)


def fit_logistic_s(dataset: Dataset, estimand="ATE", settings: Optional[SolverSettings] = None) -> PropensityFit:
    """Separate logistic MLE on ``[1, Z]`` inside each subgroup.

    Subgroups must partition the sample: every unit in exactly one.
    """
    estimand = Estimand.parse(estimand)
    S = dataset.subgroups
    if dataset.n_subgroups == 0 or np.any(S.sum(axis=1) != 1):
        raise DataError("overlapping subgroups: logistic_s needs every unit in exactly one subgroup")
    T, Z = dataset.treatment, dataset.covariates
    p = np.empty(dataset.n)
    thetas, names = [], []
    iterations, crit = 0, 0.0
    for k, sname in enumerate(dataset.subgroup_names):
        rows = S[:, k] == 1
        if T[rows].sum() < 1 or T[rows].sum() > rows.sum() - 1:
            raise SeparationError(f"separation/unbounded: subgroup {sname} has an empty arm")
        Zk = Z[rows]
        keep = np.ptp(Zk, axis=0) > 0
        Xk = np.hstack([np.ones((rows.sum(), 1)), Zk[:, keep]])
        fit = solve(T[rows], Xk, estimand, settings, objective="likelihood")
        p[rows] = fit.propensities
        thetas.append(fit.theta)
        names += [f"{sname}:(intercept)"] + [f"{sname}:{n}" for n, kept in zip(dataset.covariate_names, keep) if kept]
        iterations += fit.iterations
        crit = max(crit, fit.final_score_norm)
    w1, w0 = balance_weights(p, estimand)
    return PropensityFit(np.concatenate(thetas), p, w1, w0, estimand, True, iterations, crit,
                         "newton_mle", tuple(names))
