"""Bandwidth selection for the kernelised subgroup-balancing fit.

Every candidate bandwidth gets its own kernel features, design and balance
fit. Balance is then scored on the raw covariates. The winner has the
smallest mean subgroup S/D among candidates whose worst overall S/D is
within the global threshold (10% by default).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .data import Dataset, Estimand, design_for
from .diagnostics import balance_report, format_value
from .exceptions import DataError, NumericalError
from .kernel import bandwidth_grid, kpca_features, gaussian_kernel, squared_distances, standardize_columns
from .solver import PropensityFit, SolverSettings, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelSettings:
    variance_threshold: float = 0.99
    standardize: bool = True
    n_bandwidths: int = 20
    quantiles: tuple = (0.1, 0.9)
    global_threshold: float = 10.0
    sigmas: Optional[Sequence[float]] = None
    grid_distance: str = "euclidean"


@dataclass
class Candidate:
    sigma: float
    l99: int = 0
    n_columns: int = 0
    mean_subgroup_sd: float = float("nan")
    max_global_sd: float = float("nan")
    converged: bool = False
    reason: str = ""
    fit: Optional[PropensityFit] = field(default=None, repr=False)

    def feasible(self, threshold: float) -> bool:
        return (self.converged and np.isfinite(self.mean_subgroup_sd)
                and np.isfinite(self.max_global_sd) and self.max_global_sd <= threshold)


@dataclass
class TuneResult:
    status: str
    chosen_sigma: Optional[float]
    per_candidate: List[Candidate]
    chosen: Optional[Candidate] = None

    def write_csv(self, path, precision: str = "6"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma", "l99", "n_columns", "mean_subgroup_sd", "max_global_sd",
                             "converged", "chosen", "reason"])
            for c in self.per_candidate:
                writer.writerow([format_value(c.sigma, precision), c.l99, c.n_columns,
                                 format_value(c.mean_subgroup_sd, precision),
                                 format_value(c.max_global_sd, precision), int(c.converged),
                                 int(self.chosen is c), c.reason])


def select_candidate(candidates: Sequence[Candidate], threshold: float = 10.0) -> Optional[Candidate]:
    """Constrained argmin of mean subgroup S/D; ties go to the smaller sigma."""
    feasible = [c for c in candidates if c.feasible(threshold)]
    if not feasible:
        return None
    return min(feasible, key=lambda c: (c.mean_subgroup_sd, c.sigma))


def evaluate_candidate(dataset: Dataset, estimand, sigma: float, sq_dists, settings: SolverSettings,
                       kernel: KernelSettings) -> Candidate:
    cand = Candidate(sigma=float(sigma))
    try:
        feats = kpca_features(gaussian_kernel(None, sigma, sq_dists), kernel.variance_threshold, sigma)
        cand.l99 = feats.l99
        X = design_for(dataset, features=feats.features, feature_names=feats.names)
        cand.n_columns = X.n_columns
        limit = min(dataset.n_treated, dataset.n_control)
        if X.n_columns >= limit:
            cand.reason = f"P={X.n_columns} >= min(N1, N0)={limit}"
            return cand
        fit = solve(dataset.treatment, X, estimand, settings)
    except (NumericalError, DataError) as exc:
        cand.reason = str(exc)
        return cand
    report = balance_report(dataset, fit)
    cand.converged = True
    cand.fit = fit
    cand.max_global_sd = report.max_global
    cand.mean_subgroup_sd = report.mean_subgroup
    if report.undefined_cells:
        cand.reason = f"undefined S/D cells {report.undefined_cells}"
    return cand


def tune_kgsbps(dataset: Dataset, estimand="ATE", settings: Optional[SolverSettings] = None,
                kernel: Optional[KernelSettings] = None, n_jobs: int = 1) -> TuneResult:
    """Evaluate every bandwidth candidate and apply the constrained selection."""
    settings = settings or SolverSettings()
    kernel = kernel or KernelSettings()
    estimand = Estimand.parse(estimand)
    if dataset.n_subgroups < 1:
        raise DataError("bandwidth tuning needs at least one subgroup")
    if dataset.n_treated < 2 or dataset.n_control < 2:
        raise DataError("bandwidth tuning needs at least two units per arm")

    Z = standardize_columns(dataset.covariates) if kernel.standardize else dataset.covariates
    if kernel.sigmas is not None:
        sigmas = np.asarray(kernel.sigmas, dtype=float)
    else:
        lo, hi = kernel.quantiles
        sigmas = bandwidth_grid(Z, kernel.n_bandwidths, lo, hi, standardize=False,
                                distance=kernel.grid_distance)
    sq = squared_distances(Z)

    unique = sorted(set(float(s) for s in sigmas))

    def run(s):
        return evaluate_candidate(dataset, estimand, s, sq, settings, kernel)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, unique))
    else:
        results = [run(s) for s in unique]
    cache = dict(zip(unique, results))
    per_candidate = [cache[float(s)] for s in sigmas]

    best = select_candidate(results, kernel.global_threshold)
    if best is None:
        return TuneResult("fail", None, per_candidate)
    return TuneResult("ok", best.sigma, per_candidate, best)


def fit_kgsbps(dataset: Dataset, estimand="ATE", settings: Optional[SolverSettings] = None,
               kernel: Optional[KernelSettings] = None, n_jobs: int = 1):
    """Tune the bandwidth and return ``(fit, tune_result)``.

    Raises NumericalError when no candidate meets the global constraint.
    """
    result = tune_kgsbps(dataset, estimand, settings, kernel, n_jobs)
    if result.status != "ok":
        reasons = sorted({c.reason or "global S/D above threshold" for c in result.per_candidate})
        err = NumericalError("kG-SBPS tuning failed: no candidate meets the global balance constraint")
        err.tune_result = result
        err.reasons = reasons
        raise err
    return result.chosen.fit, result
