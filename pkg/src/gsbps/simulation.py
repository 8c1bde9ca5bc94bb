"""Simulation design with K covariate-defined subgroups, and a Monte Carlo runner.

Each subgroup k has its own X1 location, propensity intercept and
treatment effect. Two propensity models are available: PS1 (main effects)
and PS2 (adds X1^2 and X1*X4). Two outcome models are available: OM1
(linear) and OM2 (adds -5 X1^2 + 10 X1 X4).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import fit_cbps, fit_gsbps, fit_logistic, fit_logistic_s
from .data import Dataset, Estimand
from .diagnostics import balance_report, diagnostic_matrix, format_value
from .effects import hajek_difference
from .exceptions import DataError, GSBPSError
from .solver import SolverSettings
from .tuner import KernelSettings, fit_kgsbps

log = logging.getLogger(__name__)

PS_MODELS = ("PS1", "PS2")
OUTCOME_MODELS = ("OM1", "OM2")
METHODS = ("logistic", "logistic_s", "cbps", "gsbps", "kgsbps")
COVARIATES = ("X1", "X2", "X3", "X4")
# Boxplot panels: the four covariates plus the two terms PS2 and OM2 add.
DIAG_TRANSFORMS = (("X1", "X1"), ("X1", "X4"))

PS1_BETA = (-0.2, -0.2, 0.4, -0.4, 0.0, 0.0)
PS2_BETA = {Estimand.ATE: (-1.5, -0.5, 0.5, -0.5, 0.5, 0.5),
            Estimand.ATT: (-1.5, -0.8, 0.2, -0.8, 0.5, 0.5)}


@dataclass(frozen=True)
class Scenario:
    ps_model: str = "PS1"
    outcome_model: str = "OM1"
    estimand: str = "ATE"
    K: int = 4
    n_per_group: Tuple[int, ...] = (500, 500, 500, 500)
    seed: int = 0
    # debug switches: zero propensity coefficients; no outcome noise; force T = 0
    null_propensity: bool = False
    noiseless: bool = False
    force_control: bool = False

    def __post_init__(self):
        if self.ps_model not in PS_MODELS:
            raise DataError(f"ps_model must be one of {PS_MODELS}")
        if self.outcome_model not in OUTCOME_MODELS:
            raise DataError(f"outcome_model must be one of {OUTCOME_MODELS}")
        object.__setattr__(self, "estimand", Estimand.parse(self.estimand).value)
        if self.K < 1:
            raise DataError("K must be >= 1")
        npg = tuple(int(x) for x in self.n_per_group)
        if len(npg) == 1 and self.K > 1:
            npg = npg * self.K
        if len(npg) != self.K:
            raise DataError("n_per_group needs one entry per subgroup")
        if min(npg) < 2:
            raise DataError("each subgroup needs at least 2 units")
        object.__setattr__(self, "n_per_group", npg)


def _ramp(K):
    """(k - 1) / (K - 1) for k = 1..K, zero when K = 1."""
    return np.arange(K) / (K - 1) if K > 1 else np.zeros(1)


def subgroup_means(K):
    return 3.0 - 3.0 * _ramp(K)


def subgroup_intercepts(K):
    return -1.0 + 2.0 * _ramp(K)


def true_effects(K):
    return -10.0 + 20.0 * _ramp(K)


def propensity_coefficients(scenario: Scenario):
    if scenario.null_propensity:
        return np.zeros(6)
    if scenario.ps_model == "PS1":
        return np.array(PS1_BETA)
    return np.array(PS2_BETA[Estimand.parse(scenario.estimand)])


def rep_generator(seed: int, rep: int) -> np.random.Generator:
    """Counter-based Philox stream for one replicate, independent of run order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


def _draw(scenario: Scenario, rng: np.random.Generator):
    K = scenario.K
    G = np.repeat(np.arange(K), scenario.n_per_group)
    n = G.size
    x1 = rng.normal(subgroup_means(K)[G], 1.0)
    x2 = rng.uniform(0.0, 1.0, n)
    x3 = rng.normal(0.0, 1.0, n)
    x4 = rng.binomial(1, 0.4, n).astype(float)
    b = propensity_coefficients(scenario)
    delta = np.zeros(K) if scenario.null_propensity else subgroup_intercepts(K)
    lin = delta[G] + b[0] * x1 + b[1] * x2 + b[2] * x3 + b[3] * x4 + b[4] * x1 ** 2 + b[5] * x1 * x4
    pi = 1.0 / (1.0 + np.exp(-lin))
    T = (rng.uniform(size=n) < pi).astype(float)
    eps = rng.normal(0.0, 1.0, n)
    if scenario.force_control:
        T = np.zeros(n)
    if scenario.noiseless:
        eps = np.zeros(n)
    return G, np.column_stack([x1, x2, x3, x4]), T, eps, pi


def outcome(model: str, G, Z, T, eps, K) -> np.ndarray:
    x1, x2, x3, x4 = Z.T
    y = 200.0 + true_effects(K)[G] * T + 20 * x1 + 10 * x2 + 10 * x3 + 10 * x4 + eps
    if model == "OM2":
        y = y - 5 * x1 ** 2 + 10 * x1 * x4
    return y


@dataclass(frozen=True)
class Draw:
    groups: np.ndarray
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    noise: np.ndarray
    true_propensity: np.ndarray


def simulate_arrays(scenario: Scenario, rep: int = 0, outcome_model: Optional[str] = None) -> Draw:
    """Raw draw for one replicate, before Dataset validation (debug flags allowed)."""
    G, Z, T, eps, pi = _draw(scenario, rep_generator(scenario.seed, rep))
    Y = outcome(outcome_model or scenario.outcome_model, G, Z, T, eps, scenario.K)
    return Draw(G, Z, T, Y, eps, pi)


def generate(scenario: Scenario, rep: int = 0, outcome_model: Optional[str] = None) -> Dataset:
    """One simulated dataset.

    The same (seed, rep) gives the same covariates and treatment under
    either outcome model, so fits can be shared across outcome models.
    """
    d = simulate_arrays(scenario, rep, outcome_model)
    S = (d.groups[:, None] == np.arange(scenario.K)[None, :]).astype(float)
    meta = {"groups": d.groups, "true_effects": true_effects(scenario.K), "true_propensity": d.true_propensity,
            "noise": d.noise, "outcome_model": outcome_model or scenario.outcome_model, "rep": rep}
    return Dataset(d.covariates, d.treatment, d.outcome, S, COVARIATES,
                   tuple(f"S{k + 1}" for k in range(scenario.K)), metadata=meta)


FITTERS = {
    "logistic": fit_logistic,
    "logistic_s": fit_logistic_s,
    "cbps": fit_cbps,
    "gsbps": fit_gsbps,
}


def fit_method(method: str, dataset: Dataset, estimand, settings=None, kernel=None):
    if method == "kgsbps":
        return fit_kgsbps(dataset, estimand, settings, kernel)[0]
    if method not in FITTERS:
        raise DataError(f"unknown method {method!r}; expected one of {METHODS}")
    return FITTERS[method](dataset, estimand, settings)


@dataclass
class ScenarioResult:
    """Monte Carlo aggregate for one scenario.

    ``estimates[(om, method)]`` is a (reps, K) array with NaN rows for failed fits.
    """

    scenario: Scenario
    methods: Tuple[str, ...]
    outcome_models: Tuple[str, ...]
    reps: int
    estimates: Dict[tuple, np.ndarray]
    failures: Dict[str, List[str]]
    sd_rows: List[tuple] = field(repr=False, default_factory=list)

    @property
    def truth(self):
        return true_effects(self.scenario.K)

    def available(self, method: str) -> bool:
        return len(self.failures.get(method, [])) < self.reps

    def _ok(self, om, method):
        est = self.estimates[(om, method)]
        return est[~np.isnan(est).any(axis=1)]

    def bias(self, method, om=None):
        est = self._ok(om or self.outcome_models[0], method)
        return est.mean(axis=0) - self.truth if len(est) else np.full(self.scenario.K, np.nan)

    def pct_bias(self, method, om=None):
        """100 * (Monte Carlo mean - truth) / truth per subgroup; NaN where truth is 0."""
        truth = self.truth
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(truth != 0, 100.0 * self.bias(method, om) / truth, np.nan)

    def rmse(self, method, om=None):
        est = self._ok(om or self.outcome_models[0], method)
        if not len(est):
            return np.full(self.scenario.K, np.nan)
        return np.sqrt(np.mean((est - self.truth) ** 2, axis=0))

    def sd_values(self, method, scope, covariate, subgroup=""):
        return np.array([r[5] for r in self.sd_rows
                         if r[1] == method and r[2] == scope and r[3] == subgroup and r[4] == covariate])

    def sd_summary(self):
        """{(method, scope, subgroup, covariate): (median, q25, q75, max)} over replicates."""
        groups: Dict[tuple, list] = {}
        for rep, method, scope, sub, cov, value in self.sd_rows:
            groups.setdefault((method, scope, sub, cov), []).append(value)
        out = {}
        for key, vals in groups.items():
            v = np.asarray(vals, dtype=float)
            v = v[~np.isnan(v)]
            out[key] = tuple(np.percentile(v, [50, 25, 75, 100])) if v.size else (np.nan,) * 4
        return out

    def table_rows(self):
        rows = []
        for om in self.outcome_models:
            for method in self.methods:
                n_fail = len(self.failures.get(method, []))
                pb, rm, bi = self.pct_bias(method, om), self.rmse(method, om), self.bias(method, om)
                for k in range(self.scenario.K):
                    rows.append((om, method, f"S{k + 1}", self.truth[k], pb[k], rm[k], bi[k],
                                 self.reps - n_fail, n_fail))
        return rows

    def write_table_csv(self, path, precision: str = "6"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["outcome_model", "method", "subgroup", "true_effect", "pct_bias", "rmse",
                             "bias", "n_ok", "n_failed"])
            for om, method, sub, truth, pb, rm, bi, ok, nf in self.table_rows():
                writer.writerow([om, method, sub, format_value(truth, precision), format_value(pb, precision),
                                 format_value(rm, precision), format_value(bi, precision), ok, nf])

    def write_sd_csv(self, path, precision: str = "6"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rep", "method", "scope", "subgroup", "covariate", "sd_percent"])
            for rep, method, scope, sub, cov, value in self.sd_rows:
                writer.writerow([rep, method, scope, sub, cov, format_value(value, precision)])


def _one_rep(args):
    scenario, methods, outcome_models, rep, settings, kernel = args
    data = generate(scenario, rep)
    outcomes = {om: outcome(om, data.metadata["groups"], data.covariates, data.treatment,
                            data.metadata["noise"], scenario.K) for om in outcome_models}
    diag, diag_names = diagnostic_matrix(data, DIAG_TRANSFORMS)
    estimates, failures, sd_rows = {}, {}, []
    for method in methods:
        try:
            fit = fit_method(method, data, scenario.estimand, settings, kernel)
        except GSBPSError as exc:
            failures[method] = f"rep {rep}: {exc}"
            for om in outcome_models:
                estimates[(om, method)] = np.full(scenario.K, np.nan)
            continue
        for om in outcome_models:
            Y = outcomes[om]
            row = []
            for k in range(scenario.K):
                try:
                    row.append(hajek_difference(Y, data.treatment, fit.w1, fit.w0, data.subgroups[:, k] == 1))
                except DataError:
                    row.append(np.nan)
            estimates[(om, method)] = np.array(row)
        report = balance_report(data, fit, diag, diag_names)
        sd_rows += [(rep, *r) for r in report.rows(method)]
    return estimates, failures, sd_rows


def run_monte_carlo(scenario: Scenario, methods: Sequence[str] = ("logistic", "cbps", "gsbps"), reps: int = 100,
                    outcome_models: Optional[Sequence[str]] = None, settings: Optional[SolverSettings] = None,
                    kernel: Optional[KernelSettings] = None, n_jobs: int = 1, progress=None) -> ScenarioResult:
    """Fit every method on ``reps`` simulated datasets and aggregate bias, RMSE and S/D.

    Args:
        scenario: data-generating design.
        methods: subset of METHODS.
        reps: number of Monte Carlo replicates (>= 1).
        outcome_models: outcome models scored against the same fits;
            defaults to the scenario's own.
        n_jobs: worker processes; results do not depend on it.
        progress: optional callable invoked with the replicate index when done.
    """
    if reps < 1:
        raise DataError("reps must be >= 1")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}; expected a subset of {METHODS}")
    oms = tuple(outcome_models or (scenario.outcome_model,))
    for om in oms:
        if om not in OUTCOME_MODELS:
            raise DataError(f"unknown outcome model {om!r}")
    tasks = [(scenario, methods, oms, r, settings, kernel) for r in range(reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_one_rep, tasks))
    else:
        results = []
        for r, task in enumerate(tasks):
            results.append(_one_rep(task))
            if progress:
                progress(r)

    estimates = {(om, m): np.vstack([res[0][(om, m)] for res in results]) for om in oms for m in methods}
    failures: Dict[str, List[str]] = {m: [] for m in methods}
    sd_rows = []
    for est, fails, rows in results:
        for m, msg in fails.items():
            failures[m].append(msg)
        sd_rows += rows
    for m in methods:
        if failures[m]:
            log.warning("%s failed in %d/%d replicates", m, len(failures[m]), reps)
    return ScenarioResult(scenario, methods, oms, reps, estimates, failures, sd_rows)
