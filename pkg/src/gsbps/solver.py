"""Solve the balance equations for the propensity coefficients.

The default path is damped Newton ascent on the concave scoring-rule loss.
A continuous-updating GMM minimisation of the quadratic balance form is
available as a fallback and as an independent cross-check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse import csgraph

from .data import DesignMatrix, Estimand
from .exceptions import CollinearDesignError, ConvergenceError, DataError, NumericalError, SeparationError
from .loss import ETA_CLAMP, PROB_FLOOR, balance_weights, bernoulli_eval, cbsr_eval, logistic

log = logging.getLogger(__name__)

METHODS = ("newton", "gmm", "newton_then_gmm")
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverSettings:
    tol_score: float = 1e-8
    max_iter: int = 200
    ridge: float = 1e-10
    max_ridge: float = 1e-4
    theta_bound: float = 1e3
    method: str = "newton_then_gmm"
    prob_floor: float = PROB_FLOOR
    standardize: bool = True
    # Gram-matrix eigenvalue ratio below which the design counts as rank deficient.
    rank_tol: float = 1e-12
    # solve independent column blocks (e.g. one per partitioning subgroup) separately
    decompose: bool = True

    def __post_init__(self):
        if not self.tol_score > 0:
            raise ValueError("tol_score must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass(frozen=True)
class PropensityFit:
    """A fitted propensity model plus the inverse-probability weights it implies."""

    theta: np.ndarray
    propensities: np.ndarray
    w1: np.ndarray
    w0: np.ndarray
    estimand: Estimand
    converged: bool
    iterations: int
    final_score_norm: float
    method_used: str
    column_names: tuple = ()
    info: dict = field(default_factory=dict, compare=False)

    @property
    def weights(self):
        return self.w1, self.w0

    def unit_weights(self, T) -> np.ndarray:
        """Each unit's weight in its own arm."""
        T = np.asarray(T, dtype=float)
        return np.where(T == 1, self.w1, self.w0)


@dataclass(frozen=True)
class Standardizer:
    """Affine column map ``Xs = (X - mean) / scale`` on non-binary columns.

    Centering is only a reparametrisation when the constant vector lies in
    the column span, so means stay zero when ``constant`` is None.
    """

    mean: np.ndarray
    scale: np.ndarray
    constant: Optional[np.ndarray]

    @classmethod
    def fit(cls, X, constant=None, enabled=True):
        X = np.asarray(X, dtype=float)
        p = X.shape[1]
        mean, scale = np.zeros(p), np.ones(p)
        if enabled:
            binary = np.all((X == 0) | (X == 1), axis=0)
            sd = X.std(axis=0)
            cols = ~binary & (np.ptp(X, axis=0) > 0)
            scale[cols] = sd[cols]
            if constant is not None:
                mean[cols] = X[:, cols].mean(axis=0)
        return cls(mean, scale, constant)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def theta_to_original(self, theta_s):
        theta = theta_s / self.scale
        shift = float(self.mean @ theta)
        if self.constant is not None and shift != 0.0:
            theta = theta - shift * self.constant
        return theta


def _constant_combination(X, design):
    if design is not None:
        c = design.constant_combination()
        if c is not None:
            return c
    c, *_ = np.linalg.lstsq(X, np.ones(X.shape[0]), rcond=None)
    if np.max(np.abs(X @ c - 1.0)) <= 1e-10:
        return c
    return None


def check_rank(Xs, rank_tol=1e-12):
    """Raise CollinearDesignError if the Gram matrix is numerically singular."""
    G = Xs.T @ Xs
    ev = np.linalg.eigvalsh(G)
    if ev[-1] <= 0 or ev[0] <= rank_tol * ev[-1]:
        raise CollinearDesignError(
            f"collinear design: Gram eigenvalue ratio {max(ev[0], 0) / max(ev[-1], 1e-300):.3g}"
        )


def _newton_direction(ev, ridge, max_ridge):
    A = -ev.hessian
    scale = max(float(np.trace(A)) / A.shape[0], 1e-300)
    r = ridge
    while r <= max_ridge * (1 + 1e-12):
        try:
            cf = linalg.cho_factor(A + r * scale * np.eye(A.shape[0]), check_finite=True)
            return linalg.cho_solve(cf, ev.score)
        except (linalg.LinAlgError, ValueError):
            r *= 10.0
    raise SeparationError("separation/unbounded: Hessian factorisation failed at maximum ridge")


def _evaluator(T, Xs, estimand, objective):
    if objective == "balance":
        return lambda theta, hessian=True: cbsr_eval(theta, T, Xs, estimand, hessian)
    if objective == "likelihood":
        return lambda theta, hessian=True: bernoulli_eval(theta, T, Xs, hessian)
    raise ValueError(f"unknown objective {objective!r}")


def newton_solve(T, Xs, estimand, settings: SolverSettings, theta0=None, objective="balance", n_norm=None):
    """Damped Newton ascent with Armijo backtracking on the standardized design.

    ``objective`` is "balance" (scoring-rule loss) or "likelihood" (Bernoulli
    log-likelihood); both are concave.

    The stopping rule is ``max|score| / n_norm <= tol_score``; ``n_norm``
    defaults to the row count.

    Returns ``(theta, iterations, score_norm, converged, loss_trace)``.
    """
    n = n_norm or Xs.shape[0]
    evaluate = _evaluator(T, Xs, estimand, objective)
    bounded = objective == "balance"
    theta = np.zeros(Xs.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
    ev = evaluate(theta)
    trace = [ev.loss]
    crit = float(np.max(np.abs(ev.score))) / n
    it = 0
    pinned = False
    while crit > settings.tol_score and it < settings.max_iter:
        it += 1
        d = _newton_direction(ev, settings.ridge, settings.max_ridge)
        slope = float(ev.score @ d)
        step, accepted, clipped = 1.0, None, False
        gnorm = float(np.max(np.abs(ev.score)))
        for _ in range(60):
            cand = theta + step * d
            # stay where the predictor clamp is inactive so loss and score agree
            if bounded and np.max(np.abs(Xs @ cand)) > ETA_CLAMP:
                step *= 0.5
                clipped = True
                continue
            new = evaluate(cand, hessian=False)
            if new.loss >= ev.loss + 1e-4 * step * slope:
                accepted = (cand, new)
                break
            # loss change lost in rounding near the optimum: accept on score decrease
            if (new.loss >= ev.loss - 64 * _EPS * abs(ev.loss)
                    and np.max(np.abs(new.score)) < gnorm):
                accepted = (cand, new)
                break
            step *= 0.5
        if accepted is None:
            if clipped:
                raise SeparationError("separation/unbounded: solution needs |linear predictor| beyond the clamp")
            log.debug("line search stalled at iteration %d (crit %.3g)", it, crit)
            break
        theta = accepted[0]
        ev = evaluate(theta)
        trace.append(ev.loss)
        if np.max(np.abs(theta)) > settings.theta_bound:
            raise SeparationError(
                f"separation/unbounded: |theta| exceeded {settings.theta_bound:g} on standardized scale"
            )
        crit = float(np.max(np.abs(ev.score))) / n
        pinned = clipped
    if crit > settings.tol_score and pinned:
        raise SeparationError("separation/unbounded: solution needs |linear predictor| beyond the clamp")
    if crit <= settings.tol_score and crit > 0:
        # one polishing step; quadratic convergence takes the residual to rounding level
        try:
            cand = theta + _newton_direction(ev, settings.ridge, settings.max_ridge)
            new = evaluate(cand)
            new_crit = float(np.max(np.abs(new.score))) / n
            if new_crit < crit and new.loss >= ev.loss - 64 * _EPS * abs(ev.loss):
                theta, ev, crit = cand, new, new_crit
                trace.append(ev.loss)
        except SeparationError:
            pass
    return theta, it, crit, crit <= settings.tol_score, trace


def gmm_objective(theta, T, X, estimand, ridge: float = 1e-10, sigma=None) -> float:
    """Quadratic balance form ``Bbar' Sigma^-1 Bbar`` with ``Sigma = X'X / N``.

    Zero exactly when the balance equations hold.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if sigma is None:
        sigma = _gmm_sigma(X, ridge)
    bbar = cbsr_eval(theta, T, X, estimand, hessian=False).score / n
    return float(bbar @ linalg.cho_solve(sigma, bbar))


def _gmm_sigma(X, ridge):
    n, p = X.shape
    S = X.T @ X / n
    scale = max(float(np.trace(S)) / p, 1e-300)
    r = ridge
    while r <= 1e-4:
        try:
            return linalg.cho_factor(S + r * scale * np.eye(p))
        except linalg.LinAlgError:
            r *= 10.0
    raise NumericalError("singular GMM weighting matrix")


def gmm_solve(T, Xs, estimand, settings: SolverSettings, theta0=None, n_norm=None):
    """Quasi-Newton (BFGS) minimisation of the GMM objective, scaled by N."""
    n, p = Xs.shape
    sigma = _gmm_sigma(Xs, settings.ridge)

    def fun(theta):
        ev = cbsr_eval(theta, T, Xs, estimand)
        bbar = ev.score / n
        sb = linalg.cho_solve(sigma, bbar)
        return n * float(bbar @ sb), 2.0 * (ev.hessian / n) @ sb * n

    x0 = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    res = optimize.minimize(fun, x0, jac=True, method="BFGS",
                            options={"gtol": 1e-13, "maxiter": max(settings.max_iter * 20, 2000)})
    theta = res.x
    if np.max(np.abs(theta)) > settings.theta_bound:
        raise SeparationError("separation/unbounded: GMM coefficients exceeded bound")
    if np.max(np.abs(Xs @ theta)) >= ETA_CLAMP:
        # a root that parks units at the clamp does not balance the clipped weights
        raise SeparationError("separation/unbounded: solution needs |linear predictor| beyond the clamp")
    score = cbsr_eval(theta, T, Xs, estimand, hessian=False).score
    crit = float(np.max(np.abs(score))) / (n_norm or n)
    return theta, int(res.nit), crit, crit <= settings.tol_score


def find_blocks(X):
    """Split a design into independent (rows, columns) blocks.

    Two columns share a block when some row is non-zero in both. With
    subgroups that partition the sample, each subgroup becomes one block and
    the balance equations decouple.
    """
    nz = sparse.csr_matrix(np.asarray(X) != 0, dtype=np.int8)
    adjacency = (nz.T @ nz).tocsr()
    n_comp, col_label = csgraph.connected_components(adjacency, directed=False)
    if n_comp == 1:
        return [(np.arange(X.shape[0]), np.arange(X.shape[1]))]
    row_label = np.full(X.shape[0], -1)
    rows_idx, cols_idx = nz.nonzero()
    row_label[rows_idx] = col_label[cols_idx]
    return [(np.flatnonzero(row_label == b), np.flatnonzero(col_label == b)) for b in range(n_comp)]


def _solve_block(T, X, constant, estimand, settings, objective, n_total):
    """Standardize, rank-check and solve one block; returns original-scale theta and eta."""
    if T.sum() < 1 or T.sum() > len(T) - 1:
        raise SeparationError("separation/unbounded: a design block has an empty treatment arm")
    std = Standardizer.fit(X, constant, settings.standardize)
    Xs = std.transform(X)
    check_rank(Xs, settings.rank_tol)
    info = {}
    if objective == "likelihood" or settings.method in ("newton", "newton_then_gmm"):
        theta_s, it, crit, ok, trace = newton_solve(T, Xs, estimand, settings, objective=objective,
                                                    n_norm=n_total)
        info["loss_trace"] = trace
        method_used = "newton_mle" if objective == "likelihood" else "newton"
        if not ok and objective == "balance" and settings.method == "newton_then_gmm":
            log.info("Newton stopped at score %.3g after %d iterations; trying GMM", crit, it)
            theta_g, it_g, crit_g, ok_g = gmm_solve(T, Xs, estimand, settings, theta0=theta_s, n_norm=n_total)
            if crit_g < crit:
                theta_s, crit, ok = theta_g, crit_g, ok_g
                method_used = "gmm"
            it += it_g
    else:
        theta_s, it, crit, ok = gmm_solve(T, Xs, estimand, settings, n_norm=n_total)
        method_used = "gmm"
    if not ok:
        raise ConvergenceError(
            f"max iterations: score {crit:.3g} > tol {settings.tol_score:g} after {it} iterations",
            diagnostics={"iterations": it, "final_score_norm": crit, "method": method_used},
        )
    return std.theta_to_original(theta_s), Xs @ theta_s, it, crit, method_used, info


def solve(T, X, estimand, settings: Optional[SolverSettings] = None,
          objective: str = "balance") -> PropensityFit:
    """Fit the propensity coefficients that satisfy the balance equations.

    Args:
        T: binary treatment vector.
        X: DesignMatrix or (N, P) array.
        estimand: "ATE" or "ATT".
        settings: solver knobs; defaults follow SolverSettings.
        objective: "balance" solves the balance equations; "likelihood" gives
            the logistic maximum-likelihood fit (Newton only).

    Returns:
        PropensityFit with coefficients on the original column scale.

    Raises:
        CollinearDesignError, SeparationError, ConvergenceError.
    """
    settings = settings or SolverSettings()
    estimand = Estimand.parse(estimand)
    design = X if isinstance(X, DesignMatrix) else None
    Xv = np.asarray(design.values if design is not None else X, dtype=float)
    T = np.asarray(T, dtype=float)
    if Xv.ndim != 2 or Xv.shape[0] != T.shape[0]:
        raise DataError("dimension mismatch between treatment and design")
    if T.sum() < 1 or T.sum() > len(T) - 1:
        raise DataError("both treatment arms must be non-empty")
    n, p = Xv.shape

    constant = _constant_combination(Xv, design)
    blocks = find_blocks(Xv) if settings.decompose else [(np.arange(n), np.arange(p))]
    # smallest arms first: separation there fails fast
    blocks.sort(key=lambda b: min(T[b[0]].sum(), len(b[0]) - T[b[0]].sum()))

    theta = np.zeros(p)
    eta = np.zeros(n)
    iterations, crit, methods, info = 0, 0.0, set(), {"blocks": len(blocks)}
    for rows, cols in blocks:
        Xb = Xv[np.ix_(rows, cols)]
        cb = constant[cols] if constant is not None else None
        th, eb, it, cr, used, binfo = _solve_block(T[rows], Xb, cb, estimand, settings, objective, n)
        theta[cols] = th
        eta[rows] = eb
        iterations = max(iterations, it)
        crit = max(crit, cr)
        methods.add(used)
        if len(blocks) == 1:
            info.update(binfo)

    p_hat = logistic(np.clip(eta, -40.0, 40.0), settings.prob_floor)
    w1, w0 = balance_weights(p_hat, estimand)
    names = tuple(design.names) if design is not None else ()
    return PropensityFit(
        theta=theta,
        propensities=p_hat,
        w1=w1,
        w0=w0,
        estimand=estimand,
        converged=True,
        iterations=iterations,
        final_score_norm=crit,
        method_used="+".join(sorted(methods)),
        column_names=names,
        info=info,
    )


def with_method(settings: Optional[SolverSettings], method: str) -> SolverSettings:
    return replace(settings or SolverSettings(), method=method)
