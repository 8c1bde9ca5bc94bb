"""Covariate-balancing scoring-rule losses, their balance scores and Hessians.

Both losses are concave in the coefficients; their gradients are the
inverse-probability-weighted balance equations for the corresponding
estimand, so maximising the loss solves the balance equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Estimand
from .exceptions import SeparationError

ETA_CLAMP = 40.0
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossEval:
    loss: float
    score: np.ndarray
    hessian: np.ndarray


def linear_predictor(theta, X) -> np.ndarray:
    return np.clip(np.asarray(X, dtype=float) @ np.asarray(theta, dtype=float), -ETA_CLAMP, ETA_CLAMP)


def logistic(eta, floor: float = PROB_FLOOR) -> np.ndarray:
    """Overflow-safe inverse logit, clipped to ``[floor, 1 - floor]``."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, floor, 1.0 - floor)


def propensity(theta, X, floor: float = PROB_FLOOR) -> np.ndarray:
    """Fitted treatment probabilities under the logit link."""
    return logistic(linear_predictor(theta, X), floor)


def _unit_terms(eta, T, estimand):
    """Per-unit loss, score multiplier and (negated) Hessian multiplier."""
    ep, em = np.exp(eta), np.exp(-eta)
    if estimand is Estimand.ATE:
        # 1/pi = 1 + e^-eta, 1/(1 - pi) = 1 + e^eta
        loss = T * (eta - 1.0 - em) + (1.0 - T) * (-eta - 1.0 - ep)
        score = T * (1.0 + em) - (1.0 - T) * (1.0 + ep)
        curv = T * em + (1.0 - T) * ep
    else:
        loss = T * eta - (1.0 - T) * (1.0 + ep)
        score = T - (1.0 - T) * ep
        curv = (1.0 - T) * ep
    return loss, score, curv


def cbsr_eval(theta, T, X, estimand, hessian: bool = True) -> LossEval:
    """Loss, balance score and Hessian at ``theta``.

    Sums over units (not means). Raises SeparationError if the loss is not
    finite.
    """
    estimand = Estimand.parse(estimand)
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    eta = linear_predictor(theta, X)
    loss_i, score_i, curv = _unit_terms(eta, T, estimand)
    loss = float(np.sum(loss_i))
    if not np.isfinite(loss):
        raise SeparationError("separation/unbounded: loss is not finite at theta")
    score = X.T @ score_i
    H = -(X.T * curv) @ X if hessian else None
    if H is not None:
        H = 0.5 * (H + H.T)
    return LossEval(loss, score, H)


def cbsr_loss(theta, T, X, estimand) -> float:
    estimand = Estimand.parse(estimand)
    eta = linear_predictor(theta, X)
    return float(np.sum(_unit_terms(eta, np.asarray(T, dtype=float), estimand)[0]))


def balance_weights(p, estimand):
    """(w1, w0) arm weights from propensities: ATE 1/p, 1/(1-p); ATT 1, p/(1-p)."""
    estimand = Estimand.parse(estimand)
    p = np.asarray(p, dtype=float)
    if estimand is Estimand.ATE:
        return 1.0 / p, 1.0 / (1.0 - p)
    return np.ones_like(p), p / (1.0 - p)


def balance_residual(T, X, w1, w0) -> np.ndarray:
    """Per-unit difference of weighted column sums, treated minus control."""
    T = np.asarray(T, dtype=float)
    X = np.asarray(X, dtype=float)
    return (X.T @ (T * w1) - X.T @ ((1.0 - T) * w0)) / X.shape[0]


def bernoulli_eval(theta, T, X, hessian: bool = True) -> LossEval:
    """Bernoulli log-likelihood of the logistic model with its score and Hessian."""
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    eta = X @ np.asarray(theta, dtype=float)
    # log(1 + e^eta) computed stably
    loglik = float(np.sum(T * eta - np.logaddexp(0.0, eta)))
    p = logistic(eta, floor=0.0)
    score = X.T @ (T - p)
    if not hessian:
        return LossEval(loglik, score, None)
    H = -(X.T * (p * (1.0 - p))) @ X
    return LossEval(loglik, score, 0.5 * (H + H.T))
