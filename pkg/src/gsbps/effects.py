"""Hajek (ratio-normalised) IPW estimates of overall and subgroup effects."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from .data import Dataset, Estimand
from .exceptions import DataError


@dataclass(frozen=True)
class EffectEstimate:
    scope: str
    estimand: Optional[str]
    value: float
    n_treated: int
    n_control: int


def hajek_difference(Y, T, w1, w0, mask=None) -> float:
    Y, T = np.asarray(Y, dtype=float), np.asarray(T, dtype=float)
    sel = np.ones(len(Y), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    tr, co = sel & (T == 1), sel & (T == 0)
    if not tr.any() or not co.any():
        raise DataError("empty treatment arm in scope")
    w1, w0 = np.asarray(w1, dtype=float), np.asarray(w0, dtype=float)
    return float(np.sum(w1[tr] * Y[tr]) / np.sum(w1[tr]) - np.sum(w0[co] * Y[co]) / np.sum(w0[co]))


def ipw_effect(dataset: Dataset, fit=None, scope: Union[str, int] = "overall", weights=None,
               cap: Optional[float] = None) -> EffectEstimate:
    """Weighted treated mean minus weighted control mean within ``scope``.

    Args:
        dataset: must carry an outcome.
        fit: PropensityFit; ``weights=(w1, w0)`` may be given instead.
        scope: "overall" or a subgroup index / name.
        cap: optional upper cap on weights. Off by default, since exact
            balance only holds for the untruncated weights.
    """
    if dataset.outcome is None:
        raise DataError("missing outcome")
    if fit is not None:
        w1, w0 = fit.w1, fit.w0
        estimand = fit.estimand.value
    elif weights is not None:
        w1, w0 = weights
        estimand = None
    else:
        w1 = w0 = np.ones(dataset.n)
        estimand = None
    if cap is not None:
        w1, w0 = np.minimum(w1, cap), np.minimum(w0, cap)

    if scope == "overall" or scope is None:
        mask, label = np.ones(dataset.n, dtype=bool), "overall"
    else:
        k = dataset.subgroup_names.index(scope) if isinstance(scope, str) else int(scope)
        mask, label = dataset.subgroups[:, k] == 1, dataset.subgroup_names[k]
    T = dataset.treatment
    value = hajek_difference(dataset.outcome, T, w1, w0, mask)
    return EffectEstimate(label, estimand, value, int(np.sum(mask & (T == 1))), int(np.sum(mask & (T == 0))))


def all_effects(dataset: Dataset, fit=None, weights=None):
    """Overall plus every subgroup; scopes with an empty arm come back as None."""
    out = []
    for scope in ["overall", *range(dataset.n_subgroups)]:
        try:
            out.append(ipw_effect(dataset, fit, scope, weights))
        except DataError:
            out.append(None)
    return out


def write_effects_csv(path, rows, method: str = "", precision: str = "6"):
    """rows: (scope label, EffectEstimate or None); None rows carry an error marker."""
    from .diagnostics import format_value

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "estimand", "scope", "estimate", "n1", "n0", "error"])
        for label, est, estimand in rows:
            if est is None:
                writer.writerow([method, estimand, label, "NA", "", "", "empty arm"])
            else:
                writer.writerow([method, estimand, est.scope, format_value(est.value, precision),
                                 est.n_treated, est.n_control, ""])


def effects_json(estimates, method: str = ""):
    return json.dumps([dict(method=method, **asdict(e)) for e in estimates if e is not None], indent=2)
