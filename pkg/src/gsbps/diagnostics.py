"""Weighted standardized differences, overall and within subgroups.

Undefined cells (an arm with fewer than two units, or a zero pooled sd with a
non-zero mean difference) are carried as NaN and listed in the report.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, Estimand
from .exceptions import DataError

UNDEFINED = float("nan")


def weighted_sd_arm(z, w, mask=None) -> float:
    """Reliability-weighted sd of ``z`` over the units selected by ``mask``.

    ``var = sum(w) / (sum(w)^2 - sum(w^2)) * sum(w * (z - zbar_w)^2)``; with
    unit weights this is the ordinary sample variance. Returns NaN when the
    denominator vanishes.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        z, w = z[m], w[m]
    if z.size < 2:
        return UNDEFINED
    sw = w.sum()
    denom = sw * sw - np.sum(w * w)
    if sw <= 0 or denom <= 1e-14 * sw * sw:
        return UNDEFINED
    zbar = np.sum(w * z) / sw
    var = sw / denom * np.sum(w * (z - zbar) ** 2)
    return float(np.sqrt(max(var, 0.0)))


def standardized_difference(z, T, w1, w0, mask=None) -> float:
    """``100 * |weighted mean difference| / pooled weighted sd`` (percent)."""
    z = np.asarray(z, dtype=float)
    T = np.asarray(T, dtype=float)
    sel = np.ones(z.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    treated, control = sel & (T == 1), sel & (T == 0)
    if treated.sum() < 2 or control.sum() < 2:
        return UNDEFINED
    w1 = np.asarray(w1, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    sd1 = weighted_sd_arm(z, w1, treated)
    sd0 = weighted_sd_arm(z, w0, control)
    if np.isnan(sd1) or np.isnan(sd0):
        return UNDEFINED
    diff = abs(np.average(z[treated], weights=w1[treated]) - np.average(z[control], weights=w0[control]))
    pooled = np.sqrt((sd1 ** 2 + sd0 ** 2) / 2.0)
    if pooled == 0:
        return 0.0 if diff == 0 else UNDEFINED
    return float(100.0 * diff / pooled)


@dataclass(frozen=True)
class BalanceReport:
    global_sd: np.ndarray
    subgroup_sd: np.ndarray
    covariate_names: tuple
    subgroup_names: tuple
    estimand: Optional[Estimand] = None

    @property
    def undefined_cells(self):
        """(k, m) pairs with undefined subgroup S/D; k = -1 marks the overall row."""
        cells = [(-1, int(m)) for m in np.flatnonzero(np.isnan(self.global_sd))]
        cells += [(int(k), int(m)) for k, m in zip(*np.nonzero(np.isnan(self.subgroup_sd)))]
        return cells

    @property
    def max_global(self) -> float:
        return float(np.max(self.global_sd)) if not np.isnan(self.global_sd).any() else UNDEFINED

    @property
    def mean_subgroup(self) -> float:
        return float(np.mean(self.subgroup_sd)) if not np.isnan(self.subgroup_sd).any() else UNDEFINED

    def rows(self, method: str = ""):
        """Long-format records (method, scope, subgroup, covariate, sd_percent)."""
        out = []
        for m, name in enumerate(self.covariate_names):
            out.append((method, "overall", "", name, float(self.global_sd[m])))
        for k, sname in enumerate(self.subgroup_names):
            for m, name in enumerate(self.covariate_names):
                out.append((method, "subgroup", sname, name, float(self.subgroup_sd[k, m])))
        return out


def balance_report(dataset: Dataset, fit=None, diag_covariates=None, diag_names: Sequence[str] = (),
                   weights=None) -> BalanceReport:
    """Overall and per-subgroup S/D tables.

    Args:
        dataset: data whose treatment and subgroups define arms and scopes.
        fit: a PropensityFit (or anything with ``w1`` and ``w0``).
        diag_covariates: (N, M') matrix to diagnose; defaults to the raw covariates.
        diag_names: labels for ``diag_covariates``.
        weights: explicit ``(w1, w0)`` pair used when ``fit`` is None.
    """
    if fit is not None:
        w1, w0 = fit.w1, fit.w0
        estimand = getattr(fit, "estimand", None)
    elif weights is not None:
        w1, w0 = weights
        estimand = None
    else:
        w1 = w0 = np.ones(dataset.n)
        estimand = None
    w1, w0 = np.asarray(w1, dtype=float), np.asarray(w0, dtype=float)
    if w1.shape[0] != dataset.n or w0.shape[0] != dataset.n:
        raise DataError("weights do not align with dataset rows")
    if diag_covariates is None:
        Z, names = dataset.covariates, dataset.covariate_names
    else:
        Z = np.asarray(diag_covariates, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        names = tuple(diag_names) or tuple(f"V{j + 1}" for j in range(Z.shape[1]))
    T, S = dataset.treatment, dataset.subgroups
    m = Z.shape[1]
    glob = np.array([standardized_difference(Z[:, j], T, w1, w0) for j in range(m)])
    sub = np.array([[standardized_difference(Z[:, j], T, w1, w0, S[:, k] == 1) for j in range(m)]
                    for k in range(S.shape[1])]).reshape(S.shape[1], m)
    return BalanceReport(glob, sub, tuple(names), tuple(dataset.subgroup_names), estimand)


_TERM = re.compile(r"^\s*([^*\s]+)\s*(?:\*\s*([^*\s]+)\s*)?$")


def parse_transforms(text: str):
    """Split ``"X1*X1, X1*X4"`` into ``[("X1", "X1"), ("X1", "X4")]``."""
    out = []
    for term in (t for t in text.split(",") if t.strip()):
        match = _TERM.match(term)
        if not match:
            raise DataError(f"cannot parse covariate transformation {term!r}")
        out.append(tuple(x for x in match.groups() if x))
    return out


def diagnostic_matrix(dataset: Dataset, transforms=()):
    """Raw covariates followed by the requested product terms, with names."""
    cols = [dataset.covariates]
    names = list(dataset.covariate_names)
    index = {name: j for j, name in enumerate(dataset.covariate_names)}
    for term in transforms:
        for name in term:
            if name not in index:
                raise DataError(f"unknown covariate {name!r} in transformation")
        col = np.prod([dataset.covariates[:, index[name]] for name in term], axis=0)
        cols.append(col[:, None])
        names.append("*".join(term))
    return np.hstack(cols), tuple(names)


def format_value(x: float, precision: str = "6") -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "NA"
    if precision == "full":
        return repr(float(x))
    return f"{float(x):.6g}"


def write_balance_csv(path, rows, precision: str = "6"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "scope", "subgroup", "covariate", "sd_percent"])
        for method, scope, sub, cov, value in rows:
            writer.writerow([method, scope, sub, cov, format_value(value, precision)])
