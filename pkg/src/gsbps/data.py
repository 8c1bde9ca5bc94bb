"""Data containers, design-matrix construction and CSV ingestion."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError


class Estimand(str, enum.Enum):
    ATE = "ATE"
    ATT = "ATT"

    @classmethod
    def parse(cls, value) -> "Estimand":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise DataError(f"unknown estimand {value!r}; expected 'ate' or 'att'") from None


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _check_binary(values: np.ndarray, what: str) -> None:
    if not np.all((values == 0) | (values == 1)):
        raise DataError(f"non-binary {what}")


@dataclass(frozen=True)
class Dataset:
    """Covariates, treatment, optional outcome and subgroup memberships for N units.

    Subgroups may overlap; a unit can sit in zero, one or several of them.
    Arrays are copied and made read-only on construction.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: Optional[np.ndarray] = None
    subgroups: Optional[np.ndarray] = None
    covariate_names: Sequence[str] = ()
    subgroup_names: Sequence[str] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        Z = np.asarray(self.covariates, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n, m = Z.shape
        if n < 2:
            raise DataError("need at least 2 units (N < 2)")
        if m < 1:
            raise DataError("need at least one covariate")
        if not np.all(np.isfinite(Z)):
            raise DataError("covariates contain missing or non-finite values")
        if np.any(np.ptp(Z, axis=0) == 0):
            bad = int(np.flatnonzero(np.ptp(Z, axis=0) == 0)[0])
            raise DataError(f"constant covariate column {bad}")

        T = np.asarray(self.treatment, dtype=float).ravel()
        if T.shape[0] != n:
            raise DataError("treatment length does not match covariate rows")
        _check_binary(T, "treatment")
        if T.sum() < 1 or T.sum() > n - 1:
            raise DataError("need at least one treated and one untreated unit")

        Y = self.outcome
        if Y is not None:
            Y = np.asarray(Y, dtype=float).ravel()
            if Y.shape[0] != n:
                raise DataError("outcome length does not match covariate rows")
            if not np.all(np.isfinite(Y)):
                raise DataError("outcome contains missing or non-finite values")

        S = self.subgroups
        if S is None:
            S = np.zeros((n, 0))
        S = np.asarray(S, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.shape[0] != n:
            raise DataError("subgroup rows do not match covariate rows")
        _check_binary(S, "subgroup indicator")

        cov_names = list(self.covariate_names) or [f"Z{j + 1}" for j in range(m)]
        sub_names = list(self.subgroup_names) or [f"S{k + 1}" for k in range(S.shape[1])]
        if len(cov_names) != m or len(sub_names) != S.shape[1]:
            raise DataError("name lists do not match array widths")

        object.__setattr__(self, "covariates", _frozen(Z))
        object.__setattr__(self, "treatment", _frozen(T))
        object.__setattr__(self, "outcome", None if Y is None else _frozen(Y))
        object.__setattr__(self, "subgroups", _frozen(S))
        object.__setattr__(self, "covariate_names", tuple(cov_names))
        object.__setattr__(self, "subgroup_names", tuple(sub_names))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_subgroups(self) -> int:
        return self.subgroups.shape[1]

    def subgroup_counts(self):
        """(N_k, N_1k, N_0k) for every subgroup."""
        S, T = self.subgroups, self.treatment
        n_k = S.sum(axis=0).astype(int)
        n1 = (S * T[:, None]).sum(axis=0).astype(int)
        return [(int(a), int(b), int(a - b)) for a, b in zip(n_k, n1)]

    def is_partition(self) -> bool:
        """True when every unit belongs to exactly one subgroup."""
        return self.n_subgroups > 0 and bool(np.all(self.subgroups.sum(axis=1) == 1))


@dataclass(frozen=True)
class DesignMatrix:
    """Balance design with labelled columns.

    ``labels`` holds one ``(kind, subgroup, feature)`` triple per column with
    kind in {"intercept", "subgroup", "feature", "interaction"}; unused
    indices are None.
    """

    values: np.ndarray
    labels: tuple
    feature_names: tuple = ()
    subgroup_names: tuple = ()

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list:
        out = []
        for kind, k, j in self.labels:
            if kind == "intercept":
                out.append("(intercept)")
            elif kind == "subgroup":
                out.append(self.subgroup_names[k])
            elif kind == "feature":
                out.append(self.feature_names[j])
            else:
                out.append(f"{self.subgroup_names[k]}:{self.feature_names[j]}")
        return out

    def constant_combination(self) -> Optional[np.ndarray]:
        """Coefficients c with ``values @ c == 1``, read off the labels, or None."""
        c = np.zeros(self.n_columns)
        kinds = [lab[0] for lab in self.labels]
        if "intercept" in kinds:
            c[kinds.index("intercept")] = 1.0
            return c
        sub_cols = [i for i, kind in enumerate(kinds) if kind == "subgroup"]
        if sub_cols and np.allclose(self.values[:, sub_cols].sum(axis=1), 1.0):
            c[sub_cols] = 1.0
            return c
        return None

    def select(self, columns) -> "DesignMatrix":
        columns = list(columns)
        return DesignMatrix(
            values=_frozen(self.values[:, columns]),
            labels=tuple(self.labels[i] for i in columns),
            feature_names=self.feature_names,
            subgroup_names=self.subgroup_names,
        )


def build_design(features, subgroups=None, feature_names=None, subgroup_names=None) -> DesignMatrix:
    """Construct ``[1, S, F, S_1*F, ..., S_K*F]`` in canonical column order.

    Args:
        features: (N, F) feature matrix (raw covariates or kernel features).
        subgroups: (N, K) binary membership matrix; None or K = 0 gives ``[1, F]``.
        feature_names: optional labels for the F feature columns.
        subgroup_names: optional labels for the K subgroups.

    Returns:
        DesignMatrix with (1 + K)(1 + F) columns.
    """
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    n, f = F.shape
    if f < 1:
        raise DataError("need at least one feature column")
    S = np.zeros((n, 0)) if subgroups is None else np.asarray(subgroups, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] != n:
        raise DataError(f"dimension mismatch: {n} feature rows vs {S.shape[0]} subgroup rows")
    k = S.shape[1]

    blocks = [np.ones((n, 1)), S, F]
    labels = [("intercept", None, None)]
    labels += [("subgroup", s, None) for s in range(k)]
    labels += [("feature", None, j) for j in range(f)]
    for s in range(k):
        blocks.append(S[:, [s]] * F)
        labels += [("interaction", s, j) for j in range(f)]
    values = np.hstack(blocks)

    feature_names = tuple(feature_names) if feature_names is not None else tuple(f"F{j + 1}" for j in range(f))
    subgroup_names = tuple(subgroup_names) if subgroup_names is not None else tuple(f"S{s + 1}" for s in range(k))
    return DesignMatrix(_frozen(values), tuple(labels), feature_names, subgroup_names)


def reduce_design(design: DesignMatrix, tol: float = 1e-10) -> DesignMatrix:
    """Resolve the exact collinearity created by subgroups that cover every unit.

    If some combination of the subgroup indicators equals the all-ones column,
    the intercept is redundant. When interaction columns are present, every
    main-effect feature column is redundant too (it equals the same
    combination of its interaction columns); those are dropped as well,
    which leaves subgroup-specific intercepts and slopes.
    """
    kinds = [lab[0] for lab in design.labels]
    sub_cols = [i for i, kind in enumerate(kinds) if kind == "subgroup"]
    if not sub_cols or "intercept" not in kinds:
        return design
    S = design.values[:, sub_cols]
    c, *_ = np.linalg.lstsq(S, np.ones(S.shape[0]), rcond=None)
    if np.max(np.abs(S @ c - 1.0)) > tol:
        return design
    drop = {"intercept", "feature"} if "interaction" in kinds else {"intercept"}
    return design.select([i for i, kind in enumerate(kinds) if kind not in drop])


def design_for(dataset: Dataset, features=None, feature_names=None, interactions: bool = True,
               use_subgroups: bool = True) -> DesignMatrix:
    """Build and collinearity-reduce the design used by every fitting method.

    ``interactions=False`` gives the main-effects design ``[1, S, F]``.
    """
    if features is None:
        features, feature_names = dataset.covariates, dataset.covariate_names
    S = dataset.subgroups if use_subgroups else None
    names = dataset.subgroup_names if use_subgroups else ()
    design = build_design(features, S, feature_names, names)
    if not interactions:
        design = design.select([i for i, lab in enumerate(design.labels) if lab[0] != "interaction"])
    return reduce_design(design)


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which role."""

    treatment: str
    covariates: Sequence[str]
    outcome: Optional[str] = None
    subgroups: Sequence[str] = ()
    id: Optional[str] = None


def load_csv(path, roles: ColumnRoles) -> Dataset:
    """Read a comma-separated, header-first UTF-8 file into a Dataset."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    if not roles.covariates:
        raise DataError("config must name at least one covariate column")
    df = pd.read_csv(path, sep=",", encoding="utf-8", decimal=".")

    wanted = [roles.treatment, *roles.covariates, *roles.subgroups]
    if roles.outcome:
        wanted.append(roles.outcome)
    if roles.id:
        wanted.append(roles.id)
    for col in wanted:
        if col not in df.columns:
            raise DataError(f"missing column {col!r}")

    def numeric(cols, what):
        block = df[list(cols)]
        try:
            block = block.apply(pd.to_numeric, errors="raise")
        except (ValueError, TypeError):
            raise DataError(f"non-numeric value in {what} columns {list(cols)}") from None
        if block.isna().to_numpy().any():
            raise DataError(f"missing cells in {what} columns {list(cols)}")
        return block.to_numpy(dtype=float)

    T = numeric([roles.treatment], "treatment").ravel()
    _check_binary(T, "treatment")
    Z = numeric(roles.covariates, "covariate")
    S = numeric(roles.subgroups, "subgroup") if roles.subgroups else np.zeros((len(df), 0))
    _check_binary(S, "subgroup indicator")
    Y = numeric([roles.outcome], "outcome").ravel() if roles.outcome else None
    meta = {"source": str(path)}
    if roles.id:
        meta["ids"] = df[roles.id].astype(str).tolist()
    return Dataset(Z, T, Y, S, tuple(roles.covariates), tuple(roles.subgroups), metadata=meta)
