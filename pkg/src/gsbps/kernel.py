"""Gaussian kernel, kernel-PCA features and the bandwidth candidate grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .exceptions import DataError, NumericalError

N_BANDWIDTHS = 20


@dataclass(frozen=True)
class KernelFeatures:
    features: np.ndarray
    eigenvalues: np.ndarray
    sigma: float
    variance_threshold: float
    l99: int

    @property
    def names(self):
        return tuple(f"omega{j + 1}" for j in range(self.l99))


def standardize_columns(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    sd = Z.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (Z - Z.mean(axis=0)) / sd


def squared_distances(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return squareform(pdist(Z, "sqeuclidean"))


def gaussian_kernel(Z, sigma: float, sq_dists=None) -> np.ndarray:
    """``K[i, j] = exp(-||z_i - z_j||^2 / sigma)``.

    ``sigma`` carries squared-distance units. Pass ``sq_dists`` to reuse a
    precomputed distance matrix across bandwidths.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    D2 = squared_distances(Z) if sq_dists is None else sq_dists
    return np.exp(-D2 / sigma)


def truncation_rank(eigenvalues, variance_threshold: float) -> int:
    """Smallest l whose leading eigenvalues carry ``variance_threshold`` of the total."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = np.clip(lam, 0.0, None).sum()
    if total <= 0:
        raise NumericalError("kernel matrix has no positive eigenvalues")
    share = np.cumsum(lam) / total
    # guard against the last share landing a hair under 1.0
    l = int(np.searchsorted(share, variance_threshold - 1e-12, side="left")) + 1
    return min(l, int(np.sum(lam > 0)) or 1, len(lam))


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def kpca_features(Kmat, variance_threshold: float = 0.99, sigma: float = float("nan")) -> KernelFeatures:
    """Eigen-features ``omega = P D^{1/2}`` truncated at the variance threshold.

    The kernel is decomposed uncentred; the design intercept absorbs the mean.
    One full divide-and-conquer decomposition is used; at these sizes it beats
    an eigenvalue pass followed by a partial eigenvector solve. Each
    eigenvector's largest-magnitude entry is made positive.
    """
    K = np.asarray(Kmat, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DataError("kernel matrix must be square")
    if not np.allclose(K, K.T, atol=1e-12 * max(1.0, np.abs(K).max())):
        raise DataError("kernel matrix must be symmetric")
    if not 0 < variance_threshold <= 1:
        raise ValueError("variance_threshold must be in (0, 1]")
    n = K.shape[0]
    try:
        vals_all, vecs_all = linalg.eigh(K, driver="evd")
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-decomposition failed: {exc}") from exc
    # stable descending order keeps tied eigenpairs in solver order
    order = np.argsort(-vals_all, kind="stable")
    lam = vals_all[order]
    l = truncation_rank(lam, variance_threshold)
    vals, vecs = lam[:l], _fix_signs(vecs_all[:, order[:l]])
    omega = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return KernelFeatures(omega, lam, float(sigma), float(variance_threshold), l)


def bandwidth_grid(Z, n: int = N_BANDWIDTHS, lower: float = 0.1, upper: float = 0.9,
                   standardize: bool = True, distance: str = "euclidean") -> np.ndarray:
    """Log-spaced candidates between the lower and upper quantiles of pairwise distances.

    Quantiles use linear interpolation between order statistics.

    Args:
        distance: "euclidean" (default) or "sqeuclidean". The kernel divides
            squared distances by sigma, so the squared variant puts the grid
            on the same scale as the kernel argument.
    """
    if distance not in ("euclidean", "sqeuclidean"):
        raise ValueError("distance must be 'euclidean' or 'sqeuclidean'")
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] < 2:
        raise DataError("need at least two rows for a bandwidth grid")
    if standardize:
        Z = standardize_columns(Z)
    d = pdist(Z, distance)
    if not np.any(d > 0):
        raise DataError("all pairwise distances are zero")
    lo, hi = np.quantile(d, [lower, upper], method="linear")
    return grid_from_range(lo, hi, n)


def grid_from_range(lo: float, hi: float, n: int = N_BANDWIDTHS) -> np.ndarray:
    if lo == hi:
        return np.full(n, float(lo))
    return np.exp(np.linspace(np.log(lo), np.log(hi), n))


def kernel_features(Z, sigma: float, variance_threshold: float = 0.99, standardize: bool = True,
                    sq_dists=None) -> KernelFeatures:
    """Kernel matrix plus truncated eigen-features for one bandwidth."""
    if sq_dists is None:
        Zs = standardize_columns(Z) if standardize else np.asarray(Z, dtype=float)
        sq_dists = squared_distances(Zs)
    return kpca_features(gaussian_kernel(None, sigma, sq_dists), variance_threshold, sigma)
