"""Covariance kernels, Cholesky with a jitter ladder, pair correlations.

Supports the isotropic exponential kernel and the linear model of
coregionalization built from unit-variance exponential factor correlations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DimensionMismatch, NotPositiveDefinite

__all__ = [
    "ExponentialKernel",
    "LmcSpec",
    "cov_matrix",
    "corr_matrix",
    "cholesky",
    "pair_correlation",
    "cross_pair_correlation",
    "sample_gp",
]

# jitter ladder, relative to mean diagonal
_JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class ExponentialKernel:
    """C(u, v) = sigma2 * exp(-phi * ||u - v||)."""

    sigma2: float
    phi: float

    def __post_init__(self):
        if self.sigma2 < 0 or self.phi <= 0:
            raise ConfigError("sigma2 must be >= 0 and phi > 0")


@dataclass(frozen=True)
class LmcSpec:
    """Coregionalization: z_l(s) = sum_h gamma[l, h] * nu_h(s).

    The nu_h are independent unit-variance fields with exponential
    correlation exp(-phis[h] * d). gamma is (L, H) lower-triangular with a
    strictly positive diagonal.
    """

    gamma: np.ndarray
    phis: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        phis = np.asarray(self.phis, dtype=float).reshape(-1)
        if gamma.ndim != 2 or gamma.shape[1] != len(phis):
            raise DimensionMismatch("gamma must be (L, H) with H = len(phis)")
        L, H = gamma.shape
        if H > L:
            raise ConfigError("H must be <= L")
        if np.any(np.triu(gamma, 1) != 0):
            raise ConfigError("gamma must be lower-triangular")
        if np.any(np.diag(gamma)[: min(L, H)] <= 0):
            raise ConfigError("gamma diagonal must be strictly positive")
        if np.any(phis <= 0):
            raise ConfigError("phis must be strictly positive")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "phis", phis)

    @property
    def L(self) -> int:
        return self.gamma.shape[0]

    @property
    def H(self) -> int:
        return self.gamma.shape[1]

    def marginal_variance(self) -> np.ndarray:
        """Per-component variance sum_h gamma[l, h]^2."""
        return (self.gamma**2).sum(axis=1)


def cov_matrix(kernel: ExponentialKernel, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if len(pts) == 0:
        raise ConfigError("empty point set")
    return kernel.sigma2 * np.exp(-kernel.phi * cdist(pts, pts))


def corr_matrix(phi: float, pts: np.ndarray) -> np.ndarray:
    """Unit-variance exponential correlation matrix (LMC factors)."""
    return cov_matrix(ExponentialKernel(1.0, phi), pts)


def cholesky(matrix: np.ndarray, jitters=_JITTERS) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    matrix = np.asarray(matrix, dtype=float)
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    base = np.trace(matrix) / len(matrix)
    eye = np.eye(len(matrix))
    for j in jitters:
        try:
            return np.linalg.cholesky(matrix + j * base * eye)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"factorization failed after jitter up to {jitters[-1]:g} * mean diag"
    )


def _dist(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.sqrt(((u - v) ** 2).sum(axis=-1))


def pair_correlation(kernel: ExponentialKernel, u, v):
    """g(u, v) = exp(C(u, v)) for the univariate process."""
    d = _dist(u, v)
    return np.exp(kernel.sigma2 * np.exp(-kernel.phi * d))


def cross_pair_correlation(lmc: LmcSpec, l: int, lp: int, u, v):
    """g^{l,l'}(u, v) = exp(sum_h rho_h(u, v) gamma[l,h] gamma[l',h]).

    Component indices are 1-based. Values below 1 indicate negative
    dependence (opposite-sign loadings on a shared factor).
    """
    if not (1 <= l <= lmc.L and 1 <= lp <= lmc.L):
        raise ConfigError("component index out of range")
    d = _dist(u, v)
    rho = np.exp(-np.multiply.outer(lmc.phis, d))
    coef = lmc.gamma[l - 1] * lmc.gamma[lp - 1]
    return np.exp(np.tensordot(coef, rho, axes=(0, 0)))


def sample_gp(chol: np.ndarray, standard_normals: np.ndarray) -> np.ndarray:
    """Correlated field z = L @ nu from white noise nu."""
    chol = np.asarray(chol, dtype=float)
    nu = np.asarray(standard_normals, dtype=float)
    if nu.shape[0] != chol.shape[1]:
        raise DimensionMismatch(
            f"factor is {chol.shape}, noise has leading dim {nu.shape[0]}"
        )
    return chol @ nu
