"""Block-count moments of the Cox process and their log-normal inversion.

compute_cox_moments evaluates the expected counts and their covariance by
quadrature over the representative points; moments_to_mpln inverts them into
the mean and covariance of the mixing log-normal. Quadrature can produce
moment pairs no log-normal can express (under-dispersion, indefinite
covariance); those surface as recoverable errors that samplers map to
proposal rejection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import ExponentialKernel, LmcSpec, cholesky
from .domain import BlockPartition
from .errors import ConfigError, DimensionMismatch, MomentMismatch

__all__ = [
    "CoxMoments",
    "MplnParams",
    "expected_intensity",
    "intensity_field",
    "compute_cox_moments",
    "moments_to_mpln",
    "mpln_to_moments",
]


@dataclass(frozen=True)
class CoxMoments:
    """Count mean vector and covariance matrix, component-major (M*L,)."""

    alpha: np.ndarray
    beta: np.ndarray
    M: int
    L: int = 1


@dataclass(frozen=True)
class MplnParams:
    """Mean and covariance of the log intensity vector, plus its factor."""

    mu: np.ndarray
    sigma: np.ndarray
    sigma_chol: np.ndarray
    M: int
    L: int = 1

    @property
    def dim(self) -> int:
        return self.M * self.L


def expected_intensity(x_row: np.ndarray, beta: np.ndarray, sigma2: float):
    """exp(X(s) beta + sigma2 / 2), the intensity averaged over the field."""
    return np.exp(np.asarray(x_row) @ np.asarray(beta) + 0.5 * sigma2)


def intensity_field(
    X: np.ndarray, beta: np.ndarray, kernel: ExponentialKernel | LmcSpec
) -> np.ndarray:
    """Expected intensity at each design row, per component; shape (L, K)."""
    beta = np.atleast_2d(beta)
    if isinstance(kernel, LmcSpec):
        sig2 = kernel.marginal_variance()
    else:
        sig2 = np.array([kernel.sigma2])
    return np.exp(beta @ X.T + 0.5 * sig2[:, None])


def _block_reduce(G: np.ndarray, w_row, w_col, starts):
    """sum_{b in m, c in m'} w_row[b] G[b,c] w_col[c], destructive on G."""
    G *= w_col[None, :]
    G *= w_row[:, None]
    return np.add.reduceat(np.add.reduceat(G, starts, axis=0), starts, axis=1)


def compute_cox_moments(
    X: np.ndarray,
    beta: np.ndarray,
    kernel: ExponentialKernel | LmcSpec,
    partition: BlockPartition,
) -> CoxMoments:
    """Quadrature moments of the block counts at the representative points.

    X is the design matrix at partition.fine_points. The within-block
    Poisson term enters the diagonal only, and only within a component.
    """
    beta = np.atleast_2d(beta)
    if X.shape[0] != partition.K:
        raise DimensionMismatch("design rows must match partition.K")
    M = partition.M
    starts = partition.block_start[:-1]
    # extreme parameter proposals may overflow to inf here; the mismatch
    # check in moments_to_mpln turns that into a recoverable rejection
    with np.errstate(over="ignore", invalid="ignore"):
        return _cox_moments_core(X, beta, kernel, partition, M, starts)


def _cox_moments_core(X, beta, kernel, partition, M, starts):
    lam = intensity_field(X, beta, kernel)  # (L, K)
    w = lam * partition.fine_area[None, :]
    L = lam.shape[0]
    alpha = np.add.reduceat(w, starts, axis=1).reshape(-1)  # (L*M,)

    D = partition.fine_distances()
    B = np.empty((L * M, L * M))
    if isinstance(kernel, LmcSpec):
        rho = [np.exp(-phi * D) for phi in kernel.phis]
        for l in range(L):
            for lp in range(l, L):
                coef = kernel.gamma[l] * kernel.gamma[lp]
                S = coef[0] * rho[0]
                for h in range(1, kernel.H):
                    if coef[h] != 0:
                        S += coef[h] * rho[h]
                G = np.expm1(S, out=S)
                blk = _block_reduce(G, w[l], w[lp], starts)
                B[l * M : (l + 1) * M, lp * M : (lp + 1) * M] = blk
                if lp != l:
                    B[lp * M : (lp + 1) * M, l * M : (l + 1) * M] = blk.T
    else:
        G = np.exp(-kernel.phi * D)
        G *= kernel.sigma2
        np.expm1(G, out=G)
        B[:, :] = _block_reduce(G, w[0], w[0], starts)
    B[np.diag_indices_from(B)] += alpha
    return CoxMoments(alpha=alpha, beta=B, M=M, L=L)


def moments_to_mpln(m: CoxMoments) -> MplnParams:
    """Invert count moments into log-normal parameters.

    Raises MomentMismatch when the counts are not over-dispersed enough for
    a log-normal mixture (diagonal log argument <= 1) or a covariance entry
    pushes the off-diagonal log argument to <= 0; NotPositiveDefinite when
    the resulting covariance fails the jittered factorization.
    """
    a = np.asarray(m.alpha, dtype=float)
    if np.any(a <= 0):
        raise ConfigError("alpha must be strictly positive")
    B = np.asarray(m.beta, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(B))):
        raise MomentMismatch("count moments overflowed; parameters too extreme")
    diag_arg = 1.0 + np.diag(B) / a**2 - 1.0 / a
    if np.any(diag_arg <= 1.0):
        raise MomentMismatch(
            "block variance does not exceed its mean; the log-normal "
            "mixture expresses only overdispersion"
        )
    off_arg = 1.0 + B / np.outer(a, a)
    if np.any(off_arg <= 0.0):
        raise MomentMismatch("off-diagonal covariance argument <= 0")
    sigma = np.log(off_arg)
    sigma[np.diag_indices_from(sigma)] = np.log(diag_arg)
    sigma = 0.5 * (sigma + sigma.T)
    mu = np.log(a) - 0.5 * np.diag(sigma)
    chol = cholesky(sigma)  # NotPositiveDefinite propagates
    return MplnParams(mu=mu, sigma=sigma, sigma_chol=chol, M=m.M, L=m.L)


def mpln_to_moments(p: MplnParams) -> CoxMoments:
    """Forward count moments of the Poisson-log-normal mixture."""
    s_diag = np.diag(p.sigma)
    alpha = np.exp(p.mu + 0.5 * s_diag)
    B = np.outer(alpha, alpha) * np.expm1(p.sigma)
    B[np.diag_indices_from(B)] += alpha
    return CoxMoments(alpha=alpha, beta=B, M=p.M, L=p.L)
