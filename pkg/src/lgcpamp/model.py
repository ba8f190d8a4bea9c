"""Parameter vector layout, priors, and transforms for fitting.

All positive parameters are stored on the log scale so any vector in R^p is
valid; log-prior densities include the change-of-variables Jacobians. The
flat prior on the decay phi is flat on phi itself, so the transformed
density carries a +log(phi) term and hard support bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import ExponentialKernel, LmcSpec
from .errors import ConfigError, DimensionMismatch

__all__ = ["PriorSpec", "ParamSpace", "factor1_pattern"]


@dataclass(frozen=True)
class PriorSpec:
    """Priors: beta ~ N(0, beta_var); phi flat on [phi_lo, phi_hi];
    sigma2 and each squared loading ~ Gamma(2, 1)."""

    beta_var: float = 100.0
    phi_lo: float = 0.01
    phi_hi: float = 50.0

    def __post_init__(self):
        if not (0 < self.phi_lo < self.phi_hi < np.inf):
            raise ConfigError("need 0 < phi_lo < phi_hi < inf")
        if self.beta_var <= 0:
            raise ConfigError("beta_var must be positive")


def factor1_pattern(L: int, H: int) -> np.ndarray:
    """Free-loading mask with a shared first factor plus idiosyncratic
    diagonal factors (the structure of the multivariate simulation)."""
    mask = np.zeros((L, H), dtype=bool)
    mask[:, 0] = True
    for i in range(1, min(L, H)):
        mask[i, i] = True
    return mask


def _log_prior_sigma2(x: float) -> float:
    # sigma2 ~ Gamma(2, 1), x = log(sigma2), Jacobian included
    return 2.0 * x - np.exp(x)


def _log_prior_phi(x: float, lo: float, hi: float) -> float:
    phi = np.exp(x)
    if not (lo <= phi <= hi):
        return -np.inf
    return x  # flat on phi; Jacobian only


def _log_prior_gamma_diag(x: float) -> float:
    # gamma^2 ~ Gamma(2, 1) with gamma > 0, x = log(gamma); density of
    # gamma is 2 gamma^3 e^{-gamma^2}, times the e^x Jacobian
    return 4.0 * x - np.exp(2.0 * x)


def _log_prior_gamma_offdiag(g: float) -> float:
    # gamma^2 ~ Gamma(2, 1), sign symmetric
    if g == 0.0:
        return -np.inf
    return 3.0 * np.log(abs(g)) - g * g


@dataclass
class ParamSpace:
    """Bijection between the flat transformed vector and model pieces.

    Univariate: [beta..., log_sigma2?, log_phi?] (kernel entries dropped
    when fixed, which the toy posterior tests rely on). Multivariate:
    [beta..., log_phi_1..H, free loadings row-major, diagonal on the log
    scale]. beta is shared across components.
    """

    n_cov: int = 0
    L: int = 1
    lmc_H: int | None = None
    gamma_pattern: np.ndarray | None = None
    fix_sigma2: float | None = None
    fix_phi: float | None = None
    prior: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.lmc_H is None:
            if self.L != 1:
                raise ConfigError("multivariate models need lmc_H")
        else:
            if self.fix_sigma2 is not None or self.fix_phi is not None:
                raise ConfigError("fixed kernel entries are univariate-only")
            if self.gamma_pattern is None:
                pat = np.tril(np.ones((self.L, self.lmc_H), dtype=bool))
            else:
                pat = np.asarray(self.gamma_pattern, dtype=bool)
                if pat.shape != (self.L, self.lmc_H):
                    raise DimensionMismatch("gamma_pattern shape")
                if np.any(np.triu(pat, 1)):
                    raise ConfigError("gamma_pattern must be lower-tri")
                if not all(
                    pat[i, i] for i in range(min(self.L, self.lmc_H))
                ):
                    raise ConfigError("gamma_pattern diagonal must be free")
            self.gamma_pattern = pat

    # -- layout ----------------------------------------------------------

    @property
    def n_beta(self) -> int:
        return 1 + self.n_cov

    @property
    def names(self) -> list[str]:
        """Transformed-scale coordinate names."""
        out = [f"beta{j}" for j in range(self.n_beta)]
        if self.lmc_H is None:
            if self.fix_sigma2 is None:
                out.append("log_sigma2")
            if self.fix_phi is None:
                out.append("log_phi")
        else:
            out += [f"log_phi_{h + 1}" for h in range(self.lmc_H)]
            for i, j in zip(*np.nonzero(self.gamma_pattern)):
                tag = "log_gamma" if i == j else "gamma"
                out.append(f"{tag}_{i + 1}{j + 1}")
        return out

    @property
    def natural_names(self) -> list[str]:
        """Column names for chain output, natural scale."""
        out = [f"beta{j}" for j in range(self.n_beta)]
        if self.lmc_H is None:
            if self.fix_sigma2 is None:
                out.append("sigma2")
            if self.fix_phi is None:
                out.append("phi")
        else:
            out += [f"phi_{h + 1}" for h in range(self.lmc_H)]
            out += [
                f"gamma_{i + 1}{j + 1}"
                for i, j in zip(*np.nonzero(self.gamma_pattern))
            ]
        return out

    @property
    def n_params(self) -> int:
        return len(self.names)

    # -- transforms ------------------------------------------------------

    def unpack(self, vec: np.ndarray):
        """(beta rows (L, n_beta), kernel) from a transformed vector."""
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if len(vec) != self.n_params:
            raise DimensionMismatch("parameter vector length")
        nb = self.n_beta
        beta_row = vec[:nb]
        if self.lmc_H is None:
            i = nb
            if self.fix_sigma2 is None:
                sigma2 = np.exp(vec[i])
                i += 1
            else:
                sigma2 = self.fix_sigma2
            phi = np.exp(vec[i]) if self.fix_phi is None else self.fix_phi
            return beta_row[None, :], ExponentialKernel(sigma2, phi)
        H = self.lmc_H
        phis = np.exp(vec[nb : nb + H])
        gamma = np.zeros((self.L, H))
        vals = vec[nb + H :]
        for k, (i, j) in enumerate(zip(*np.nonzero(self.gamma_pattern))):
            gamma[i, j] = np.exp(vals[k]) if i == j else vals[k]
        beta = np.repeat(beta_row[None, :], self.L, axis=0)
        return beta, LmcSpec(gamma, phis)

    def pack(self, beta_row, sigma2=None, phi=None, gamma=None, phis=None):
        """Transformed vector from natural-scale values."""
        out = list(np.asarray(beta_row, dtype=float).reshape(-1))
        if len(out) != self.n_beta:
            raise DimensionMismatch("beta length")
        if self.lmc_H is None:
            if self.fix_sigma2 is None:
                out.append(np.log(sigma2))
            if self.fix_phi is None:
                out.append(np.log(phi))
        else:
            out += list(np.log(np.asarray(phis, dtype=float)))
            gamma = np.asarray(gamma, dtype=float)
            for i, j in zip(*np.nonzero(self.gamma_pattern)):
                out.append(np.log(gamma[i, j]) if i == j else gamma[i, j])
        return np.array(out)

    def to_natural(self, vec: np.ndarray) -> np.ndarray:
        """Natural-scale values aligned with natural_names."""
        beta, kernel = self.unpack(vec)
        out = list(beta[0])
        if self.lmc_H is None:
            if self.fix_sigma2 is None:
                out.append(kernel.sigma2)
            if self.fix_phi is None:
                out.append(kernel.phi)
        else:
            out += list(kernel.phis)
            out += [
                kernel.gamma[i, j]
                for i, j in zip(*np.nonzero(self.gamma_pattern))
            ]
        return np.array(out)

    def from_natural(self, values: np.ndarray) -> np.ndarray:
        """Transformed vector from a natural_names-aligned row."""
        values = np.asarray(values, dtype=float).reshape(-1)
        if len(values) != len(self.natural_names):
            raise DimensionMismatch("natural values length")
        nb = self.n_beta
        if self.lmc_H is None:
            i = nb
            kw = {}
            if self.fix_sigma2 is None:
                kw["sigma2"] = values[i]
                i += 1
            if self.fix_phi is None:
                kw["phi"] = values[i]
            return self.pack(values[:nb], **kw)
        H = self.lmc_H
        gamma = np.zeros((self.L, H))
        for k, (i, j) in enumerate(zip(*np.nonzero(self.gamma_pattern))):
            gamma[i, j] = values[nb + H + k]
        return self.pack(values[:nb], gamma=gamma, phis=values[nb : nb + H])

    # -- prior -----------------------------------------------------------

    def log_prior(self, vec: np.ndarray) -> float:
        vec = np.asarray(vec, dtype=float).reshape(-1)
        nb = self.n_beta
        lp = -0.5 * np.sum(vec[:nb] ** 2) / self.prior.beta_var
        if self.lmc_H is None:
            i = nb
            if self.fix_sigma2 is None:
                lp += _log_prior_sigma2(vec[i])
                i += 1
            if self.fix_phi is None:
                lp += _log_prior_phi(vec[i], self.prior.phi_lo, self.prior.phi_hi)
            return lp
        H = self.lmc_H
        for h in range(H):
            lp += _log_prior_phi(vec[nb + h], self.prior.phi_lo, self.prior.phi_hi)
        vals = vec[nb + H :]
        for k, (i, j) in enumerate(zip(*np.nonzero(self.gamma_pattern))):
            if i == j:
                lp += _log_prior_gamma_diag(vals[k])
            else:
                lp += _log_prior_gamma_offdiag(vals[k])
        return lp

    # -- initialization --------------------------------------------------

    def init_vector(
        self, n_points: int, area: float, counts: np.ndarray | None = None
    ) -> np.ndarray:
        """Cheap starting point: intercept from the mean intensity,
        moderate kernel values, small off-diagonal loadings.

        The off-diagonal loading density vanishes at zero, so each sign
        basin is a separate mode; when block counts (L, M) are given, the
        empirical correlation between component i and the factor's anchor
        component j picks the starting sign of loading (i, j)."""
        if self.lmc_H is None:
            sigma2 = self.fix_sigma2 if self.fix_sigma2 is not None else 1.0
            phi = self.fix_phi if self.fix_phi is not None else 1.0
            phi = float(np.clip(phi, self.prior.phi_lo, self.prior.phi_hi))
            beta = np.zeros(self.n_beta)
            beta[0] = np.log(max(n_points, 1) / area) - 0.5 * sigma2
            kw = {}
            if self.fix_sigma2 is None:
                kw["sigma2"] = sigma2
            if self.fix_phi is None:
                kw["phi"] = phi
            return self.pack(beta, **kw)
        H = self.lmc_H
        gamma = np.where(self.gamma_pattern, 0.1, 0.0)
        np.fill_diagonal(gamma, 1.0)
        if counts is not None:
            counts = np.atleast_2d(np.asarray(counts, dtype=float))
            for i, j in zip(*np.nonzero(self.gamma_pattern)):
                if i == j or j >= counts.shape[0]:
                    continue
                r = np.corrcoef(counts[i], counts[j])[0, 1]
                if np.isfinite(r) and r != 0.0:
                    gamma[i, j] = 0.5 * np.sign(r)
        phis = np.clip(
            np.full(H, 1.0), self.prior.phi_lo, self.prior.phi_hi
        )
        sig2 = (gamma**2).sum(axis=1).mean()
        beta = np.zeros(self.n_beta)
        beta[0] = np.log(max(n_points, 1) / (self.L * area)) - 0.5 * sig2
        return self.pack(beta, gamma=gamma, phis=phis)
