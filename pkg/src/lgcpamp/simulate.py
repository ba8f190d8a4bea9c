"""Synthetic LGCP realizations on a regular simulation grid.

The latent field is sampled jointly at the simulation-grid cell centers,
each cell then receives a Poisson count with mean lambda(u_k) * area and
that many points placed uniformly inside the cell. Exact for the
grid-discretized process; the simulation grid is deliberately distinct from
the inference partition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import (
    ExponentialKernel,
    LmcSpec,
    cholesky,
    corr_matrix,
    cov_matrix,
    sample_gp,
)
from .domain import Domain, PointPattern, design_matrix
from .errors import ConfigError, Overflow

__all__ = ["LgcpModel", "SimulatedField", "simulate_lgcp"]

_MAX_CELL_MEAN = 1e9


@dataclass(frozen=True)
class LgcpModel:
    """Intensity model log lambda_l(s) = X(s) beta[l] + z_l(s)."""

    beta: np.ndarray  # (L, 1 + n_covariates)
    kernel: ExponentialKernel | LmcSpec
    covariates: tuple = ()

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if beta.shape[1] != 1 + len(self.covariates):
            raise ConfigError(
                "beta must have one intercept plus one coefficient "
                "per covariate"
            )
        L = self.L_from_kernel(self.kernel)
        if beta.shape[0] == 1 and L > 1:
            beta = np.repeat(beta, L, axis=0)
        if beta.shape[0] != L:
            raise ConfigError("beta rows must match the number of components")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "covariates", tuple(self.covariates))

    @staticmethod
    def L_from_kernel(kernel) -> int:
        return kernel.L if isinstance(kernel, LmcSpec) else 1

    @property
    def L(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class SimulatedField:
    """Latent field on the simulation grid, kept for oracle checks."""

    points: np.ndarray  # (K, 2) cell centers
    z: np.ndarray  # (L, K)
    cell_area: float
    dims: tuple[int, int]  # (rows, cols)


def _grid_centers(domain: Domain, dims):
    rows, cols = dims
    x0, x1, y0, y1 = domain.bounds
    dx, dy = (x1 - x0) / cols, (y1 - y0) / rows
    xc = x0 + (np.arange(cols) + 0.5) * dx
    yc = y0 + (np.arange(rows) + 0.5) * dy
    gx, gy = np.meshgrid(xc, yc)
    return np.column_stack([gx.ravel(), gy.ravel()]), dx, dy


def sample_latent(kernel, pts: np.ndarray, rng) -> np.ndarray:
    """Joint draw of the latent field(s) at the given locations, (L, K)."""
    if isinstance(kernel, LmcSpec):
        fields = np.empty((kernel.H, len(pts)))
        for h in range(kernel.H):
            chol = cholesky(corr_matrix(kernel.phis[h], pts))
            fields[h] = sample_gp(chol, rng.standard_normal(len(pts)))
        return kernel.gamma @ fields
    if kernel.sigma2 == 0:
        return np.zeros((1, len(pts)))
    chol = cholesky(cov_matrix(kernel, pts))
    return sample_gp(chol, rng.standard_normal(len(pts)))[None, :]


def simulate_lgcp(
    model: LgcpModel,
    domain: Domain,
    sim_grid: tuple[int, int] = (64, 64),
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[PointPattern, SimulatedField]:
    if rng is None:
        rng = np.random.default_rng(seed)
    pts, dx, dy = _grid_centers(domain, sim_grid)
    area = dx * dy
    inside = np.ones(len(pts), dtype=bool)
    if domain.mask is not None:
        # nearest-sample the mask onto the simulation grid
        ny, nx = domain.mask.shape
        x0, _, y0, _ = domain.bounds
        ix = np.clip(
            ((pts[:, 0] - x0) / domain.width * nx).astype(int), 0, nx - 1
        )
        iy = np.clip(
            ((pts[:, 1] - y0) / domain.height * ny).astype(int), 0, ny - 1
        )
        inside = domain.mask[iy, ix]

    z = sample_latent(model.kernel, pts, rng)
    X = design_matrix(model.covariates, pts)
    log_lam = X @ model.beta.T + z.T  # (K, L)
    mean = np.exp(log_lam) * area
    mean[~inside] = 0.0
    if np.any(mean > _MAX_CELL_MEAN):
        raise Overflow("a cell mean exceeds 1e9; refine sim_grid or model")

    counts = rng.poisson(mean)  # (K, L)
    out_pts, out_labels = [], []
    for l in range(model.L):
        idx = np.repeat(np.arange(len(pts)), counts[:, l])
        if len(idx) == 0:
            continue
        jitter = rng.uniform(-0.5, 0.5, size=(len(idx), 2))
        out_pts.append(pts[idx] + jitter * [dx, dy])
        out_labels.append(np.full(len(idx), l + 1))
    if out_pts:
        points = np.concatenate(out_pts)
        labels = np.concatenate(out_labels)
    else:
        points = np.empty((0, 2))
        labels = np.empty(0, dtype=int)
    pattern = PointPattern(points, labels, L=model.L)
    return pattern, SimulatedField(pts, z, area, tuple(sim_grid))
