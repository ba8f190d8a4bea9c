"""Stage 2: conditional latent-field sampling and mixture pooling.

Given each retained parameter draw, the latent Gaussian field on the fine
grid is sampled by elliptical slice sampling (one Cholesky per draw), and
the per-parameter conditional samples are pooled with uniform weights into
the marginal field posterior. Embarrassingly parallel across parameter
draws; per-draw seeds are split from the master seed by index so results
do not depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .covariance import LmcSpec, cholesky, corr_matrix, cov_matrix
from .domain import BlockPartition, design_matrix, fine_count_matrix
from .errors import ConfigError, DimensionMismatch, Diverged

__all__ = [
    "LatentDraws",
    "grid_loglik",
    "elliptical_slice_step",
    "sample_latent_given_theta",
    "mix_latent_posterior",
    "map_estimate",
    "run_latent_stage",
]


@dataclass(frozen=True)
class LatentDraws:
    """Thinned conditional draws of the latent field for one parameter."""

    theta_index: int
    z_samples: np.ndarray  # (n_samples, L, K)
    thin: int
    n_samples: int


def grid_loglik(
    counts: np.ndarray,
    X: np.ndarray,
    beta: np.ndarray,
    z: np.ndarray,
    areas: np.ndarray,
) -> float:
    """Grid-approximated log likelihood, the |D| constant dropped.

    counts and z are (L, K); absolute values are comparable only within a
    run because of the dropped constant.
    """
    counts = np.atleast_2d(counts)
    z = np.atleast_2d(z)
    if z.shape != counts.shape or z.shape[1] != X.shape[0]:
        raise DimensionMismatch("counts, z and design must agree on (L, K)")
    log_lam = np.atleast_2d(beta) @ X.T + z
    return float((counts * log_lam).sum() - (np.exp(log_lam) * areas).sum())


def elliptical_slice_step(nu, loglik_fn, rng, cur_loglik=None):
    """One elliptical slice update of a standard-normal-scale field.

    Proposes along nu cos(w) + eta sin(w), shrinking the angle bracket
    toward 0 on rejection; always terminates. Returns (nu', loglik').
    """
    if cur_loglik is None:
        cur_loglik = loglik_fn(nu)
    eta = rng.standard_normal(np.shape(nu))
    log_y = cur_loglik + np.log(rng.uniform())
    w = rng.uniform(0.0, 2.0 * np.pi)
    w_min, w_max = w - 2.0 * np.pi, w
    while True:
        prop = nu * np.cos(w) + eta * np.sin(w)
        ll = loglik_fn(prop)
        if ll > log_y:
            return prop, ll
        if w < 0.0:
            w_min = w
        else:
            w_max = w
        w = rng.uniform(w_min, w_max)


def _latent_chols(kernel, pts):
    """Per-factor lower factors; one entry for the univariate kernel."""
    if isinstance(kernel, LmcSpec):
        return [
            cholesky(corr_matrix(phi, pts)) for phi in kernel.phis
        ]
    return [cholesky(cov_matrix(kernel, pts))]


def _field_from_white(kernel, chols, nu):
    """(L, K) latent field from white noise nu of shape (H, K) or (1, K)."""
    fields = np.stack([c @ n for c, n in zip(chols, nu)])
    if isinstance(kernel, LmcSpec):
        return kernel.gamma @ fields
    return fields


def sample_latent_given_theta(
    beta: np.ndarray,
    kernel,
    counts: np.ndarray,
    X: np.ndarray,
    areas: np.ndarray,
    pts: np.ndarray,
    n_samples: int = 200,
    thin: int = 1,
    burn: int = 200,
    seed=None,
    theta_index: int = 0,
) -> LatentDraws:
    """Elliptical slice chain on the white-noise scale at fixed parameters."""
    if n_samples < 1 or thin < 1 or burn < 0:
        raise ConfigError("need n_samples >= 1, thin >= 1, burn >= 0")
    rng = np.random.default_rng(seed)
    chols = _latent_chols(kernel, pts)
    beta = np.atleast_2d(beta)
    counts = np.atleast_2d(counts)
    n_fields = len(chols)
    K = len(pts)

    def loglik(nu):
        z = _field_from_white(kernel, chols, nu)
        return grid_loglik(counts, X, beta, z, areas)

    nu = np.zeros((n_fields, K))
    ll = loglik(nu)
    for _ in range(burn):
        nu, ll = elliptical_slice_step(nu, loglik, rng, ll)
    out = np.empty((n_samples, counts.shape[0], K))
    for i in range(n_samples):
        for _ in range(thin):
            nu, ll = elliptical_slice_step(nu, loglik, rng, ll)
        out[i] = _field_from_white(kernel, chols, nu)
    return LatentDraws(theta_index, out, thin=thin, n_samples=n_samples)


def mix_latent_posterior(per_theta: list[LatentDraws]) -> np.ndarray:
    """Pool conditional draws with uniform weights; (N, L, K).

    MCMC draws of the parameters already carry their posterior
    frequencies, so pooling equal numbers per retained draw targets the
    marginal field posterior.
    """
    if not per_theta:
        raise ConfigError("nothing to pool")
    shape = per_theta[0].z_samples.shape
    n = per_theta[0].n_samples
    for d in per_theta:
        if d.z_samples.shape != shape or d.n_samples != n:
            raise DimensionMismatch("per-theta draws differ in shape")
    ordered = sorted(per_theta, key=lambda d: d.theta_index)
    return np.concatenate([d.z_samples for d in ordered])


def map_estimate(
    counts: np.ndarray,
    X: np.ndarray,
    chol: np.ndarray,
    areas: np.ndarray,
    kappa_beta: float = 100.0,
    step_nu: float = 1e-4,
    step_beta: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 200_000,
    nu0=None,
    beta0=None,
):
    """Joint posterior mode of (nu, beta) at fixed covariance parameters.

    Plain gradient ascent with fixed step sizes; raises Diverged when the
    objective decreases for 10 consecutive iterations (steps too large).
    Univariate only: counts is (K,), z = chol @ nu.
    """
    counts = np.asarray(counts, dtype=float).reshape(-1)
    K = len(counts)
    nu = np.zeros(K) if nu0 is None else np.asarray(nu0, dtype=float).copy()
    beta = (
        np.zeros(X.shape[1])
        if beta0 is None
        else np.asarray(beta0, dtype=float).copy()
    )

    def objective(nu, beta):
        z = chol @ nu
        ll = grid_loglik(counts, X, beta, z, areas)
        return ll - 0.5 * nu @ nu - 0.5 * beta @ beta / kappa_beta

    f = objective(nu, beta)
    bad = 0
    for _ in range(max_iter):
        z = chol @ nu
        e = np.exp(X @ beta + z) * areas
        grad_nu = chol.T @ (counts - e) - nu
        grad_beta = X.T @ (counts - e) - beta / kappa_beta
        if max(
            np.abs(grad_nu).max(initial=0.0), np.abs(grad_beta).max(initial=0.0)
        ) < tol:
            return nu, beta
        nu = nu + step_nu * grad_nu
        beta = beta + step_beta * grad_beta
        f_new = objective(nu, beta)
        bad = bad + 1 if f_new < f else 0
        if bad >= 10:
            raise Diverged("objective decreased 10 times; shrink step sizes")
        f = f_new
    return nu, beta


def _stage2_task(args):
    (beta, kernel, counts, X, areas, pts, n_samples, thin, burn, seed, idx) = args
    return sample_latent_given_theta(
        beta, kernel, counts, X, areas, pts, n_samples, thin, burn, seed, idx
    )


def run_latent_stage(
    chain,
    space,
    pattern,
    partition: BlockPartition,
    covariates=(),
    thin_theta: int = 10,
    n_samples: int = 200,
    thin: int = 1,
    burn: int = 200,
    seed=None,
    n_workers: int = 1,
) -> tuple[np.ndarray, list[LatentDraws]]:
    """Stage-2 sampling for every thin_theta-th retained parameter draw."""
    counts = fine_count_matrix(pattern, partition)
    X = design_matrix(covariates, partition.fine_points)
    idxs = list(range(0, len(chain), thin_theta))
    seeds = np.random.SeedSequence(seed).spawn(len(chain))
    tasks = []
    for idx in idxs:
        vec = space.from_natural(chain.draws[idx])
        beta, kernel = space.unpack(vec)
        tasks.append(
            (
                beta,
                kernel,
                counts,
                X,
                partition.fine_area,
                partition.fine_points,
                n_samples,
                thin,
                burn,
                seeds[idx],
                idx,
            )
        )
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            per_theta = list(pool.map(_stage2_task, tasks))
    else:
        per_theta = [_stage2_task(t) for t in tasks]
    return mix_latent_posterior(per_theta), per_theta
