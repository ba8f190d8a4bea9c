"""Joint MCMC baselines: elliptical-slice-within-MH and MMALA.

Both samplers work on the grid-approximated likelihood with the latent
field represented on the white-noise scale (z = L nu), so covariance
parameter moves never evaluate the field prior directly. The field
preconditioner is computed once at initialization and frozen; the
regression-coefficient preconditioner is refreshed every iteration.
Univariate models only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import pdist

from .chain import Chain
from .covariance import ExponentialKernel, cholesky, cov_matrix
from .domain import (
    BlockPartition,
    PointPattern,
    design_matrix,
    fine_count_matrix,
)
from .errors import ConfigError, NotPositiveDefinite
from .latent import elliptical_slice_step, grid_loglik, map_estimate
from .model import PriorSpec, _log_prior_phi, _log_prior_sigma2

__all__ = [
    "MmalaConfig",
    "mmala_preconditioners",
    "mmala_step",
    "initialize_from_map",
    "run_mmala",
    "run_ess_joint",
    "zeta_from_pcf",
]


@dataclass(frozen=True)
class MmalaConfig:
    """Step-size constants and the Langevin target acceptance rate."""

    kappa_beta: float = 100.0
    c: float = 0.4
    target_accept: float = 0.574
    adapt_exponent: float = 0.6

    def sigma_nu2(self, dim_nu: int) -> float:
        return 1.65**2 / dim_nu ** (1.0 / 3.0)

    def sigma_beta2(self, dim_beta: int) -> float:
        return 1.65**2 / dim_beta ** (1.0 / 3.0)

    def sigma_zeta2(self, dim_zeta: int) -> float:
        return 2.38**2 / dim_zeta


def mmala_preconditioners(
    X: np.ndarray,
    beta: np.ndarray,
    sigma2: float,
    areas: np.ndarray,
    chol: np.ndarray,
    kappa_beta: float,
):
    """Expected-information preconditioners for the field and coefficients.

    D is diagonal with entries exp(X beta + sigma2/2) * area, the expected
    cell counts.
    """
    d = np.exp(X @ beta + 0.5 * sigma2) * areas
    M_nu = chol.T @ (d[:, None] * chol) + np.eye(len(d))
    M_beta = X.T @ (d[:, None] * X) + np.eye(X.shape[1]) / kappa_beta
    return M_nu, M_beta


@dataclass
class JointState:
    """Current position and adaptation state of a joint baseline chain."""

    nu: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray  # (log_sigma2, log_phi)
    chol: np.ndarray  # field factor at the current zeta
    log_s0: float = 0.0  # global scale for the field block
    log_s1: float = 0.0  # global scale for the (beta, zeta) block
    zeta_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    zeta_cov: np.ndarray = field(default_factory=lambda: np.eye(2))
    n_zeta: int = 0
    iteration: int = 0


class _JointContext:
    """Precomputed data shared by every iteration of a baseline chain."""

    def __init__(self, pattern, partition, covariates, prior, config):
        self.counts = fine_count_matrix(pattern, partition)[0].astype(float)
        self.X = design_matrix(covariates, partition.fine_points)
        self.areas = partition.fine_area
        self.pts = partition.fine_points
        self.prior = prior
        self.config = config

    def loglik(self, beta, z):
        return grid_loglik(
            self.counts[None, :], self.X, beta[None, :], z[None, :], self.areas
        )

    def log_prior_beta(self, beta):
        return -0.5 * beta @ beta / self.config.kappa_beta

    def log_prior_zeta(self, zeta):
        return _log_prior_sigma2(zeta[0]) + _log_prior_phi(
            zeta[1], self.prior.phi_lo, self.prior.phi_hi
        )

    def field_chol(self, zeta):
        kernel = ExponentialKernel(np.exp(zeta[0]), np.exp(zeta[1]))
        return cholesky(cov_matrix(kernel, self.pts))


def _adapt_rate(iteration: int, exponent: float) -> float:
    return (iteration + 1) ** -exponent


def _nu_langevin_update(state, ctx, mnu_chol, rng, adapt):
    """Preconditioned Langevin MH update of the field block."""
    cfg = ctx.config
    K = len(state.nu)
    scale = np.exp(state.log_s0) * cfg.sigma_nu2(K)

    def grad(nu, e):
        return state.chol.T @ (ctx.counts - e) - nu

    z = state.chol @ state.nu
    e = np.exp(ctx.X @ state.beta + z) * ctx.areas
    g = grad(state.nu, e)
    mean_fwd = state.nu + 0.5 * scale * cho_solve((mnu_chol, True), g)
    prop = mean_fwd + np.sqrt(scale) * solve_triangular(
        mnu_chol.T, rng.standard_normal(K), lower=False
    )

    z_p = state.chol @ prop
    with np.errstate(over="ignore"):
        e_p = np.exp(ctx.X @ state.beta + z_p) * ctx.areas
    accept_prob = 0.0
    if np.isfinite(e_p).all():
        g_p = grad(prop, e_p)
        mean_rev = prop + 0.5 * scale * cho_solve((mnu_chol, True), g_p)

        def quad(x):
            return (mnu_chol.T @ x) @ (mnu_chol.T @ x)

        d_target = (
            ctx.loglik(state.beta, z_p)
            - 0.5 * prop @ prop
            - ctx.loglik(state.beta, z)
            + 0.5 * state.nu @ state.nu
        )
        d_q = (quad(prop - mean_fwd) - quad(state.nu - mean_rev)) / (2.0 * scale)
        log_ratio = d_target + d_q
        accept_prob = float(min(1.0, np.exp(min(log_ratio, 0.0))))
        if rng.uniform() < accept_prob:
            state.nu = prop
    if adapt:
        state.log_s0 += _adapt_rate(state.iteration, cfg.adapt_exponent) * (
            accept_prob - cfg.target_accept
        )
    return accept_prob


def _beta_zeta_update(state, ctx, rng, adapt, update_zeta=True):
    """Joint MH update of (beta, zeta): Langevin drift on beta with the
    refreshed preconditioner, zero-drift Gaussian on zeta. With
    update_zeta=False the zeta coordinates are held fixed (beta-only MH)."""
    cfg = ctx.config
    p = len(state.beta)
    s1 = np.exp(state.log_s1)
    scale_b = s1 * cfg.sigma_beta2(p)
    scale_z = s1 * cfg.c * cfg.sigma_zeta2(len(state.zeta))
    sigma2 = np.exp(state.zeta[0])

    def precond_chol(beta, sigma2):
        _, m_beta = mmala_preconditioners(
            ctx.X, beta, sigma2, ctx.areas, state.chol, cfg.kappa_beta
        )
        return np.linalg.cholesky(m_beta)

    def q_log(lb, x, mean):
        y = lb.T @ (x - mean)
        return np.log(np.diag(lb)).sum() - 0.5 * y @ y / scale_b

    z = state.chol @ state.nu
    e = np.exp(ctx.X @ state.beta + z) * ctx.areas
    lb = precond_chol(state.beta, sigma2)
    g = ctx.X.T @ (ctx.counts - e) - state.beta / cfg.kappa_beta
    mean_fwd = state.beta + 0.5 * scale_b * cho_solve((lb, True), g)
    prop_b = mean_fwd + np.sqrt(scale_b) * solve_triangular(
        lb.T, rng.standard_normal(p), lower=False
    )
    if update_zeta:
        zeta_cov = state.zeta_cov if state.n_zeta >= 100 else np.eye(2)
        prop_z = state.zeta + np.sqrt(scale_z) * np.linalg.cholesky(
            zeta_cov + 1e-12 * np.eye(2)
        ) @ rng.standard_normal(2)
    else:
        prop_z = state.zeta.copy()

    accept_prob = 0.0
    lp_z = ctx.log_prior_zeta(prop_z)
    if np.isfinite(lp_z):
        try:
            chol_p = ctx.field_chol(prop_z)
        except NotPositiveDefinite:
            chol_p = None
        if chol_p is not None:
            z_p = chol_p @ state.nu
            with np.errstate(over="ignore"):
                e_p = np.exp(ctx.X @ prop_b + z_p) * ctx.areas
            if np.isfinite(e_p).all():
                sigma2_p = np.exp(prop_z[0])
                # reverse beta proposal at the proposed state; the field
                # factor inside M_beta is the frozen initialization one,
                # but D is refreshed
                lb_p = precond_chol(prop_b, sigma2_p)
                g_p = ctx.X.T @ (ctx.counts - e_p) - prop_b / cfg.kappa_beta
                mean_rev = prop_b + 0.5 * scale_b * cho_solve((lb_p, True), g_p)
                d_target = (
                    ctx.loglik(prop_b, z_p)
                    + ctx.log_prior_beta(prop_b)
                    + lp_z
                    - ctx.loglik(state.beta, z)
                    - ctx.log_prior_beta(state.beta)
                    - ctx.log_prior_zeta(state.zeta)
                )
                d_q = q_log(lb_p, state.beta, mean_rev) - q_log(
                    lb, prop_b, mean_fwd
                )
                log_ratio = d_target + d_q
                accept_prob = float(min(1.0, np.exp(min(log_ratio, 0.0))))
                if rng.uniform() < accept_prob:
                    state.beta = prop_b
                    state.zeta = prop_z
                    state.chol = chol_p
    if adapt:
        state.log_s1 += _adapt_rate(state.iteration, cfg.adapt_exponent) * (
            accept_prob - cfg.target_accept
        )
    # running covariance of zeta for the zero-drift block
    state.n_zeta += 1
    g_r = state.n_zeta**-0.6
    d = state.zeta - state.zeta_mean
    state.zeta_mean = state.zeta_mean + g_r * d
    state.zeta_cov = state.zeta_cov + g_r * (np.outer(d, d) - state.zeta_cov)
    return accept_prob


def mmala_step(state: JointState, ctx, mnu_chol, rng, adapt=True,
               update_zeta=True):
    """One MMALA iteration: field block then (beta, zeta) block."""
    a0 = _nu_langevin_update(state, ctx, mnu_chol, rng, adapt)
    a1 = _beta_zeta_update(state, ctx, rng, adapt, update_zeta)
    state.iteration += 1
    return a0, a1


def ess_joint_step(state: JointState, ctx, rng, adapt=True, update_zeta=True):
    """One joint iteration with elliptical slice sampling for the field."""

    def loglik(nu):
        return ctx.loglik(state.beta, state.chol @ nu)

    state.nu, _ = elliptical_slice_step(state.nu, loglik, rng)
    a1 = _beta_zeta_update(state, ctx, rng, adapt, update_zeta)
    state.iteration += 1
    return a1


def zeta_from_pcf(
    pattern: PointPattern,
    domain_area: float,
    prior: PriorSpec,
    r_max: float = 0.25,
    n_bins: int = 30,
    max_points: int = 3000,
    seed: int = 0,
):
    """Coarse (sigma2, phi) starter from the empirical pair correlation.

    Histogram estimate of the pcf without edge correction, fitted by grid
    search on log g(r) = sigma2 exp(-phi r). A cheap initializer only.
    """
    pts = pattern.points
    n_all = len(pts)
    if n_all < 20:
        return 1.0, float(np.clip(1.0, prior.phi_lo, prior.phi_hi))
    if n_all > max_points:
        keep = np.random.default_rng(seed).choice(
            n_all, max_points, replace=False
        )
        pts = pts[keep]
    n = len(pts)
    lam = n_all / domain_area
    scale_sq = (n_all * (n_all - 1)) / max(n * (n - 1), 1)

    d = pdist(pts)
    edges = np.linspace(0.0, r_max, n_bins + 1)
    counts, _ = np.histogram(d, bins=edges)
    r = 0.5 * (edges[:-1] + edges[1:])
    dr = edges[1] - edges[0]
    ghat = (
        2.0 * counts * scale_sq / (lam**2 * domain_area * 2.0 * np.pi * r * dr)
    )
    y = np.log(np.maximum(ghat, 1e-6))

    best = (np.inf, 1.0, 1.0)
    for phi in np.geomspace(prior.phi_lo, prior.phi_hi, 60):
        basis = np.exp(-phi * r)
        sigma2 = float(np.clip((y @ basis) / (basis @ basis), 1e-3, 10.0))
        sse = float(((y - sigma2 * basis) ** 2).sum())
        if sse < best[0]:
            best = (sse, sigma2, phi)
    return best[1], best[2]


def initialize_from_map(
    pattern: PointPattern,
    partition: BlockPartition,
    covariates=(),
    prior: PriorSpec | None = None,
    config: MmalaConfig | None = None,
    zeta_init: tuple[float, float] | None = None,
    map_tol: float = 1e-3,
    map_max_iter: int = 20_000,
):
    """MAP starting values for (nu, beta) plus preconditioners at the MAP.

    zeta is fixed at zeta_init or, when omitted, at the pair-correlation
    grid-search starter.
    """
    prior = prior or PriorSpec()
    config = config or MmalaConfig()
    ctx = _JointContext(pattern, partition, covariates, prior, config)
    if zeta_init is None:
        sigma2, phi = zeta_from_pcf(pattern, partition.area, prior)
    else:
        sigma2, phi = zeta_init
    zeta = np.array([np.log(sigma2), np.log(phi)])
    chol = ctx.field_chol(zeta)
    beta0 = np.zeros(ctx.X.shape[1])
    beta0[0] = np.log(max(pattern.n, 1) / partition.area)
    nu, beta = map_estimate(
        ctx.counts,
        ctx.X,
        chol,
        ctx.areas,
        kappa_beta=config.kappa_beta,
        tol=map_tol,
        max_iter=map_max_iter,
        beta0=beta0,
    )
    m_nu, m_beta = mmala_preconditioners(
        ctx.X, beta, sigma2, ctx.areas, chol, config.kappa_beta
    )
    state = JointState(nu=nu, beta=beta, zeta=zeta, chol=chol)
    return state, ctx, m_nu, m_beta


def _run_joint(
    sampler: str,
    pattern,
    partition,
    covariates,
    prior,
    config,
    i0,
    I,
    seed,
    zeta_init,
    fix_zeta=False,
) -> Chain:
    if i0 < 0 or I < 1:
        raise ConfigError("need i0 >= 0 and I >= 1")
    rng = np.random.default_rng(seed)
    state, ctx, m_nu, _ = initialize_from_map(
        pattern, partition, covariates, prior, config, zeta_init
    )
    mnu_chol = np.linalg.cholesky(m_nu)

    columns = [f"beta{j}" for j in range(ctx.X.shape[1])] + ["sigma2", "phi"]
    draws = np.empty((I, len(columns)))
    acc = 0.0
    t_start = time.perf_counter()
    for i in range(i0 + I):
        if sampler == "mmala":
            _, a1 = mmala_step(state, ctx, mnu_chol, rng,
                               update_zeta=not fix_zeta)
        else:
            a1 = ess_joint_step(state, ctx, rng, update_zeta=not fix_zeta)
        if i >= i0:
            draws[i - i0] = np.concatenate(
                [state.beta, np.exp(state.zeta)]
            )
            acc += a1
    elapsed = time.perf_counter() - t_start
    return Chain(
        draws,
        columns,
        meta={
            "sampler": sampler,
            "seed": seed,
            "i0": i0,
            "I": I,
            "acceptance_rate_beta_zeta": acc / I,
            "wall_time_s": elapsed,
            "time_per_iteration_s": elapsed / (i0 + I),
        },
    )


def run_mmala(
    pattern: PointPattern,
    partition: BlockPartition,
    covariates=(),
    prior: PriorSpec | None = None,
    config: MmalaConfig | None = None,
    i0: int = 10_000,
    I: int = 100_000,
    seed=None,
    zeta_init=None,
    fix_zeta=False,
) -> Chain:
    return _run_joint(
        "mmala",
        pattern,
        partition,
        covariates,
        prior or PriorSpec(),
        config or MmalaConfig(),
        i0,
        I,
        seed,
        zeta_init,
        fix_zeta,
    )


def run_ess_joint(
    pattern: PointPattern,
    partition: BlockPartition,
    covariates=(),
    prior: PriorSpec | None = None,
    config: MmalaConfig | None = None,
    i0: int = 10_000,
    I: int = 100_000,
    seed=None,
    zeta_init=None,
    fix_zeta=False,
) -> Chain:
    return _run_joint(
        "ess",
        pattern,
        partition,
        covariates,
        prior or PriorSpec(),
        config or MmalaConfig(),
        i0,
        I,
        seed,
        zeta_init,
        fix_zeta,
    )
