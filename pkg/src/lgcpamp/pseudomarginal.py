"""Stage 1: pseudo-marginal adaptive random-walk MH over the parameters.

The marginal likelihood of the block-count summary is estimated by
importance sampling from a Laplace approximation in log-intensity space.
The estimate is unbiased on the natural scale, so plugging it into the MH
ratio leaves the surrogate posterior exact. The cached estimate for the
current state is refreshed only on acceptance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln, logsumexp

from .chain import Chain
from .domain import BlockPartition, CountSummary, PointPattern, count_points, design_matrix
from .errors import ConfigError, NoConvergence, RecoverableNumericalError
from .model import ParamSpace
from .moments import MplnParams, compute_cox_moments, moments_to_mpln

__all__ = [
    "ImportanceDensity",
    "AdaptState",
    "ChainState",
    "AmpTarget",
    "laplace_fit",
    "log_marginal_estimate",
    "pm_mh_step",
    "run_amp",
]

_LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ImportanceDensity:
    """Gaussian N(mode, H^{-1}) with H the negative Hessian at the mode."""

    mode: np.ndarray
    hess_chol: np.ndarray  # lower factor of H
    logdet_hess: float


def laplace_fit(
    T: np.ndarray,
    p: MplnParams,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> ImportanceDensity:
    """Mode and curvature of w -> sum(T w - e^w) + log N(w | mu, Sigma).

    The objective is strictly concave, so damped Newton converges to the
    unique maximizer; failure within max_iter raises NoConvergence.
    """
    T = np.asarray(T, dtype=float).reshape(-1)
    n = len(T)
    if n != p.dim:
        raise ConfigError("count vector length != mPLN dimension")
    s_inv = cho_solve((p.sigma_chol, True), np.eye(n))
    # the gradient is a difference of count-scale terms, so the reachable
    # float64 floor grows with the counts; make the tolerance relative
    gtol = tol * max(1.0, np.linalg.norm(T))

    def objective(w):
        r = w - p.mu
        with np.errstate(over="ignore"):
            return T @ w - np.exp(w).sum() - 0.5 * r @ s_inv @ r

    w = p.mu.copy()
    f = objective(w)
    for _ in range(max_iter):
        ew = np.exp(w)
        grad = T - ew - s_inv @ (w - p.mu)
        if np.linalg.norm(grad) <= gtol:
            hess = s_inv + np.diag(ew)
            chol = np.linalg.cholesky(hess)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            return ImportanceDensity(w, chol, logdet)
        hess = s_inv + np.diag(ew)
        step = cho_solve(cho_factor(hess, lower=True), grad)
        t = 1.0
        for _ in range(50):
            f_new = objective(w + t * step)
            if f_new >= f:
                break
            t *= 0.5
        w = w + t * step
        f = f_new
    raise NoConvergence("Laplace mode search did not reach tolerance")


def log_marginal_estimate(
    T: np.ndarray,
    p: MplnParams,
    q: ImportanceDensity,
    n_imp: int,
    rng: np.random.Generator,
) -> float:
    """Log of the importance-sampling estimate of pi(T | theta).

    exp of the return value is unbiased for the mPLN marginal; all-under-
    flowed weights return -inf, which callers treat as a rejection.
    """
    if n_imp < 1:
        raise ConfigError("n_imp must be >= 1")
    T = np.asarray(T, dtype=float).reshape(-1)
    n = len(T)
    Z = rng.standard_normal((n, n_imp))
    W = q.mode[:, None] + solve_triangular(q.hess_chol.T, Z, lower=False)
    with np.errstate(over="ignore"):
        log_pois = T @ W - np.exp(W).sum(axis=0) - gammaln(T + 1.0).sum()
    r = solve_triangular(p.sigma_chol, W - p.mu[:, None], lower=True)
    logdet_sigma = 2.0 * np.log(np.diag(p.sigma_chol)).sum()
    log_prior = -0.5 * (r * r).sum(axis=0) - 0.5 * logdet_sigma - 0.5 * n * _LOG2PI
    log_q = -0.5 * (Z * Z).sum(axis=0) + 0.5 * q.logdet_hess - 0.5 * n * _LOG2PI
    logw = log_pois + log_prior - log_q
    if np.all(np.isneginf(logw)):
        return -np.inf
    return float(logsumexp(logw) - np.log(n_imp))


class AmpTarget:
    """Unbiased log-marginal estimates for a fixed count summary.

    Recoverable numerical failures (moment mismatch, indefinite
    covariance, Laplace non-convergence) propagate to the caller, which
    rejects the proposal.
    """

    def __init__(
        self,
        space: ParamSpace,
        partition: BlockPartition,
        X_fine: np.ndarray,
        T: CountSummary,
        n_imp: int,
    ):
        if T.M != partition.M or T.L != space.L:
            raise ConfigError("count summary does not match partition/model")
        self.space = space
        self.partition = partition
        self.X_fine = X_fine
        self.T = np.asarray(T.counts, dtype=float)
        self.n_imp = n_imp
        self.n_calls = 0

    def log_estimate(self, vec: np.ndarray, rng: np.random.Generator) -> float:
        self.n_calls += 1
        beta, kernel = self.space.unpack(vec)
        m = compute_cox_moments(self.X_fine, beta, kernel, self.partition)
        p = moments_to_mpln(m)
        q = laplace_fit(self.T, p)
        return log_marginal_estimate(self.T, p, q, self.n_imp, rng)


def _glm_beta_init(counts, X, partition):
    """Poisson-regression warm start for the shared beta row.

    Block counts are spread uniformly over their fine cells and fitted
    with the no-field intensity exp(X beta); components share beta, so
    they collapse into one regression with summed counts and L-fold
    exposure. Keeps the burn-in transient short when covariate effects
    are far from zero.
    """
    L = counts.shape[0]
    per_block = np.diff(partition.block_start)
    y = np.repeat(counts / per_block, per_block, axis=1).sum(axis=0)
    expo = L * partition.fine_area
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(max(counts.sum(), 1.0) / expo.sum())
    for _ in range(50):
        mu = np.exp(X @ beta) * expo
        grad = X.T @ (y - mu)
        hess = X.T @ (mu[:, None] * X)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.abs(step).max() < 1e-8:
            break
    return beta


def _laplace_log_marginal(T: np.ndarray, p: MplnParams) -> float:
    """Deterministic Laplace approximation of log pi(T | theta).

    Same mode/curvature as the importance density; the Gaussian-integral
    constants cancel against the prior normalizer. Used only to build the
    starting point and proposal preconditioner, never in the MH ratio.
    """
    q = laplace_fit(T, p)
    w = q.mode
    r = solve_triangular(p.sigma_chol, w - p.mu, lower=True)
    logdet_sigma = 2.0 * np.log(np.diag(p.sigma_chol)).sum()
    return float(
        T @ w
        - np.exp(w).sum()
        - gammaln(T + 1.0).sum()
        - 0.5 * r @ r
        - 0.5 * logdet_sigma
        - 0.5 * q.logdet_hess
    )


def _map_preconditioner(target, log_prior_fn, theta0):
    """Approximate MAP and posterior covariance on the transformed scale.

    Maximizes log_prior + Laplace-approximate log marginal (deterministic,
    one moment computation per evaluation) and inverts the negative
    finite-difference Hessian at the optimum. Returns (theta_map, cov) or
    (theta0, None) when the surface is too irregular; adaptation then
    starts from the generic diagonal guess.
    """
    from scipy.optimize import minimize

    def neg_log_post(vec):
        lp = log_prior_fn(vec)
        if not np.isfinite(lp):
            return 1e10
        try:
            beta, kernel = target.space.unpack(vec)
            m = compute_cox_moments(
                target.X_fine, beta, kernel, target.partition
            )
            val = lp + _laplace_log_marginal(target.T, moments_to_mpln(m))
        except (RecoverableNumericalError, NoConvergence, np.linalg.LinAlgError):
            return 1e10
        return -val if np.isfinite(val) else 1e10

    res = minimize(neg_log_post, theta0, method="Nelder-Mead",
                   options={"maxiter": 400 * len(theta0), "xatol": 1e-4,
                            "fatol": 1e-6})
    theta = res.x if neg_log_post(res.x) < neg_log_post(theta0) else theta0
    p_dim = len(theta)
    h = 5e-3
    H = np.empty((p_dim, p_dim))
    f0 = neg_log_post(theta)
    if f0 >= 1e9:
        return theta0, None
    for i in range(p_dim):
        ei = np.zeros(p_dim)
        ei[i] = h
        for j in range(i, p_dim):
            ej = np.zeros(p_dim)
            ej[j] = h
            fpp = neg_log_post(theta + ei + ej)
            fpm = neg_log_post(theta + ei - ej)
            fmp = neg_log_post(theta - ei + ej)
            fmm = neg_log_post(theta - ei - ej)
            if max(fpp, fpm, fmp, fmm) >= 1e9:
                return theta, None
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    evals, vecs = np.linalg.eigh(H)
    if evals.max() <= 0.0:
        return theta, None
    evals = np.maximum(evals, 1e-6 * evals.max())
    cov = (vecs / evals) @ vecs.T
    return theta, cov


@dataclass
class AdaptState:
    """Running proposal statistics for adaptive random-walk MH."""

    mean: np.ndarray
    cov: np.ndarray
    log_scale: float
    n: int = 0
    n0: int = 0

    @classmethod
    def initial(cls, theta: np.ndarray, cov: np.ndarray | None = None) -> "AdaptState":
        p = len(theta)
        if cov is None:
            return cls(
                mean=theta.copy(),
                cov=0.01 * np.eye(p),
                log_scale=np.log(2.38 / np.sqrt(p)),
            )
        # an informed covariance gets a pseudo-count so the first outer
        # products (tiny deviations while the chain is still near its
        # start) cannot collapse it, and a mild inflation because the
        # curvature guess understates the spread along flat ridges
        return cls(
            mean=theta.copy(),
            cov=2.0 * np.asarray(cov, float),
            log_scale=np.log(2.38 / np.sqrt(p)),
            n0=150,
        )

    def update(self, theta: np.ndarray, accept_prob: float, target: float):
        self.n += 1
        g = (self.n0 + self.n) ** -0.6
        d = theta - self.mean
        self.mean = self.mean + g * d
        self.cov = self.cov + g * (np.outer(d, d) - self.cov)
        self.log_scale += g * (accept_prob - target)


@dataclass
class ChainState:
    theta: np.ndarray
    log_prior: float
    log_pi_hat: float
    iteration: int
    adapt: AdaptState


def pm_mh_step(
    state: ChainState,
    target,
    log_prior_fn,
    rng: np.random.Generator,
    adapt: bool = True,
    target_accept: float = 0.234,
):
    """One pseudo-marginal MH step; returns (new state, info dict).

    Any recoverable numerical failure at the proposal, or a prior-support
    violation, rejects it. The cached log estimate moves with the state:
    refreshed on acceptance only.
    """
    a = state.adapt
    scale = np.exp(a.log_scale)
    prop_cov = a.cov + 1e-10 * np.eye(len(state.theta))
    step = scale * np.linalg.cholesky(prop_cov) @ rng.standard_normal(
        len(state.theta)
    )
    proposal = state.theta + step

    accept_prob = 0.0
    accepted = False
    lp_prop = log_prior_fn(proposal)
    if np.isfinite(lp_prop):
        try:
            est_prop = target.log_estimate(proposal, rng)
        except RecoverableNumericalError:
            est_prop = -np.inf
        log_ratio = lp_prop + est_prop - state.log_prior - state.log_pi_hat
        accept_prob = float(min(1.0, np.exp(min(log_ratio, 0.0))))
        if np.isfinite(est_prop) and rng.uniform() < accept_prob:
            accepted = True

    if accepted:
        new = ChainState(proposal, lp_prop, est_prop, state.iteration + 1, a)
    else:
        new = replace(state, iteration=state.iteration + 1)
    if adapt:
        a.update(new.theta, accept_prob, target_accept)
    return new, {"accepted": accepted, "accept_prob": accept_prob}


def run_amp(
    pattern: PointPattern,
    partition: BlockPartition,
    space: ParamSpace,
    covariates=(),
    i0: int = 1000,
    I: int = 5000,
    n_imp: int = 1000,
    seed: int | None = None,
    theta0: np.ndarray | None = None,
    target=None,
) -> Chain:
    """Burn-in with adaptation, then a fixed-kernel retained phase.

    Adaptation (running mean/covariance of theta, global scale driven
    toward 0.234 acceptance) is frozen after the i0 burn-in iterations, so
    the I retained draws come from a fixed pseudo-marginal kernel.
    """
    if i0 < 0 or I < 1:
        raise ConfigError("need i0 >= 0 and I >= 1")
    rng = np.random.default_rng(seed)
    counts = None
    if target is None:
        T = count_points(pattern, partition)
        counts = T.counts.reshape(T.L, T.M)
        X_fine = design_matrix(covariates, partition.fine_points)
        target = AmpTarget(space, partition, X_fine, T, n_imp)
    cov0 = None
    if theta0 is None:
        theta0 = space.init_vector(pattern.n, partition.area, counts=counts)
        if counts is not None:
            try:
                beta_glm = _glm_beta_init(
                    counts.astype(float), X_fine, partition
                )
            except np.linalg.LinAlgError:
                beta_glm = None
            if beta_glm is not None and np.all(np.isfinite(beta_glm)):
                _, kern0 = space.unpack(theta0)
                sig2 = (
                    kern0.marginal_variance().mean()
                    if hasattr(kern0, "marginal_variance")
                    else kern0.sigma2
                )
                theta0[: space.n_beta] = beta_glm
                theta0[0] -= 0.5 * sig2  # mean of the log-normal factor
        if hasattr(target, "X_fine"):
            theta0, cov0 = _map_preconditioner(
                target, space.log_prior, theta0
            )
    theta0 = np.asarray(theta0, dtype=float)

    lp0 = space.log_prior(theta0)
    if not np.isfinite(lp0):
        raise ConfigError("initial parameter vector has zero prior density")
    est0 = target.log_estimate(theta0, rng)
    if not np.isfinite(est0):
        raise ConfigError(
            "likelihood estimate at the initial parameters is degenerate"
        )
    state = ChainState(theta0, lp0, est0, 0, AdaptState.initial(theta0, cov0))

    draws = np.empty((I, len(space.natural_names)))
    transformed = np.empty((I, space.n_params))
    n_accept = 0
    t_start = time.perf_counter()
    for i in range(i0 + I):
        state, info = pm_mh_step(
            state, target, space.log_prior, rng, adapt=(i < i0)
        )
        if i >= i0:
            draws[i - i0] = space.to_natural(state.theta)
            transformed[i - i0] = state.theta
            n_accept += info["accepted"]
    elapsed = time.perf_counter() - t_start

    chain = Chain(
        draws,
        list(space.natural_names),
        meta={
            "sampler": "amp",
            "seed": seed,
            "i0": i0,
            "I": I,
            "n_imp": n_imp,
            "acceptance_rate": n_accept / I,
            "wall_time_s": elapsed,
            "time_per_iteration_s": elapsed / (i0 + I),
        },
    )
    chain.transformed = transformed
    return chain
