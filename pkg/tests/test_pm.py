import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import poisson

from lgcpamp.covariance import cholesky
from lgcpamp.domain import Domain, PointPattern, build_partition
from lgcpamp.errors import ConfigError
from lgcpamp.model import ParamSpace
from lgcpamp.moments import MplnParams
from lgcpamp.pseudomarginal import (
    AdaptState,
    ChainState,
    laplace_fit,
    log_marginal_estimate,
    pm_mh_step,
    run_amp,
)

UNIT = Domain((0.0, 1.0, 0.0, 1.0))


def _mpln(mu, sigma):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return MplnParams(mu, sigma, cholesky(sigma), M=len(mu))


def _objective(w, T, p):
    r = w - p.mu
    s_inv = np.linalg.inv(p.sigma)
    return T @ w - np.exp(w).sum() - 0.5 * r @ s_inv @ r


class StubTarget:
    """Deterministic log-density standing in for the marginal estimator."""

    def __init__(self, fn):
        self.fn = fn
        self.n_calls = 0

    def log_estimate(self, vec, rng):
        self.n_calls += 1
        return self.fn(np.asarray(vec))


# -- Laplace fit ---------------------------------------------------------


def test_laplace_tiny_prior_variance_pins_mode_to_mu():
    p = _mpln([0.3, -0.2], 1e-8 * np.eye(2))
    q = laplace_fit(np.array([5.0, 2.0]), p)
    np.testing.assert_allclose(q.mode, p.mu, atol=1e-6)


def test_laplace_flat_prior_recovers_poisson_mle():
    p = _mpln([0.0], [[1e6]])
    q = laplace_fit(np.array([50.0]), p)
    assert q.mode[0] == pytest.approx(np.log(50.0), abs=1e-3)


def test_laplace_matches_grid_oracle_2d():
    p = _mpln([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    T = np.array([3.0, 7.0])
    q = laplace_fit(T, p)
    grid = np.linspace(-1.0, 3.0, 801)
    W1, W2 = np.meshgrid(grid, grid, indexing="ij")
    vals = np.array(
        [
            [_objective(np.array([a, b]), T, p) for b in grid]
            for a in grid
        ]
    )
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    coarse_best = np.array([grid[i], grid[j]])
    assert np.abs(q.mode - coarse_best).max() < 1e-4 + (grid[1] - grid[0])


def test_laplace_mode_is_strict_maximum():
    rng = np.random.default_rng(0)
    p = _mpln([0.5, -0.5, 0.0], np.diag([0.3, 0.8, 1.2]))
    T = np.array([4.0, 1.0, 9.0])
    q = laplace_fit(T, p)
    f0 = _objective(q.mode, T, p)
    for _ in range(20):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        for t in (-0.5, -0.01, 0.01, 0.5):
            assert _objective(q.mode + t * d, T, p) < f0


# -- importance estimator ------------------------------------------------


def _quad_marginal(T, mu, s2):
    def f(w):
        return poisson.pmf(T, np.exp(w)) * np.exp(
            -0.5 * (w - mu) ** 2 / s2
        ) / np.sqrt(2 * np.pi * s2)

    val, _ = quad(f, mu - 12 * np.sqrt(s2), mu + 12 * np.sqrt(s2), limit=200)
    return val


def test_estimate_matches_quadrature_1d():
    p = _mpln([1.0], [[0.25]])
    T = np.array([3.0])
    q = laplace_fit(T, p)
    est = log_marginal_estimate(T, p, q, 100_000, np.random.default_rng(1))
    truth = _quad_marginal(3, 1.0, 0.25)
    assert np.exp(est) == pytest.approx(truth, rel=0.01)


def test_estimate_factorizes_over_independent_blocks():
    mus, s2s, Ts = [0.5, 1.5], [0.3, 0.2], [2, 6]
    p2 = _mpln(mus, np.diag(s2s))
    T2 = np.array(Ts, dtype=float)
    q2 = laplace_fit(T2, p2)
    rng = np.random.default_rng(2)
    est2 = log_marginal_estimate(T2, p2, q2, 200_000, rng)
    parts = sum(
        np.log(_quad_marginal(t, m, s)) for t, m, s in zip(Ts, mus, s2s)
    )
    assert est2 == pytest.approx(parts, abs=0.01)


def test_estimate_unbiased_on_natural_scale():
    p = _mpln([1.0], [[0.25]])
    T = np.array([3.0])
    q = laplace_fit(T, p)
    rng = np.random.default_rng(3)
    vals = np.exp(
        [log_marginal_estimate(T, p, q, 100, rng) for _ in range(3000)]
    )
    truth = _quad_marginal(3, 1.0, 0.25)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - truth) < 3 * se


def test_estimate_variance_vanishes_when_target_nearly_gaussian():
    # huge count: the integrand is close to Gaussian, the Laplace density
    # nearly exact, so even single-draw estimates are almost deterministic
    p = _mpln([np.log(1e6)], [[0.5]])
    T = np.array([1e6])
    q = laplace_fit(T, p)
    rng = np.random.default_rng(4)
    vals = [log_marginal_estimate(T, p, q, 1, rng) for _ in range(50)]
    assert np.std(vals) < 2e-3


def test_estimate_requires_positive_n_imp():
    p = _mpln([0.0], [[1.0]])
    q = laplace_fit(np.array([1.0]), p)
    with pytest.raises(ConfigError):
        log_marginal_estimate(np.array([1.0]), p, q, 0, np.random.default_rng())


# -- pseudo-marginal MH --------------------------------------------------


def _gaussian_state(theta, fn):
    lp = 0.0
    return ChainState(
        np.asarray(theta, dtype=float),
        lp,
        fn(np.asarray(theta, dtype=float)),
        0,
        AdaptState.initial(np.asarray(theta, dtype=float)),
    )


def test_zero_step_proposal_always_accepts():
    fn = lambda v: -0.5 * float(v @ v)
    target = StubTarget(fn)
    state = _gaussian_state([0.7], fn)
    state.adapt.log_scale = -np.inf  # zero proposal step
    state, info = pm_mh_step(
        state, target, lambda v: 0.0, np.random.default_rng(0), adapt=False
    )
    assert info["accept_prob"] == pytest.approx(1.0)
    assert info["accepted"]


def test_prior_support_violation_rejects():
    fn = lambda v: 0.0
    target = StubTarget(fn)
    state = _gaussian_state([0.0], fn)
    state, info = pm_mh_step(
        state,
        target,
        lambda v: -np.inf,
        np.random.default_rng(0),
        adapt=False,
    )
    assert not info["accepted"]
    assert info["accept_prob"] == 0.0
    assert target.n_calls == 0  # estimator skipped outside the support


def test_adaptation_reaches_target_rate():
    fn = lambda v: -0.5 * float(v @ v)
    target = StubTarget(fn)
    state = _gaussian_state([0.0, 0.0, 0.0], fn)
    rng = np.random.default_rng(5)
    accepts = []
    for i in range(6000):
        state, info = pm_mh_step(state, target, lambda v: 0.0, rng, adapt=True)
        accepts.append(info["accepted"])
    assert np.mean(accepts[-3000:]) == pytest.approx(0.234, abs=0.05)


def test_empirical_reversibility_on_frozen_chain():
    # with adaptation frozen the kernel is fixed; under stationarity the
    # flow between the two half-lines must balance
    fn = lambda v: -0.5 * float(v @ v)
    target = StubTarget(fn)
    state = _gaussian_state([0.1], fn)
    rng = np.random.default_rng(6)
    for _ in range(500):
        state, _ = pm_mh_step(state, target, lambda v: 0.0, rng, adapt=True)
    xs = []
    for _ in range(40_000):
        state, _ = pm_mh_step(state, target, lambda v: 0.0, rng, adapt=False)
        xs.append(state.theta[0])
    xs = np.array(xs)
    ab = np.sum((xs[:-1] < 0) & (xs[1:] >= 0))
    ba = np.sum((xs[:-1] >= 0) & (xs[1:] < 0))
    assert abs(ab - ba) < 4 * np.sqrt(ab + ba)


def test_run_amp_shape_cache_and_determinism():
    rng = np.random.default_rng(7)
    pattern = PointPattern.single(rng.uniform(0, 1, size=(50, 2)))
    part = build_partition(UNIT, (2, 2), (1, 1))
    space = ParamSpace(n_cov=0, fix_sigma2=0.5, fix_phi=2.0)
    fn = lambda v: -0.5 * float((v - 4.0) @ (v - 4.0)) * 10.0
    target = StubTarget(fn)
    i0, I = 200, 400
    chain = run_amp(
        pattern, part, space, i0=i0, I=I, seed=11, target=target
    )
    assert len(chain) == I
    assert chain.columns == ["beta0"]
    # one estimator call per proposal plus the initial state: the cached
    # estimate is never recomputed for a retained theta
    assert target.n_calls == i0 + I + 1

    chain2 = run_amp(
        pattern, part, space, i0=i0, I=I, seed=11, target=StubTarget(fn)
    )
    np.testing.assert_array_equal(chain.draws, chain2.draws)


def test_run_amp_rejects_bad_lengths():
    pattern = PointPattern.single([(0.5, 0.5)])
    part = build_partition(UNIT, (1, 1), (1, 1))
    space = ParamSpace(n_cov=0, fix_sigma2=0.5, fix_phi=2.0)
    with pytest.raises(ConfigError):
        run_amp(pattern, part, space, i0=-1, I=10, seed=0,
                target=StubTarget(lambda v: 0.0))
