import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy import stats as sps
from scipy.special import gammaln, logsumexp

from superpalm.core import (
    InvalidInputError,
    Partition,
    PointPattern,
    SncpParams,
    Window,
    canonicalize_partition,
    enumerate_partitions,
    make_rng,
)
from superpalm.simulate import simulate_thomas_gamma_sncp
from superpalm.sncp import (
    ClusterSufficientStats,
    McemConfig,
    complete_data_q,
    default_init,
    gibbs_run,
    gibbs_sweep,
    log_cluster_marginal,
    log_count_prob,
    log_eppf,
    log_janossy,
    log_janossy_marginal,
    m_step,
    mcem_fit,
    site_conditional,
    site_log_weights,
)

SETTINGS = [
    SncpParams(1.0, 0.01, 0.5, 1.0),
    SncpParams(5.0, 0.05, 0.3, 2.0),
    SncpParams(0.5, 1.0, 1.0, 0.4),
]


def marginal_oracle(points, alpha, sigma0):
    """Per-coordinate multivariate normal with covariance alpha^2 I + sigma0^2 J."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    cov = alpha**2 * np.eye(n) + sigma0**2 * np.ones((n, n))
    mvn = sps.multivariate_normal(np.zeros(n), cov)
    return float(mvn.logpdf(pts[:, 0]) + mvn.logpdf(pts[:, 1]))


def marginal_quadrature(points, alpha, sigma0):
    pts = np.asarray(points, dtype=float)

    def integrand(ty, tx):
        th = np.array([tx, ty])
        lk = sps.norm.logpdf(pts, loc=th, scale=alpha).sum() + sps.norm.logpdf(th, scale=sigma0).sum()
        return math.exp(lk)

    lim = 8 * sigma0
    val, _ = integrate.dblquad(integrand, -lim, lim, -lim, lim, epsabs=0, epsrel=1e-8)
    return math.log(val)


def janossy_product_form(points, params):
    """(c/(1+c))^tau * sum_t prod_h tau Gamma(n_h) (1+c)^(-n_h) m(x_h), term by term."""
    pts = np.asarray(points, dtype=float)
    tau, c = params.tau, params.c
    terms = []
    for part in enumerate_partitions(len(pts)):
        lab = np.array(part.labels)
        t = 0.0
        for h in range(1, part.n_clusters + 1):
            block = pts[lab == h]
            n_h = len(block)
            t += math.log(tau) + math.lgamma(n_h) - n_h * math.log1p(c)
            t += marginal_oracle(block, params.alpha, params.sigma0)
        terms.append(t)
    return tau * math.log(c / (1 + c)) + float(logsumexp(terms))


# --- EPPF and count law ---------------------------------------------------------


def test_eppf_examples():
    assert log_eppf(Partition((1,)), 3.0) == 0.0
    assert log_eppf(Partition((1, 2, 3)), 1.0) == pytest.approx(math.log(1 / 6), rel=1e-14)
    with pytest.raises(InvalidInputError):
        log_eppf(Partition((1, 1)), 0.0)


@pytest.mark.parametrize("tau", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("k", range(1, 9))
def test_eppf_normalised(k, tau):
    total = math.fsum(math.exp(log_eppf(t, tau)) for t in enumerate_partitions(k))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_count_prob_matches_scipy_and_normalises():
    for tau, c in [(1.0, 0.01), (5.0, 0.025), (0.3, 2.0)]:
        ks = np.arange(60)
        ref = sps.nbinom.logpmf(ks, tau, c / (1 + c))
        got = np.array([log_count_prob(int(k), tau, c) for k in ks])
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)
    pmf = np.exp([log_count_prob(k, 1.0, 0.01) for k in range(2001)])
    assert math.fsum(pmf) == pytest.approx(1.0, abs=1e-8)
    assert math.fsum(np.arange(2001) * pmf) == pytest.approx(100.0, rel=1e-6)
    assert log_count_prob(0, 2.0, 0.5) == pytest.approx(2.0 * math.log(0.5 / 1.5), rel=1e-14)
    with pytest.raises(InvalidInputError):
        log_count_prob(-1, 1.0, 1.0)


# --- cluster marginal -------------------------------------------------------------


def test_marginal_single_point():
    x = np.array([[0.3, -1.2]])
    ref = sps.multivariate_normal(np.zeros(2), (0.25 + 1.0) * np.eye(2)).logpdf(x[0])
    assert log_cluster_marginal(x, 0.5, 1.0) == pytest.approx(ref, rel=1e-13)


def test_marginal_prefers_tight_pairs():
    a = log_cluster_marginal([[0.1, 0.1], [0.1, 0.1]], 0.5, 1.0)
    b = log_cluster_marginal([[0.1, 0.1], [2.6, 0.1]], 0.5, 1.0)
    assert a > b


def test_marginal_matches_dense_gaussian():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 12):
        pts = rng.normal(size=(n, 2))
        for alpha, sigma0 in [(0.5, 1.0), (2.0, 0.1), (0.05, 3.0)]:
            assert log_cluster_marginal(pts, alpha, sigma0) == pytest.approx(marginal_oracle(pts, alpha, sigma0), rel=1e-11)


@pytest.mark.parametrize("n", [2, 4])
def test_marginal_matches_adaptive_quadrature(n):
    pts = np.random.default_rng(n).normal(scale=0.8, size=(n, 2))
    assert log_cluster_marginal(pts, 0.5, 1.0) == pytest.approx(marginal_quadrature(pts, 0.5, 1.0), rel=1e-6)


def test_marginal_rejects_empty():
    with pytest.raises(InvalidInputError):
        log_cluster_marginal(np.zeros((0, 2)), 1.0, 1.0)


# --- Janossy density ---------------------------------------------------------------


def test_janossy_single_point():
    p = SETTINGS[0]
    x = np.array([[0.4, 0.1]])
    ref = log_count_prob(1, p.tau, p.c) + log_cluster_marginal(x, p.alpha, p.sigma0)
    assert log_janossy(x, Partition((1,)), p) == pytest.approx(ref, rel=1e-14)
    assert log_janossy_marginal(x, p) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("params", SETTINGS)
@pytest.mark.parametrize("k", [2, 3, 5, 8])
def test_janossy_matches_product_form(params, k):
    pts = np.random.default_rng(100 + k).normal(scale=params.sigma0, size=(k, 2))
    assert log_janossy_marginal(pts, params) == pytest.approx(janossy_product_form(pts, params), rel=1e-10)


def test_janossy_scaling():
    p = SETTINGS[1]
    pts = np.random.default_rng(7).normal(size=(5, 2))
    s = 2.0
    scaled = SncpParams(p.tau, p.c, p.alpha * s, p.sigma0 * s)
    assert log_janossy_marginal(pts * s, scaled) == pytest.approx(log_janossy_marginal(pts, p) - 10 * math.log(s), rel=1e-12)


def test_janossy_label_invariance():
    p = SETTINGS[0]
    pts = np.random.default_rng(8).normal(size=(4, 2))
    a = log_janossy(pts, canonicalize_partition([3, 3, 7, 1]), p)
    b = log_janossy(pts, canonicalize_partition([1, 1, 2, 3]), p)
    assert a == b


def test_janossy_length_mismatch():
    with pytest.raises(InvalidInputError):
        log_janossy(np.zeros((3, 2)), Partition((1, 1)), SETTINGS[0])


def test_janossy_integrates_to_count_probability():
    # trapezoid on a 13^4 grid over [-6, 6]^4 (domain 8 (alpha + sigma0) wide)
    p = SncpParams(1.5, 0.3, 0.5, 1.0)
    x = np.linspace(-6, 6, 13)
    h = x[1] - x[0]
    grid = np.stack(np.meshgrid(x, x, x, x, indexing="ij"), -1).reshape(-1, 2, 2)
    total = math.fsum(math.exp(log_janossy_marginal(g, p)) for g in grid) * h**4 / 2
    assert total == pytest.approx(math.exp(log_count_prob(2, p.tau, p.c)), rel=1e-3)


# --- sufficient statistics -----------------------------------------------------------


def test_sufficient_stats_incremental_parity():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(30, 2))
    lab = rng.integers(0, 5, size=30)
    st_inc = ClusterSufficientStats.from_labels(pts, lab, capacity=30)
    for _ in range(500):
        i = rng.integers(30)
        st_inc.remove(lab[i], pts[i])
        lab[i] = rng.integers(0, 8)
        st_inc.add(lab[i], pts[i])
    fresh = ClusterSufficientStats.from_labels(pts, lab, capacity=30)
    np.testing.assert_allclose(st_inc.n, fresh.n, atol=0)
    np.testing.assert_allclose(st_inc.sum_x, fresh.sum_x, atol=1e-10)
    np.testing.assert_allclose(st_inc.sum_sq, fresh.sum_sq, atol=1e-10)


def test_complete_data_q_matches_log_janossy():
    p = SETTINGS[1]
    pts = np.random.default_rng(10).normal(size=(7, 2))
    part = canonicalize_partition([1, 2, 1, 3, 3, 2, 1])
    stats = ClusterSufficientStats.from_labels(pts, part.as_array() - 1, capacity=7)
    q = complete_data_q(stats, 7, p.tau, p.c, p.alpha, p.sigma0)
    assert q == pytest.approx(log_janossy(pts, part, p), rel=1e-13)


# --- Gibbs sampler ------------------------------------------------------------------------


def posterior(pts, params):
    parts = enumerate_partitions(len(pts))
    lw = np.array([log_janossy(pts, t, params) for t in parts])
    return parts, np.exp(lw - logsumexp(lw))


def test_site_weights_match_joint_ratios():
    p = SETTINGS[0]
    pts = np.random.default_rng(11).normal(size=(4, 2))
    part = canonicalize_partition([1, 2, 1, 3])
    for ell in range(4):
        cond = site_conditional(pts, part, ell, p)
        lj = np.array([log_janossy(pts, t, p) for t, _ in cond])
        ref = np.exp(lj - logsumexp(lj))
        np.testing.assert_allclose([q for _, q in cond], ref, rtol=1e-10)


def test_site_weights_new_cluster_term():
    p = SETTINGS[0]
    stats = ClusterSufficientStats.from_labels(np.zeros((0, 2)), np.zeros(0, dtype=int), capacity=1)
    x = np.array([0.2, 0.3])
    slots, lw = site_log_weights(x, stats, p)
    assert list(slots) == [-1]
    assert lw[0] == pytest.approx(math.log(p.tau) + log_cluster_marginal(x[None], p.alpha, p.sigma0), rel=1e-13)


def sweep_matrix(pts, params):
    """Exact one-sweep transition matrix over all partitions, built from site conditionals."""
    parts = enumerate_partitions(len(pts))
    index = {t.labels: i for i, t in enumerate(parts)}
    m = len(parts)
    mat = np.eye(m)
    for ell in range(len(pts)):
        step = np.zeros((m, m))
        for i, t in enumerate(parts):
            for t2, q in site_conditional(pts, t, ell, params):
                step[i, index[t2.labels]] += q
        mat = mat @ step
    return parts, mat


@pytest.mark.parametrize("params", SETTINGS[:2])
def test_sweep_kernel_leaves_posterior_invariant(params):
    pts = np.random.default_rng(12).normal(scale=0.8, size=(3, 2))
    parts, mat = sweep_matrix(pts, params)
    _, post = posterior(pts, params)
    np.testing.assert_allclose(mat.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(post @ mat, post, atol=1e-8)


def test_coclustering_probability_two_points():
    p = SncpParams(1.0, 0.1, 0.5, 0.2)
    far = np.array([[0.0, 0.0], [5.0, 0.0]])
    near = np.array([[0.0, 0.0], [0.0, 0.0]])
    rng = make_rng(13)
    for pts in (far, near):
        parts, post = posterior(pts, p)
        together = post[0]
        state = Partition((1, 2))
        hits = 0
        n = 20_000
        for _ in range(n):
            state = gibbs_sweep(pts, state, p, rng)
            hits += state.n_clusters == 1
        assert hits / n == pytest.approx(together, abs=0.01)
    assert posterior(near, p)[1][0] > posterior(far, p)[1][0]


def test_gibbs_posterior_k4_total_variation():
    p = SETTINGS[0]
    pts = np.random.default_rng(14).normal(scale=0.6, size=(4, 2))
    parts, post = posterior(pts, p)
    index = {t.labels: i for i, t in enumerate(parts)}
    rng = make_rng(15)
    counts = np.zeros(len(parts))
    state = Partition((1, 1, 1, 1))
    for _ in range(50_000):
        state = gibbs_sweep(pts, state, p, rng)
        counts[index[state.labels]] += 1
    tv = 0.5 * np.abs(counts / counts.sum() - post).sum()
    assert tv <= 0.02


def test_gibbs_run_equals_repeated_sweeps():
    p = SETTINGS[0]
    pts = np.random.default_rng(16).normal(size=(12, 2))
    start = Partition((1,) * 12)
    a = gibbs_run(pts, start, p, make_rng(1), 5)
    b = start
    rng = make_rng(1)
    for _ in range(5):
        b = gibbs_sweep(pts, b, p, rng)
    assert a == b


# --- MCEM ------------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_m_step_never_decreases_q(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(15, 2))
    lab = rng.integers(0, 4, size=15)
    stats = ClusterSufficientStats.from_labels(pts, lab, capacity=15)
    start = tuple(np.exp(rng.normal(size=3)))
    new, q0, q1 = m_step(stats, 15, 0.1, start, McemConfig())
    assert q1 >= q0
    assert q0 == complete_data_q(stats, 15, *start[:1], 0.1, *start[1:])
    assert q1 == pytest.approx(complete_data_q(stats, 15, new[0], 0.1, new[1], new[2]), rel=1e-12)


def test_m_step_at_true_partition_recovers_lengths():
    truth = SncpParams(5.0, 0.025, 0.5, 1.0)
    alphas, sigmas = [], []
    for i in range(20):
        pattern, part = simulate_thomas_gamma_sncp(truth, fixed_n=200, rng=make_rng(17, i))
        stats = ClusterSufficientStats.from_labels(pattern.points, part.as_array() - 1)
        new, _, _ = m_step(stats, 200, truth.c, (1.0, 0.3, 0.5), McemConfig(m_step_maxfev=1000))
        alphas.append(new[1])
        sigmas.append(new[2])
    assert np.mean(alphas) == pytest.approx(0.5, rel=0.15)
    assert np.mean(sigmas) == pytest.approx(1.0, rel=0.15)


def test_default_init():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    params, part = default_init(pts, 0.5)
    assert params.tau == 1.0
    assert params.alpha == pytest.approx(0.05)
    assert part.n_clusters == 2


@pytest.fixture(scope="module")
def fitted():
    truth = SncpParams(1.0, 0.01, 0.5, 1.0)
    pattern, _ = simulate_thomas_gamma_sncp(truth, fixed_n=100, rng=make_rng(18))
    return pattern, mcem_fit(pattern, 0.01, rng=make_rng(19))


def test_mcem_q_ascent_every_iteration(fitted):
    _, res = fitted
    assert len(res.trace.q) == res.iterations
    assert all(after >= before for before, after in zip(res.trace.q_before, res.trace.q))


def test_mcem_estimate_is_tail_average(fitted):
    _, res = fitted
    m = min(10, res.iterations)
    assert res.alpha == pytest.approx(np.mean(res.trace.alpha[-m:]), rel=1e-15)
    assert res.tau > 0 and res.alpha > 0 and res.sigma0 > 0
    assert 0.3 < res.alpha < 0.8


def test_mcem_deterministic(fitted):
    pattern, res = fitted
    again = mcem_fit(pattern, 0.01, rng=make_rng(19))
    assert (again.tau, again.alpha, again.sigma0) == (res.tau, res.alpha, res.sigma0)


def test_mcem_input_validation():
    pts = PointPattern(np.zeros((0, 2)), Window(-1, 1, -1, 1))
    with pytest.raises(InvalidInputError):
        mcem_fit(pts, 0.1, rng=make_rng(0))
    with pytest.raises(InvalidInputError):
        mcem_fit(np.zeros((3, 2)) + [[0, 0], [1, 0], [0, 1]], 0.0, rng=make_rng(0))
    with pytest.raises(InvalidInputError):
        McemConfig(max_iter=0)


def test_log_eppf_closed_form_against_gammaln():
    part = canonicalize_partition([1, 1, 2, 3, 3, 3])
    tau = 2.5
    ref = 3 * math.log(tau) + gammaln([2, 1, 3]).sum() + gammaln(tau) - gammaln(tau + 6)
    assert log_eppf(part, tau) == pytest.approx(ref, rel=1e-14)
