"""Likelihood and Monte-Carlo EM for the Thomas-gamma shot-noise Cox process.

Given ``k`` observed points, the Janossy density is a mixture over set
partitions ``t`` of the points::

    j_k(x) = k! P(N = k) sum_t P(t) prod_h m(x_h)

with ``N ~ NB(tau, c/(c+1))``, ``P(t)`` the Chinese-restaurant EPPF with
concentration ``tau`` and ``m`` the Gaussian cluster marginal obtained by
integrating the cluster centre ``theta ~ N(0, sigma0^2 I)`` out of
``prod_j N(x_j; theta, alpha^2 I)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import optimize
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree
from scipy.special import gammaln, logsumexp

from .core import (
    InvalidInputError,
    Partition,
    PointPattern,
    SncpParams,
    canonicalize_partition,
    enumerate_partitions,
)

LOG_2PI = math.log(2.0 * math.pi)


def _points(x) -> np.ndarray:
    if isinstance(x, PointPattern):
        return x.points
    return np.asarray(x, dtype=float).reshape(-1, 2)


def log_eppf(partition: Partition, tau: float) -> float:
    """Log probability of ``partition`` under the CRP with concentration ``tau``."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    sizes = partition.cluster_sizes
    k = int(sizes.sum())
    if k == 0:
        return 0.0
    return float(
        len(sizes) * math.log(tau) + gammaln(sizes).sum() + gammaln(tau) - gammaln(tau + k)
    )


def log_count_prob(k: int, tau: float, c: float) -> float:
    """Log pmf of the total count, NB(tau, c/(c+1))."""
    if k < 0 or int(k) != k:
        raise InvalidInputError("k must be a nonnegative integer")
    if not (tau > 0 and c > 0):
        raise InvalidInputError("tau and c must be positive")
    return float(
        gammaln(tau + k) - gammaln(tau) - gammaln(k + 1) + tau * math.log(c / (1 + c)) - k * math.log1p(c)
    )


def log_marginal_from_stats(n, sum_x, sum_sq, alpha, sigma0):
    """Log cluster marginal from sufficient statistics (vectorised over clusters).

    Per coordinate the ``n`` values are jointly Gaussian with covariance
    ``alpha^2 I + sigma0^2 J``; determinant and quadratic form use the
    rank-one structure.
    """
    n = np.asarray(n, dtype=float)
    a2 = alpha * alpha
    s2 = sigma0 * sigma0
    denom = a2 + n * s2
    sq_sum = (np.asarray(sum_x, dtype=float) ** 2).sum(axis=-1)
    quad = (np.asarray(sum_sq, dtype=float) - s2 * sq_sum / denom) / a2
    # two coordinates: logdet = 2[(n-1) log a2 + log(a2 + n s2)]
    logdet = 2.0 * ((n - 1.0) * math.log(a2) + np.log(denom))
    return -n * LOG_2PI - 0.5 * logdet - 0.5 * quad


def log_cluster_marginal(points, alpha: float, sigma0: float) -> float:
    """Log of ``int prod_j N(x_j; theta, alpha^2 I) N(theta; 0, sigma0^2 I) d theta``."""
    pts = _points(points)
    if len(pts) == 0:
        raise InvalidInputError("cluster must be nonempty")
    if not (alpha > 0 and sigma0 > 0):
        raise InvalidInputError("alpha and sigma0 must be positive")
    return float(log_marginal_from_stats(len(pts), pts.sum(axis=0), (pts**2).sum(), alpha, sigma0))


@dataclass
class ClusterSufficientStats:
    """Per-cluster size, coordinate sum and sum of squared norms.

    Slots are indexed by zero-based cluster id; emptied slots are kept and
    reused so that add/remove is O(1).
    """

    n: np.ndarray
    sum_x: np.ndarray
    sum_sq: np.ndarray

    @classmethod
    def from_labels(cls, points, labels, capacity: int | None = None) -> "ClusterSufficientStats":
        pts = _points(points)
        lab = np.asarray(labels, dtype=int)
        cap = max(int(lab.max()) + 1 if lab.size else 0, capacity or 0)
        n = np.bincount(lab, minlength=cap).astype(float)
        sx = np.stack(
            [np.bincount(lab, weights=pts[:, 0], minlength=cap), np.bincount(lab, weights=pts[:, 1], minlength=cap)],
            axis=1,
        )
        ss = np.bincount(lab, weights=(pts**2).sum(axis=1), minlength=cap)
        return cls(n, sx, ss)

    def add(self, h: int, x: np.ndarray) -> None:
        self.n[h] += 1
        self.sum_x[h] += x
        self.sum_sq[h] += x @ x

    def remove(self, h: int, x: np.ndarray) -> None:
        self.n[h] -= 1
        self.sum_x[h] -= x
        self.sum_sq[h] -= x @ x
        if self.n[h] == 0:
            # clear round-off so an emptied slot is exactly a fresh one
            self.sum_x[h] = 0.0
            self.sum_sq[h] = 0.0

    def active(self) -> np.ndarray:
        return self.n > 0

    def log_marginals(self, alpha: float, sigma0: float) -> np.ndarray:
        act = self.active()
        return log_marginal_from_stats(self.n[act], self.sum_x[act], self.sum_sq[act], alpha, sigma0)


def log_janossy(pattern, partition: Partition, params: SncpParams) -> float:
    """Complete-data log term ``log c(psi) + log p(x | t) + log P(t)``.

    ``c(psi) = k! P(N = k)``. Log-sum-exp of this over all partitions gives
    the log Janossy density, see :func:`log_janossy_marginal`.
    """
    pts = _points(pattern)
    k = len(pts)
    if len(partition) != k:
        raise InvalidInputError(f"partition has {len(partition)} labels for {k} points")
    lc = float(gammaln(k + 1)) + log_count_prob(k, params.tau, params.c)
    if k == 0:
        return lc
    stats = ClusterSufficientStats.from_labels(pts, partition.as_array() - 1)
    lm = stats.log_marginals(params.alpha, params.sigma0).sum()
    return lc + log_eppf(partition, params.tau) + float(lm)


def log_janossy_marginal(pattern, params: SncpParams) -> float:
    """Exact log Janossy density by summing over all partitions (k <= 10)."""
    pts = _points(pattern)
    k = len(pts)
    if k == 0:
        return log_count_prob(0, params.tau, params.c)
    terms = [log_janossy(pts, t, params) for t in enumerate_partitions(k)]
    return float(logsumexp(terms))


def complete_data_q(stats: ClusterSufficientStats, k: int, tau, c, alpha, sigma0) -> float:
    """Q at a fixed partition, from its sufficient statistics."""
    act = stats.active()
    n = stats.n[act]
    n_clusters = int(act.sum())
    lc = float(gammaln(k + 1)) + log_count_prob(k, tau, c)
    eppf = n_clusters * math.log(tau) + float(gammaln(n).sum()) + float(gammaln(tau) - gammaln(tau + k))
    lm = float(log_marginal_from_stats(n, stats.sum_x[act], stats.sum_sq[act], alpha, sigma0).sum())
    return lc + eppf + lm


# ---------------------------------------------------------------------------
# Gibbs sampling of the latent partition


def _log_predictive(x, n, sum_x, alpha, sigma0):
    """Log density of ``x`` given each cluster's members (n == 0: prior predictive)."""
    a2 = alpha * alpha
    prec = 1.0 / (sigma0 * sigma0) + n / a2
    mean = (sum_x / a2) / prec[:, None]
    var = a2 + 1.0 / prec
    d2 = ((x - mean) ** 2).sum(axis=1)
    return -LOG_2PI - np.log(var) - 0.5 * d2 / var


def site_log_weights(x, stats: ClusterSufficientStats, params: SncpParams):
    """Unnormalised log full-conditional for one point removed from ``stats``.

    Returns ``(slots, logw)``: ``slots`` lists active cluster ids followed by
    ``-1`` standing for a new cluster.
    """
    act = np.flatnonzero(stats.n > 0)
    n = stats.n[act]
    lw_old = np.log(n) + _log_predictive(x, n, stats.sum_x[act], params.alpha, params.sigma0)
    s2 = params.alpha**2 + params.sigma0**2
    lw_new = math.log(params.tau) - LOG_2PI - math.log(s2) - 0.5 * (x @ x) / s2
    return np.append(act, -1), np.append(lw_old, lw_new)


@numba.njit(cache=True)
def _sweep_kernel(pts, lab, n, sx, ss, alpha, sigma0, tau, u):
    """Systematic-scan sweep; ``u`` holds one uniform per point.

    Cluster slots must have capacity ``len(pts)`` so a new cluster always
    finds an empty slot.
    """
    a2 = alpha * alpha
    inv_s2 = 1.0 / (sigma0 * sigma0)
    s2_new = a2 + sigma0 * sigma0
    log_tau = math.log(tau)
    cap = n.shape[0]
    logw = np.empty(cap + 1)
    slot = np.empty(cap + 1, dtype=np.int64)
    for ell in range(pts.shape[0]):
        x0 = pts[ell, 0]
        x1 = pts[ell, 1]
        h = lab[ell]
        n[h] -= 1.0
        sx[h, 0] -= x0
        sx[h, 1] -= x1
        ss[h] -= x0 * x0 + x1 * x1
        if n[h] == 0.0:
            sx[h, 0] = 0.0
            sx[h, 1] = 0.0
            ss[h] = 0.0
        m = 0
        first_empty = -1
        best = -np.inf
        for j in range(cap):
            nj = n[j]
            if nj > 0.0:
                prec = inv_s2 + nj / a2
                var = a2 + 1.0 / prec
                d0 = x0 - sx[j, 0] / a2 / prec
                d1 = x1 - sx[j, 1] / a2 / prec
                lw = math.log(nj) - LOG_2PI - math.log(var) - 0.5 * (d0 * d0 + d1 * d1) / var
                logw[m] = lw
                slot[m] = j
                m += 1
                if lw > best:
                    best = lw
            elif first_empty < 0:
                first_empty = j
        lw = log_tau - LOG_2PI - math.log(s2_new) - 0.5 * (x0 * x0 + x1 * x1) / s2_new
        logw[m] = lw
        slot[m] = first_empty
        m += 1
        if lw > best:
            best = lw
        total = 0.0
        for j in range(m):
            logw[j] = math.exp(logw[j] - best)
            total += logw[j]
        target = u[ell] * total
        acc = 0.0
        pick = m - 1
        for j in range(m):
            acc += logw[j]
            if target < acc:
                pick = j
                break
        h = slot[pick]
        lab[ell] = h
        n[h] += 1.0
        sx[h, 0] += x0
        sx[h, 1] += x1
        ss[h] += x0 * x0 + x1 * x1


def _sweep_inplace(pts, lab, stats, params, rng):
    _sweep_kernel(
        pts, lab, stats.n, stats.sum_x, stats.sum_sq,
        float(params.alpha), float(params.sigma0), float(params.tau), rng.random(len(pts)),
    )


def _stats_for(pts, lab):
    return ClusterSufficientStats.from_labels(pts, lab, capacity=len(pts))


def gibbs_sweep(pattern, partition: Partition, params: SncpParams, rng: np.random.Generator) -> Partition:
    """One systematic-scan pass resampling every allocation from its full conditional."""
    pts = _points(pattern)
    if len(partition) != len(pts):
        raise InvalidInputError("partition length does not match the pattern")
    if len(pts) == 0:
        return partition
    lab = partition.as_array() - 1
    stats = _stats_for(pts, lab)
    _sweep_inplace(pts, lab, stats, params, rng)
    return canonicalize_partition(lab + 1)


def gibbs_run(pattern, partition: Partition, params: SncpParams, rng, n_sweeps: int) -> Partition:
    for _ in range(n_sweeps):
        partition = gibbs_sweep(pattern, partition, params, rng)
    return partition


def site_conditional(pattern, partition: Partition, ell: int, params: SncpParams):
    """Exact conditional law of the partition after resampling point ``ell``.

    Returns a list of ``(Partition, probability)``; used to build exact
    transition kernels in tests.
    """
    pts = _points(pattern)
    lab = partition.as_array() - 1
    stats = ClusterSufficientStats.from_labels(pts, lab)
    stats.remove(lab[ell], pts[ell])
    slots, logw = site_log_weights(pts[ell], stats, params)
    probs = np.exp(logw - logsumexp(logw))
    out = []
    fresh = int(lab.max()) + 1
    for h, p in zip(slots, probs):
        new = lab.copy()
        new[ell] = fresh if h < 0 else h
        out.append((canonicalize_partition(new + 1), float(p)))
    return out


# ---------------------------------------------------------------------------
# Monte-Carlo EM


@dataclass(frozen=True)
class McemConfig:
    max_iter: int = 100
    gibbs_sweeps: int = 20
    rel_tol: float = 1e-3
    patience: int = 5
    average_last: int = 10
    m_step_maxfev: int = 200
    m_step_fatol: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1 or self.gibbs_sweeps < 1 or self.average_last < 1:
            raise InvalidInputError("iteration counts must be positive")


@dataclass
class McemTrace:
    iteration: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    sigma0: list = field(default_factory=list)
    q: list = field(default_factory=list)
    q_before: list = field(default_factory=list)
    n_clusters: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.iteration, self.tau, self.alpha, self.sigma0, self.q))


@dataclass(frozen=True)
class McemResult:
    tau: float
    alpha: float
    sigma0: float
    c: float
    iterations: int
    converged: bool
    trace: McemTrace
    partition: Partition

    def params(self) -> SncpParams:
        return SncpParams(self.tau, self.c, self.alpha, self.sigma0)


def default_init(pattern, c: float) -> tuple[SncpParams, Partition]:
    """Data-driven start: nearest-neighbour scale, coordinate spread, single linkage."""
    pts = _points(pattern)
    if len(pts) >= 2:
        dist, _ = cKDTree(pts).query(pts, k=2)
        nn = float(dist[:, 1].mean())
    else:
        nn = 1.0
    alpha0 = 0.5 * nn if nn > 0 else 1.0
    sigma0 = float(math.sqrt(pts.var(axis=0).mean())) if len(pts) >= 2 else 1.0
    if not sigma0 > 0:
        sigma0 = 1.0
    if len(pts) >= 2:
        lab = fcluster(linkage(pts, method="single"), t=3 * alpha0, criterion="distance")
        part = canonicalize_partition(lab)
    else:
        part = Partition((1,) * len(pts))
    return SncpParams(1.0, c, alpha0, sigma0), part


def m_step(
    stats: ClusterSufficientStats,
    k: int,
    c: float,
    start: tuple[float, float, float],
    config: McemConfig,
    scale: float = 1.0,
):
    """Maximise Q over (tau, alpha, sigma0) at a fixed partition.

    Nelder-Mead on log parameters, started from ``start``; the returned
    point never has lower Q than ``start``. Lengths are kept within
    ``[1e-8, 1e8] * scale`` and tau within ``[1e-8, 1e8]``: Q can be flat as
    ``sigma0 -> 0`` (all centres collapse onto the origin).
    """
    lo = np.log([1e-8, 1e-8 * scale, 1e-8 * scale])
    hi = np.log([1e8, 1e8 * scale, 1e8 * scale])

    def neg_q(z):
        tau, alpha, sigma0 = np.exp(z)
        val = complete_data_q(stats, k, tau, c, alpha, sigma0)
        return -val if math.isfinite(val) else math.inf

    z0 = np.clip(np.log(np.asarray(start, dtype=float)), lo, hi)
    q0 = -neg_q(np.log(np.asarray(start, dtype=float)))
    res = optimize.minimize(
        neg_q,
        z0,
        method="Nelder-Mead",
        bounds=list(zip(lo, hi)),
        options={"maxfev": config.m_step_maxfev, "fatol": config.m_step_fatol, "xatol": 1e-8},
    )
    q1 = -float(res.fun)
    if not q1 >= q0:
        return tuple(start), q0, q0
    return tuple(float(v) for v in np.exp(res.x)), q0, q1


def mcem_fit(
    pattern,
    fixed_c: float,
    init: SncpParams | None = None,
    config: McemConfig | None = None,
    rng: np.random.Generator | None = None,
    init_partition: Partition | None = None,
) -> McemResult:
    """Fit (tau, alpha, sigma0) with c held fixed, by Monte-Carlo EM.

    Each iteration draws one partition with ``gibbs_sweeps`` sweeps at the
    current parameters (warm-started from the previous draw), then maximises
    the complete-data log-likelihood at that partition. The estimate is the
    average of the last ``average_last`` iterates.
    """
    config = config or McemConfig()
    if rng is None:
        raise InvalidInputError("an explicit rng is required")
    pts = _points(pattern)
    k = len(pts)
    if k == 0:
        raise InvalidInputError("cannot fit an empty pattern")
    if not fixed_c > 0:
        raise InvalidInputError("fixed_c must be positive")
    auto_params, auto_part = default_init(pts, fixed_c)
    params = init if init is not None else auto_params
    params = SncpParams(params.tau, fixed_c, params.alpha, params.sigma0)
    part = init_partition if init_partition is not None else auto_part
    if len(part) != k:
        raise InvalidInputError("init_partition length does not match the pattern")

    scale = float(np.sqrt(pts.var(axis=0).mean())) if k > 1 else 1.0
    scale = scale if scale > 0 else 1.0
    lab = part.as_array() - 1
    stats = _stats_for(pts, lab)
    trace = McemTrace()
    cur = (params.tau, params.alpha, params.sigma0)
    quiet = 0
    converged = False
    for it in range(1, config.max_iter + 1):
        for _ in range(config.gibbs_sweeps):
            _sweep_inplace(pts, lab, stats, params, rng)
        new, q_before, q_after = m_step(stats, k, fixed_c, cur, config, scale)
        rel = max(abs(a - b) / abs(b) for a, b in zip(new, cur))
        quiet = quiet + 1 if rel < config.rel_tol else 0
        cur = new
        params = SncpParams(cur[0], fixed_c, cur[1], cur[2])
        trace.iteration.append(it)
        trace.tau.append(cur[0])
        trace.alpha.append(cur[1])
        trace.sigma0.append(cur[2])
        trace.q.append(q_after)
        trace.q_before.append(q_before)
        trace.n_clusters.append(int(stats.active().sum()))
        if quiet >= config.patience:
            converged = True
            break
    m = min(config.average_last, len(trace.tau))
    est = [float(np.mean(v[-m:])) for v in (trace.tau, trace.alpha, trace.sigma0)]
    return McemResult(
        tau=est[0],
        alpha=est[1],
        sigma0=est[2],
        c=fixed_c,
        iterations=len(trace.tau),
        converged=converged,
        trace=trace,
        partition=canonicalize_partition(lab + 1),
    )
