"""Monte-Carlo check of the Palm mixture representation for superpositions.

Both sides of the Campbell identity

    E[Phi(g) exp(-Phi(f))] = int g(x) L_{Phi_x}(f) M_Phi(dx)

are estimated independently. The left side simulates the superposition
directly; the right side draws ``x`` from the mean measure and a Palm version
of the superposition at ``x``, assembled as a mixture of component Palm
versions with weights ``dM_i / dM_Phi(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import InvalidInputError, Window

# Test functions act on (n, 2) arrays and return (n,) arrays.
PointFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class BatchPatterns:
    """Many patterns stored flat: ``points`` plus per-pattern ``counts``."""

    points: np.ndarray
    counts: np.ndarray

    def sums(self, h: PointFunction) -> np.ndarray:
        """Per-pattern ``sum_j h(x_j)``."""
        vals = np.asarray(h(self.points), dtype=float) if len(self.points) else np.zeros(0)
        owner = np.repeat(np.arange(len(self.counts)), self.counts)
        return np.bincount(owner, weights=vals, minlength=len(self.counts))


@dataclass(frozen=True)
class PalmComponent:
    """A point process with a known mean measure and Palm sampler.

    ``sample_batch(m, rng)`` draws ``m`` independent patterns;
    ``sample_palm_batch(xs, rng)`` draws one Palm version at each row of
    ``xs`` (each must contain the atom at that location); ``density(x)`` is
    the intensity function; ``mass`` its integral over ``window``;
    ``sample_locations(m, rng)`` draws from the normalised mean measure.
    """

    window: Window
    mass: float
    density: Callable[[np.ndarray], np.ndarray]
    sample_batch: Callable[[int, np.random.Generator], BatchPatterns]
    sample_palm_batch: Callable[[np.ndarray, np.random.Generator], BatchPatterns]
    sample_locations: Callable[[int, np.random.Generator], np.ndarray]


def _uniform(window: Window, m: int, rng) -> np.ndarray:
    u = rng.random((m, 2))
    return np.column_stack([window.x_min + window.width * u[:, 0], window.y_min + window.height * u[:, 1]])


def poisson_component(window: Window, intensity: float) -> PalmComponent:
    """Homogeneous Poisson process; by Slivnyak its Palm version is ``Phi + delta_x``."""
    if not intensity >= 0:
        raise InvalidInputError("intensity must be nonnegative")
    area = window.area()

    def sample_batch(m, rng):
        counts = rng.poisson(intensity * area, size=m)
        return BatchPatterns(_uniform(window, int(counts.sum()), rng), counts)

    def sample_palm_batch(xs, rng):
        base = sample_batch(len(xs), rng)
        # prepend the conditioning atom to each pattern
        owner = np.repeat(np.arange(len(xs)), base.counts)
        pts = np.concatenate([xs, base.points])
        order = np.argsort(np.concatenate([np.arange(len(xs)), owner]), kind="stable")
        return BatchPatterns(pts[order], base.counts + 1)

    return PalmComponent(
        window=window,
        mass=intensity * area,
        density=lambda x: np.full(len(x), float(intensity)),
        sample_batch=sample_batch,
        sample_palm_batch=sample_palm_batch,
        sample_locations=lambda m, rng: _uniform(window, m, rng),
    )


def _concat(a: BatchPatterns, b: BatchPatterns) -> BatchPatterns:
    """Pattern-wise union of two batches of equal length."""
    owner = np.concatenate(
        [np.repeat(np.arange(len(a.counts)), a.counts), np.repeat(np.arange(len(b.counts)), b.counts)]
    )
    pts = np.concatenate([a.points.reshape(-1, 2), b.points.reshape(-1, 2)])
    order = np.argsort(owner, kind="stable")
    return BatchPatterns(pts[order], a.counts + b.counts)


def _mean_se(vals: np.ndarray) -> MonteCarloEstimate:
    n = len(vals)
    return MonteCarloEstimate(float(math.fsum(vals) / n), float(vals.std(ddof=1) / math.sqrt(n)), n)


def campbell_lhs(
    sample_batch: Callable[[int, np.random.Generator], BatchPatterns],
    f: PointFunction,
    g: PointFunction,
    n_samples: int,
    rng: np.random.Generator,
) -> MonteCarloEstimate:
    """Monte-Carlo estimate of ``E[Phi(g) exp(-Phi(f))]``."""
    if n_samples < 100:
        raise InvalidInputError("n_samples must be at least 100")
    batch = sample_batch(n_samples, rng)
    vals = batch.sums(g) * np.exp(-batch.sums(f))
    return _mean_se(vals)


def superposition_sampler(components):
    def sample(m, rng):
        out = components[0].sample_batch(m, rng)
        for comp in components[1:]:
            out = _concat(out, comp.sample_batch(m, rng))
        return out

    return sample


def mixture_weights(components, xs: np.ndarray) -> np.ndarray:
    """``dM_i / dM_Phi`` at each location; rows sum to one."""
    dens = np.stack([np.asarray(c.density(xs), dtype=float) for c in components], axis=1)
    total = dens.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise InvalidInputError("mean measure vanishes at a sampled location")
    return dens / total


def palm_mixture_rhs(
    components,
    f: PointFunction,
    g: PointFunction,
    n_samples: int,
    rng: np.random.Generator,
    return_weights: bool = False,
):
    """Monte-Carlo estimate of ``int g(x) L_{Phi_x}(f) M_Phi(dx)`` via the Palm mixture.

    For each sample: draw ``x`` proportional to ``M_Phi``, pick branch ``i``
    with probability ``dM_i / dM_Phi(x)``, and form ``Phi_{i,x} + sum_{j != i} Phi_j``.
    """
    components = list(components)
    if n_samples < 100:
        raise InvalidInputError("n_samples must be at least 100")
    if not components:
        raise InvalidInputError("need at least one component")
    win = components[0].window
    if any(c.window != win for c in components):
        raise InvalidInputError("components live on different windows")
    masses = np.array([c.mass for c in components], dtype=float)
    total = masses.sum()
    if total <= 0:
        raise InvalidInputError("superposition has zero mean measure")

    # x ~ M_Phi / M_Phi(R): pick a component by mass, then a location from it
    src = rng.choice(len(components), size=n_samples, p=masses / total)
    xs = np.empty((n_samples, 2))
    for i, comp in enumerate(components):
        sel = np.flatnonzero(src == i)
        if sel.size:
            xs[sel] = comp.sample_locations(sel.size, rng)

    weights = mixture_weights(components, xs)
    cum = np.cumsum(weights, axis=1)
    u = rng.random(n_samples)[:, None]
    branch = np.minimum((u >= cum).sum(axis=1), len(components) - 1)

    phi_f = np.empty(n_samples)
    for i, comp in enumerate(components):
        sel = np.flatnonzero(branch == i)
        if not sel.size:
            continue
        palm = comp.sample_palm_batch(xs[sel], rng)
        acc = palm.sums(f)
        for j, other in enumerate(components):
            if j != i:
                acc = acc + other.sample_batch(sel.size, rng).sums(f)
        phi_f[sel] = acc
    vals = total * np.asarray(g(xs), dtype=float) * np.exp(-phi_f)
    est = _mean_se(vals)
    return (est, weights) if return_weights else est


def grid_function(values, window: Window) -> PointFunction:
    """Piecewise-constant function on a regular grid over ``window``.

    ``values[i, j]`` is the value on the cell in column ``i`` (x) and row
    ``j`` (y).
    """
    vals = np.asarray(values, dtype=float)
    nx, ny = vals.shape

    def fn(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        ix = np.clip(((x[:, 0] - window.x_min) / window.width * nx).astype(int), 0, nx - 1)
        iy = np.clip(((x[:, 1] - window.y_min) / window.height * ny).astype(int), 0, ny - 1)
        return vals[ix, iy]

    return fn


def standard_test_pairs(window: Window, n_pairs: int = 5, seed: int = 20240607, scale: float = 0.05):
    """Frozen piecewise-constant ``(f, g)`` pairs on a 4x4 grid.

    ``f`` values are uniform on ``[0, scale]``; ``g`` values uniform on
    ``[0, 1]``. ``scale`` keeps ``exp(-Phi(f))`` away from underflow for
    patterns with ~100 points.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        fv = scale * rng.random((4, 4))
        gv = rng.random((4, 4))
        out.append((grid_function(fv, window), grid_function(gv, window)))
    return out


@dataclass(frozen=True)
class PalmCheck:
    lhs: MonteCarloEstimate
    rhs: MonteCarloEstimate

    @property
    def z_score(self) -> float:
        se = math.hypot(self.lhs.std_error, self.rhs.std_error)
        if se == 0:
            return 0.0 if self.lhs.estimate == self.rhs.estimate else math.inf
        return (self.lhs.estimate - self.rhs.estimate) / se

    def passed(self, n_sigma: float = 3.0) -> bool:
        return abs(self.z_score) <= n_sigma

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs.estimate,
            "lhs_se": self.lhs.std_error,
            "rhs": self.rhs.estimate,
            "rhs_se": self.rhs.std_error,
            "z_score": self.z_score,
            "pass": self.passed(),
        }


def validate_poisson_superposition(
    intensities, f: PointFunction, g: PointFunction, n_samples: int, rng_lhs, rng_rhs, window: Window | None = None
) -> PalmCheck:
    """Compare both sides of the identity for a superposition of Poisson processes."""
    window = window or Window(0.0, 1.0, 0.0, 1.0)
    comps = [poisson_component(window, lam) for lam in intensities]
    lhs = campbell_lhs(superposition_sampler(comps), f, g, n_samples, rng_lhs)
    rhs = palm_mixture_rhs(comps, f, g, n_samples, rng_rhs)
    return PalmCheck(lhs, rhs)
