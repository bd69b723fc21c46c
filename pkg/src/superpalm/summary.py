"""Ripley's K: edge-corrected estimate and closed forms for the fitted models."""

from __future__ import annotations

import math
from typing import Callable, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    DppNoiseParams,
    InsufficientDataError,
    InvalidInputError,
    KCurve,
    PointPattern,
    Window,
)

KLike = Union[KCurve, Callable[[float], float]]

DEFAULT_N_GRID = 513


def default_r_grid(window: Window, n: int = DEFAULT_N_GRID, r_max: float | None = None) -> np.ndarray:
    """``n`` equally spaced radii from 0 to a quarter of the shorter window side."""
    if r_max is None:
        r_max = window.shorter_side() / 4
    return np.linspace(0.0, r_max, n)


def ripley_isotropic_weights(points: np.ndarray, dist: np.ndarray, window: Window) -> np.ndarray:
    """Fraction of the circle of radius ``dist[i]`` about ``points[i]`` inside ``window``.

    Assumes ``dist <= window.shorter_side() / 2`` so the circle can cross at
    most two (adjacent) sides.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    r = np.asarray(dist, dtype=float)
    d = np.stack(
        [
            pts[:, 0] - window.x_min,
            window.x_max - pts[:, 0],
            pts[:, 1] - window.y_min,
            window.y_max - pts[:, 1],
        ],
        axis=1,
    )
    d = np.maximum(d, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r[:, None] > 0, d / r[:, None], np.inf)
    half = np.arccos(np.clip(ratio, -1.0, 1.0))  # 0 when the edge is not reached
    outside = 2.0 * half.sum(axis=1)
    # Arcs cut by two adjacent edges overlap when the corner lies in the disc.
    for a, b in ((0, 2), (0, 3), (1, 2), (1, 3)):
        corner = d[:, a] ** 2 + d[:, b] ** 2 < r**2
        outside -= np.where(corner, half[:, a] + half[:, b] - math.pi / 2, 0.0)
    return 1.0 - outside / (2.0 * math.pi)


def k_hat(pattern: PointPattern, r_grid) -> KCurve:
    """Edge-corrected estimate of K on ``r_grid``.

    Uses Ripley's isotropic correction and the ``|R| / (n (n - 1))``
    normalisation.
    """
    r = np.asarray(r_grid, dtype=float)
    n = len(pattern)
    if n < 2:
        raise InsufficientDataError("K estimate needs at least 2 points")
    if r.ndim != 1 or r.size < 2 or r[0] < 0 or np.any(np.diff(r) <= 0):
        raise InvalidInputError("r_grid must be nonnegative and strictly increasing")
    win = pattern.window
    r_max = float(r[-1])
    if r_max > win.shorter_side() / 2:
        raise InvalidInputError(
            f"r up to {r_max} exceeds half the shorter window side ({win.shorter_side() / 2})"
        )
    pts = pattern.points
    pairs = cKDTree(pts).query_pairs(r_max, output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        dij = np.hypot(*(pts[i] - pts[j]).T)
        # ordered pairs: (i, j) weighted at i, (j, i) weighted at j
        dist = np.concatenate([dij, dij])
        w = ripley_isotropic_weights(np.concatenate([pts[i], pts[j]]), dist, win)
        order = np.argsort(dist, kind="stable")
        dist = dist[order]
        cum = np.concatenate([[0.0], np.cumsum(1.0 / w[order])])
        counts = cum[np.searchsorted(dist, r, side="right")]
    else:
        counts = np.zeros_like(r)
    return KCurve(r, win.area() / (n * (n - 1)) * counts)


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidInputError("r must be nonnegative")
    return r


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def k_poisson(r):
    """K of a homogeneous Poisson process, pi r^2."""
    r = _check_r(r)
    return _scalar(math.pi * r * r)


def _dpp_deficit(r, alpha):
    # (pi alpha^2 / 2)(1 - exp(-2 r^2 / alpha^2)), written with expm1 for small r
    return -(math.pi * alpha * alpha / 2) * np.expm1(-2.0 * r * r / (alpha * alpha))


def k_gaussian_dpp(r, alpha: float):
    """K of the Gaussian-kernel DPP with range ``alpha``."""
    r = _check_r(r)
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    return _scalar(math.pi * r * r - _dpp_deficit(r, alpha))


def k_noisy_dpp(r, params: DppNoiseParams):
    """K of a Gaussian DPP superposed with independent Poisson noise."""
    r = _check_r(r)
    if not isinstance(params, DppNoiseParams):
        raise InvalidInputError("params must be DppNoiseParams")
    rho = params.rho
    if rho == 0:
        return _scalar(math.pi * r * r)
    share = (params.rho_xi / rho) ** 2
    return _scalar(math.pi * r * r - share * _dpp_deficit(r, params.alpha))


def _eval(k: KLike, r):
    return np.asarray(k(r), dtype=float)


def k_superposition(r, k1: KLike, rho1: float, k2: KLike, rho2: float):
    """K of the superposition of two independent stationary processes."""
    r = _check_r(r)
    if rho1 < 0 or rho2 < 0:
        raise InvalidInputError("intensities must be nonnegative")
    rho = rho1 + rho2
    if rho <= 0:
        raise InvalidInputError("at least one intensity must be positive")
    ball = math.pi * r * r
    # Skip evaluating a curve whose weight is exactly zero.
    term1 = (_eval(k1, r) * rho1 + rho2 * ball) * (rho1 / rho) if rho1 > 0 else 0.0
    term2 = (rho1 * ball + _eval(k2, r) * rho2) * (rho2 / rho) if rho2 > 0 else 0.0
    return _scalar((term1 + term2) / rho)


def k_superposition_multi(r, curves: Sequence[tuple[KLike, float]]):
    """K of the superposition of ``d`` independent stationary processes.

    ``curves`` holds ``(K_i, rho_i)`` pairs.
    """
    r = _check_r(r)
    if len(curves) < 1:
        raise InvalidInputError("need at least one component")
    rhos = [float(rho_i) for _, rho_i in curves]
    if any(v < 0 for v in rhos):
        raise InvalidInputError("intensities must be nonnegative")
    rho = sum(rhos)
    if rho <= 0:
        raise InvalidInputError("at least one intensity must be positive")
    ball = math.pi * r * r
    total = 0.0
    for (k_i, _), rho_i in zip(curves, rhos):
        if rho_i == 0:
            continue
        total = total + (rho_i / rho) * (_eval(k_i, r) * rho_i + (rho - rho_i) * ball)
    return _scalar(total / rho)
