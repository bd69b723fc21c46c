"""Samplers for Poisson, Gaussian DPP, Thomas-gamma SNCP and superpositions."""

from __future__ import annotations

import math

import numpy as np

from .core import (
    EMPTY_PARTITION,
    DppNoiseParams,
    InvalidInputError,
    Partition,
    PointPattern,
    SncpParams,
    Window,
)

EIGEN_CUTOFF = 1e-8


def simulate_poisson(window: Window, intensity: float, rng: np.random.Generator) -> PointPattern:
    if not intensity >= 0:
        raise InvalidInputError(f"intensity must be nonnegative, got {intensity}")
    n = rng.poisson(intensity * window.area())
    pts = _uniform_in(window, n, rng)
    return PointPattern(pts, window)


def _uniform_in(window: Window, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((n, 2))
    return np.column_stack(
        [window.x_min + window.width * u[:, 0], window.y_min + window.height * u[:, 1]]
    )


def gaussian_dpp_spectrum(window: Window, rho_xi: float, alpha: float):
    """Fourier frequencies and eigenvalues of the periodised Gaussian kernel.

    Returns ``(freqs, eigvals)`` with ``freqs`` in cycles per unit length,
    truncated where the eigenvalue drops below ``EIGEN_CUTOFF``.
    """
    DppNoiseParams(rho_xi, alpha)  # validates the existence constraint
    if rho_xi == 0:
        return np.zeros((0, 2)), np.zeros(0)
    lam0 = rho_xi * math.pi * alpha**2
    # Spectral density at frequency u: lam0 * exp(-(pi alpha |u|)^2)
    u_max = math.sqrt(max(math.log(lam0 / EIGEN_CUTOFF), 0.0)) / (math.pi * alpha)
    kx = int(math.floor(u_max * window.width))
    ky = int(math.floor(u_max * window.height))
    fx = np.arange(-kx, kx + 1) / window.width
    fy = np.arange(-ky, ky + 1) / window.height
    gx, gy = np.meshgrid(fx, fy, indexing="ij")
    freqs = np.column_stack([gx.ravel(), gy.ravel()])
    eig = lam0 * np.exp(-((math.pi * alpha) ** 2) * (freqs**2).sum(axis=1))
    keep = eig >= EIGEN_CUTOFF
    return freqs[keep], eig[keep]


def sample_projection_dpp(window: Window, freqs: np.ndarray, rng: np.random.Generator, batch: int = 64) -> np.ndarray:
    """Exact sample of the projection DPP spanned by the given Fourier modes.

    Sequential chain-rule sampling: each new point is drawn by rejection from
    a uniform proposal, accepted with probability ``1 - |P v(x)|^2 / n`` where
    ``P`` projects onto the span of the features of the points already drawn.
    """
    n = len(freqs)
    if n == 0:
        return np.zeros((0, 2))
    origin = np.array([window.x_min, window.y_min])

    def features(x):
        # unit-modulus Fourier features, so |v(x)|^2 == n everywhere
        phase = 2.0 * math.pi * ((x - origin) @ freqs.T)
        return np.exp(1j * phase)

    basis = np.zeros((n, n), dtype=complex)  # orthonormal rows
    out = np.empty((n, 2))
    out[0] = _uniform_in(window, 1, rng)[0]
    v = features(out[:1])[0]
    basis[0] = v / math.sqrt(n)
    for i in range(1, n):
        while True:
            cand = _uniform_in(window, batch, rng)
            acc_u = rng.random(batch)
            f = features(cand)
            proj = f @ basis[:i].conj().T
            p_acc = 1.0 - (np.abs(proj) ** 2).sum(axis=1) / n
            hit = np.flatnonzero(acc_u < p_acc)
            if hit.size:
                j = hit[0]
                break
        out[i] = cand[j]
        w = f[j] - proj[j] @ basis[:i]
        basis[i] = w / np.linalg.norm(w)
    return out


def simulate_gaussian_dpp(window: Window, rho_xi: float, alpha: float, rng: np.random.Generator) -> PointPattern:
    """Approximate Gaussian DPP sample via the spectral method on the periodised window."""
    freqs, eig = gaussian_dpp_spectrum(window, rho_xi, alpha)
    keep = rng.random(len(eig)) < eig
    pts = sample_projection_dpp(window, freqs[keep], rng)
    return PointPattern(pts, window)


def simulate_noisy_dpp(window: Window, params: DppNoiseParams, rng: np.random.Generator) -> PointPattern:
    """Gaussian DPP contaminated by independent homogeneous Poisson noise."""
    signal = simulate_gaussian_dpp(window, params.rho_xi, params.alpha, rng)
    noise = simulate_poisson(window, params.omega, rng)
    return superpose(signal, noise)


def sample_crp(n: int, tau: float, rng: np.random.Generator) -> Partition:
    """Chinese restaurant process partition of ``n`` items, canonical labels."""
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    if n == 0:
        return EMPTY_PARTITION
    labels = [1]
    sizes = [1]
    for i in range(1, n):
        # new table with weight tau, table h with weight n_h; total i + tau
        u = rng.random() * (i + tau)
        if u >= i:
            sizes.append(1)
            labels.append(len(sizes))
        else:
            h = int(np.searchsorted(np.cumsum(sizes), u, side="right"))
            sizes[h] += 1
            labels.append(h + 1)
    return Partition(tuple(labels))


def sample_negative_binomial(tau: float, c: float, rng: np.random.Generator) -> int:
    """NB(tau, c/(c+1)) count via its gamma-Poisson mixture."""
    return int(rng.poisson(rng.gamma(tau, 1.0 / c)))


def simulate_thomas_gamma_sncp(
    params: SncpParams,
    window: Window | None = None,
    fixed_n: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Thomas-gamma SNCP on the whole plane.

    Returns ``(pattern, partition)``. Points are not clipped; if they leave
    ``window`` the pattern carries the tight bounding box instead.
    """
    if rng is None:
        raise InvalidInputError("an explicit rng is required")
    if fixed_n is None:
        n = sample_negative_binomial(params.tau, params.c, rng)
    else:
        n = int(fixed_n)
        if n < 0:
            raise InvalidInputError("fixed_n must be nonnegative")
    if n == 0:
        return PointPattern(np.zeros((0, 2)), window or Window(-1.0, 1.0, -1.0, 1.0)), EMPTY_PARTITION
    part = sample_crp(n, params.tau, rng)
    centers = rng.normal(0.0, params.sigma0, size=(part.n_clusters, 2))
    pts = centers[part.as_array() - 1] + rng.normal(0.0, params.alpha, size=(n, 2))
    if window is None or not np.all(window.contains(pts)):
        window = Window.bounding(pts)
    return PointPattern(pts, window), part


def superpose(p1: PointPattern, p2: PointPattern) -> PointPattern:
    if p1.window != p2.window:
        raise InvalidInputError("cannot superpose patterns on different windows")
    return PointPattern(np.concatenate([p1.points, p2.points]), p1.window)
