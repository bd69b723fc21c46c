"""Minimum-contrast fitting of (noisy) Gaussian DPPs to K-function estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.special import expit, logit

from .core import (
    DppNoiseParams,
    InsufficientDataError,
    InvalidInputError,
    KCurve,
    PointPattern,
    dpp_max_intensity,
)
from .summary import k_gaussian_dpp, k_hat, k_noisy_dpp

MIN_POINTS = 10


@dataclass(frozen=True)
class MceConfig:
    """Contrast ``int_{r_l}^{r_u} |K_hat^q - K^q|^p dr`` on an ``n_quad`` grid.

    ``r_u=None`` means a quarter of the shorter window side.
    """

    r_l: float = 0.0
    r_u: float | None = None
    q: float = 0.5
    p: float = 2.0
    n_quad: int = 513
    n_starts: int = 5
    gtol: float = 1e-8
    maxiter: int = 500

    def __post_init__(self):
        if not self.r_l >= 0:
            raise InvalidInputError("r_l must be nonnegative")
        if self.r_u is not None and not self.r_u > self.r_l:
            raise InvalidInputError("need r_l < r_u")
        if not self.q > 0 or not self.p >= 1:
            raise InvalidInputError("need q > 0 and p >= 1")
        if self.n_quad < 3 or self.n_quad % 2 == 0:
            raise InvalidInputError("n_quad must be odd and >= 3")
        if self.n_starts < 1:
            raise InvalidInputError("n_starts must be >= 1")

    def resolve(self, window) -> "MceConfig":
        if self.r_u is not None:
            return self
        r_u = window.shorter_side() / 4
        if not r_u > self.r_l:
            raise InvalidInputError("r_l must be below a quarter of the shorter side")
        return MceConfig(self.r_l, r_u, self.q, self.p, self.n_quad, self.n_starts, self.gtol, self.maxiter)

    def grid(self) -> np.ndarray:
        if self.r_u is None:
            raise InvalidInputError("r_u unresolved; call resolve(window) first")
        return np.linspace(self.r_l, self.r_u, self.n_quad)


def simpson(values, r_grid) -> float:
    """Composite Simpson rule on an equally spaced odd-length grid."""
    return float(integrate.simpson(np.asarray(values, dtype=float), x=np.asarray(r_grid, dtype=float)))


def _contrast(khat_vals, model_vals, r, q, p):
    diff = np.abs(np.power(np.maximum(khat_vals, 0.0), q) - np.power(np.maximum(model_vals, 0.0), q))
    return simpson(diff**p, r)


def mce_objective(k_hat_curve: KCurve, k_model: Callable, config: MceConfig) -> float:
    """Simpson approximation of the contrast between ``k_hat_curve`` and ``k_model``.

    ``k_hat_curve`` is used at its own grid when that grid is exactly the
    config grid; otherwise it is linearly interpolated, which requires it to
    cover ``[r_l, r_u]``.
    """
    r = config.grid()
    grid = k_hat_curve.r_grid
    if grid[0] > r[0] + 1e-12 or grid[-1] < r[-1] - 1e-12:
        raise InvalidInputError(f"K curve covers [{grid[0]}, {grid[-1]}], need [{r[0]}, {r[-1]}]")
    if grid.shape == r.shape and np.array_equal(grid, r):
        kh = k_hat_curve.values
    else:
        kh = np.interp(r, grid, k_hat_curve.values)
    km = np.asarray(k_model(r), dtype=float)
    return _contrast(kh, km, r, config.q, config.p)


@dataclass
class FitDiagnostics:
    converged: bool
    iterations: int
    n_evaluations: int
    objective_at_init: float
    starts: list = field(default_factory=list)
    message: str = ""


@dataclass(frozen=True)
class NoisyDppFit:
    params: DppNoiseParams
    objective: float
    diagnostics: FitDiagnostics

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


@dataclass(frozen=True)
class PlainDppFit:
    rho_xi: float
    alpha: float
    objective: float
    diagnostics: FitDiagnostics

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


# ---------------------------------------------------------------------------
# Optimiser plumbing


def _central_grad(fun, x):
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _bfgs(fun, x0, gtol, maxiter):
    res = optimize.minimize(
        fun,
        np.asarray(x0, dtype=float),
        jac=lambda x: _central_grad(fun, x),
        method="BFGS",
        options={"gtol": gtol, "maxiter": maxiter, "norm": np.inf},
    )
    grad_ok = bool(np.max(np.abs(res.jac)) < gtol) if res.jac is not None else False
    # scipy flags "precision loss" when the line search cannot improve
    # further; at that point the numerical gradient is at its noise floor.
    converged = bool(res.success or grad_ok or res.status == 2)
    return res, converged


# Existence constraint rho_xi < 1/(pi alpha^2) is built into the
# parametrisation: alpha = sigmoid(b) / sqrt(pi rho_xi).
_SAT = 1.0 - 1e-9


def _alpha_bound(rho_xi: float) -> float:
    return 1.0 / math.sqrt(math.pi * rho_xi) if rho_xi > 0 else math.inf


def _decode_noisy(theta, rho_hat):
    a, b = theta
    rho_xi = rho_hat * float(expit(a))
    alpha = float(expit(b)) * _alpha_bound(rho_xi)
    return rho_xi, alpha


def _encode_alpha(alpha, rho_xi):
    s = alpha / _alpha_bound(rho_xi)
    s = min(max(s, 1e-6), 1 - 1e-6)
    return float(logit(s))


def _prepare(pattern: PointPattern, config: MceConfig):
    if len(pattern) < MIN_POINTS:
        raise InsufficientDataError(f"fitting needs at least {MIN_POINTS} points, got {len(pattern)}")
    cfg = config.resolve(pattern.window)
    r = cfg.grid()
    kh = k_hat(pattern, r)
    rho_hat = len(pattern) / pattern.window.area()
    return cfg, r, kh, rho_hat


def _alpha_starts(window, rho_xi, n_starts, alpha0):
    side = window.shorter_side()
    cap = 0.95 * _alpha_bound(rho_xi)
    grid = np.geomspace(0.005 * side, 0.2 * side, n_starts) if n_starts > 1 else np.array([])
    starts = [min(alpha0, cap)]
    for a in grid:
        a = min(a, cap)
        if all(abs(a - s) > 1e-12 for s in starts):
            starts.append(a)
    return starts[:n_starts]


def fit_noisy_dpp(pattern: PointPattern, config: MceConfig | None = None, init=None) -> NoisyDppFit:
    """Fit the noisy Gaussian DPP by minimum contrast.

    The overall intensity is fixed at ``n / |R|``; ``rho_xi`` and ``alpha``
    are fitted and ``omega`` is the remainder. ``init`` is an optional
    ``(rho_xi, alpha)`` starting point.
    """
    cfg, r, kh, rho_hat = _prepare(pattern, config or MceConfig())
    scale_ref = _contrast(kh.values, np.zeros_like(r), r, cfg.q, cfg.p) or 1.0

    def model(rho_xi, alpha):
        share = (rho_xi / rho_hat) ** 2
        return math.pi * r * r + share * (math.pi * alpha * alpha / 2) * np.expm1(-2 * r * r / (alpha * alpha))

    def objective(theta):
        rho_xi, alpha = _decode_noisy(theta, rho_hat)
        return _contrast(kh.values, model(rho_xi, alpha), r, cfg.q, cfg.p)

    def scaled(theta):
        return objective(theta) / scale_ref

    if init is None:
        rho0 = rho_hat / 2
        alpha0 = 0.05 * pattern.window.shorter_side()
    else:
        rho0, alpha0 = float(init[0]), float(init[1])
        if not (0 < rho0 < rho_hat and alpha0 > 0):
            raise InvalidInputError("init must satisfy 0 < rho_xi < n/|R| and alpha > 0")
    a0 = float(logit(rho0 / rho_hat))
    theta_init = np.array([a0, _encode_alpha(alpha0, rho0)])
    f_init = objective(theta_init)

    best = None
    starts = []
    n_eval = 0
    for alpha_s in _alpha_starts(pattern.window, rho0, cfg.n_starts, alpha0):
        x0 = np.array([a0, _encode_alpha(alpha_s, rho0)])
        res, conv = _bfgs(scaled, x0, cfg.gtol, cfg.maxiter)
        n_eval += res.nfev
        val = objective(res.x)
        starts.append({"alpha_start": alpha_s, "objective": val, "converged": conv, "iterations": int(res.nit)})
        if best is None or val < best[0]:
            best = (val, res, conv)
    val, res, conv = best
    theta = res.x
    if f_init < val:  # never return something worse than the starting point
        theta, val, conv = theta_init, f_init, False
    rho_xi, alpha = _decode_noisy(theta, rho_hat)
    rho_xi = min(max(rho_xi, 0.0), rho_hat)
    if rho_xi > 0:
        alpha = min(alpha, _SAT * _alpha_bound(rho_xi))
    saturated = expit(theta[0]) > _SAT or expit(theta[1]) > _SAT
    params = DppNoiseParams(rho_xi=rho_xi, alpha=alpha, omega=max(rho_hat - rho_xi, 0.0))
    diag = FitDiagnostics(
        converged=bool(conv and not saturated),
        iterations=int(res.nit),
        n_evaluations=n_eval,
        objective_at_init=f_init,
        starts=starts,
        message=str(res.message) + (" (at parameter boundary)" if saturated else ""),
    )
    return NoisyDppFit(params, val, diag)


def fit_plain_dpp(pattern: PointPattern, config: MceConfig | None = None, init_alpha: float | None = None) -> PlainDppFit:
    """Fit a Gaussian DPP ignoring noise: intensity fixed at ``n / |R|``, fit ``alpha``."""
    cfg, r, kh, rho_hat = _prepare(pattern, config or MceConfig())
    bound = _alpha_bound(rho_hat)
    scale_ref = _contrast(kh.values, np.zeros_like(r), r, cfg.q, cfg.p) or 1.0

    def objective(theta):
        alpha = float(expit(theta[0])) * bound
        return _contrast(kh.values, k_gaussian_dpp(r, alpha), r, cfg.q, cfg.p)

    def scaled(theta):
        return objective(theta) / scale_ref

    alpha0 = init_alpha if init_alpha is not None else 0.05 * pattern.window.shorter_side()
    theta_init = np.array([_encode_alpha(alpha0, rho_hat)])
    f_init = objective(theta_init)
    best = None
    starts = []
    n_eval = 0
    for alpha_s in _alpha_starts(pattern.window, rho_hat, cfg.n_starts, alpha0):
        res, conv = _bfgs(scaled, np.array([_encode_alpha(alpha_s, rho_hat)]), cfg.gtol, cfg.maxiter)
        n_eval += res.nfev
        val = objective(res.x)
        starts.append({"alpha_start": alpha_s, "objective": val, "converged": conv, "iterations": int(res.nit)})
        if best is None or val < best[0]:
            best = (val, res, conv)
    val, res, conv = best
    theta = res.x
    if f_init < val:
        theta, val, conv = theta_init, f_init, False
    s = float(expit(theta[0]))
    saturated = s > _SAT or s < 1e-9
    alpha = min(s, _SAT) * bound
    diag = FitDiagnostics(
        converged=bool(conv and not saturated),
        iterations=int(res.nit),
        n_evaluations=n_eval,
        objective_at_init=f_init,
        starts=starts,
        message=str(res.message) + (" (at parameter boundary)" if saturated else ""),
    )
    return PlainDppFit(rho_hat, alpha, val, diag)


def fitted_noisy_curve(fit: NoisyDppFit, r) -> np.ndarray:
    return k_noisy_dpp(np.asarray(r, dtype=float), fit.params)
