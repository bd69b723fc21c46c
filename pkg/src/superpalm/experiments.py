"""Replicate studies: noisy-DPP minimum contrast and Thomas-gamma MCEM."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import UNIT_SQUARE, DppNoiseParams, SncpParams, format_float, make_rng
from .mce import MceConfig, fit_noisy_dpp, fit_plain_dpp
from .simulate import simulate_noisy_dpp, simulate_thomas_gamma_sncp
from .sncp import McemConfig, mcem_fit


@dataclass(frozen=True)
class DppScenario:
    rho_xi: float
    alpha: float
    u: float

    @property
    def omega(self) -> float:
        return self.u * self.rho_xi


@dataclass(frozen=True)
class SncpScenario:
    tau: float
    n_points: int
    c: float
    alpha: float = 0.5
    sigma0: float = 1.0


DPP_SCENARIOS = [
    DppScenario(50, 0.06, 0.2),
    DppScenario(50, 0.06, 0.35),
    DppScenario(50, 0.02, 0.2),
    DppScenario(50, 0.02, 0.35),
    DppScenario(100, 0.05, 0.2),
    DppScenario(100, 0.05, 0.35),
    DppScenario(100, 0.025, 0.2),
    DppScenario(100, 0.025, 0.35),
]

SNCP_SCENARIOS = [
    SncpScenario(1, 100, 0.01),
    SncpScenario(1, 200, 0.005),
    SncpScenario(5, 100, 0.05),
    SncpScenario(5, 200, 0.025),
]

TABLE1_FIELDS = [
    "rep", "n_points",
    "plain_rho_xi", "plain_alpha", "plain_objective", "plain_converged",
    "noisy_rho_xi", "noisy_alpha", "noisy_omega", "noisy_objective", "noisy_converged",
    "error",
]

TABLE2_FIELDS = ["rep", "n_points", "true_clusters", "tau", "alpha", "sigma0", "em_iterations", "em_converged", "error"]


def _nan():
    return float("nan")


def table1_replicate(row: int, seed: int, rep: int) -> dict:
    """Simulate one contaminated DPP pattern and fit both models."""
    sc = DPP_SCENARIOS[row - 1]
    rng = make_rng(seed, rep)
    pattern = simulate_noisy_dpp(UNIT_SQUARE, DppNoiseParams(sc.rho_xi, sc.alpha, sc.omega), rng)
    out = {"rep": rep, "n_points": len(pattern), "error": ""}
    try:
        plain = fit_plain_dpp(pattern, MceConfig())
        noisy = fit_noisy_dpp(pattern, MceConfig())
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        out.update({k: _nan() for k in TABLE1_FIELDS if k.startswith(("plain_", "noisy_"))})
        out.update(plain_converged=False, noisy_converged=False, error=type(exc).__name__)
        return out
    out.update(
        plain_rho_xi=plain.rho_xi,
        plain_alpha=plain.alpha,
        plain_objective=plain.objective,
        plain_converged=plain.converged,
        noisy_rho_xi=noisy.params.rho_xi,
        noisy_alpha=noisy.params.alpha,
        noisy_omega=noisy.params.omega,
        noisy_objective=noisy.objective,
        noisy_converged=noisy.converged,
    )
    return out


def table2_replicate(row: int, seed: int, rep: int, config: McemConfig | None = None) -> dict:
    """Simulate one Thomas-gamma pattern with fixed size and fit it by MCEM (c fixed)."""
    sc = SNCP_SCENARIOS[row - 1]
    rng = make_rng(seed, rep)
    truth = SncpParams(sc.tau, sc.c, sc.alpha, sc.sigma0)
    pattern, part = simulate_thomas_gamma_sncp(truth, fixed_n=sc.n_points, rng=rng)
    out = {"rep": rep, "n_points": len(pattern), "true_clusters": part.n_clusters, "error": ""}
    try:
        res = mcem_fit(pattern, sc.c, config=config or McemConfig(), rng=rng)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        out.update(tau=_nan(), alpha=_nan(), sigma0=_nan(), em_iterations=0, em_converged=False, error=type(exc).__name__)
        return out
    out.update(tau=res.tau, alpha=res.alpha, sigma0=res.sigma0, em_iterations=res.iterations, em_converged=res.converged)
    return out


def _run(fn, args_list, jobs: int):
    if jobs <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args_list)))


def run_table1(row: int, n_reps: int, seed: int, jobs: int = 1) -> list[dict]:
    _check_row(row, DPP_SCENARIOS)
    return _run(table1_replicate, [(row, seed, i) for i in range(n_reps)], jobs)


def run_table2(row: int, n_reps: int, seed: int, jobs: int = 1, config: McemConfig | None = None) -> list[dict]:
    _check_row(row, SNCP_SCENARIOS)
    return _run(table2_replicate, [(row, seed, i, config) for i in range(n_reps)], jobs)


def _check_row(row, table):
    if not 1 <= row <= len(table):
        raise ValueError(f"row must be in 1..{len(table)}, got {row}")


def _failed(rec, key):
    return bool(rec["error"]) or not rec[key]


def summarize_table1(records: list[dict]) -> list[dict]:
    """Mean and sd of each estimator over replicates that produced an estimate."""
    n = len(records)
    rows = []
    for model in ("plain", "noisy"):
        n_fail = sum(_failed(r, f"{model}_converged") for r in records)
        for par in ("rho_xi", "alpha"):
            vals = np.array([r[f"{model}_{par}"] for r in records], dtype=float)
            vals = vals[np.isfinite(vals)]
            rows.append(
                {
                    "model": model,
                    "parameter": par,
                    "n_reps": n,
                    "n_used": len(vals),
                    "mean": float(vals.mean()) if len(vals) else _nan(),
                    "sd": float(vals.std(ddof=1)) if len(vals) > 1 else None,
                    "failure_fraction": n_fail / n if n else _nan(),
                }
            )
    return rows


def summarize_table2(records: list[dict]) -> list[dict]:
    """Median and interquartile range of each estimate."""
    n = len(records)
    n_fail = sum(bool(r["error"]) for r in records)
    rows = []
    for par in ("tau", "alpha", "sigma0"):
        vals = np.array([r[par] for r in records], dtype=float)
        vals = vals[np.isfinite(vals)]
        if len(vals):
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
        else:
            q25 = med = q75 = _nan()
        rows.append(
            {
                "parameter": par,
                "n_reps": n,
                "n_used": len(vals),
                "median": float(med),
                "q25": float(q25),
                "q75": float(q75),
                "iqr": float(q75 - q25),
                "failure_fraction": n_fail / n if n else _nan(),
            }
        )
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format_float(v)
    return str(v)


def write_csv_atomic(path, fields, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for rec in records:
                w.writerow([_cell(rec[f]) for f in fields])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv_records(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
