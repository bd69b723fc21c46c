"""Command-line interface: ``superpalm <subcommand> ...``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
Errors are reported as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .core import (
    DppNoiseParams,
    InvalidInputError,
    SncpParams,
    Window,
    make_rng,
    read_pattern,
    write_kcurve_csv,
    write_pattern_csv,
    write_window_json,
)
from .mce import MceConfig, fit_noisy_dpp, fit_plain_dpp
from .palm import standard_test_pairs, validate_poisson_superposition
from .simulate import (
    simulate_gaussian_dpp,
    simulate_noisy_dpp,
    simulate_poisson,
    simulate_thomas_gamma_sncp,
)
from .sncp import McemConfig, mcem_fit
from .summary import default_r_grid, k_gaussian_dpp, k_hat, k_noisy_dpp, k_poisson

SCHEMA = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(obj, out: str | None) -> None:
    text = _dump(obj)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    sys.stdout.write(text)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _window_arg(p, required=False, default=None):
    p.add_argument("--window", type=Window.parse, required=required, default=default,
                   help="x_min,x_max,y_min,y_max")


def _pattern_args(p):
    p.add_argument("--pattern", required=True, help="point CSV with header x,y")
    _window_arg(p)
    p.add_argument("--window-json", help="window sidecar JSON")


def _load(args):
    return read_pattern(args.pattern, window=args.window, window_json=args.window_json)


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    rng = make_rng(args.seed, args.stream)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"schema": SCHEMA, "model": args.model, "seed": args.seed, "stream": args.stream}
    part = None
    if args.model == "poisson":
        pattern = simulate_poisson(args.window, args.intensity, rng)
        meta["params"] = {"intensity": args.intensity}
    elif args.model == "dpp":
        DppNoiseParams(args.rho_xi, args.alpha)
        pattern = simulate_gaussian_dpp(args.window, args.rho_xi, args.alpha, rng)
        meta["params"] = {"rho_xi": args.rho_xi, "alpha": args.alpha}
    elif args.model == "superpose":
        params = DppNoiseParams(args.rho_xi, args.alpha, args.omega)
        pattern = simulate_noisy_dpp(args.window, params, rng)
        meta["params"] = {"rho_xi": args.rho_xi, "alpha": args.alpha, "omega": args.omega}
    else:
        params = SncpParams(args.tau, args.c, args.alpha, args.sigma0)
        pattern, part = simulate_thomas_gamma_sncp(params, args.window, args.fixed_n, rng)
        meta["params"] = {**params.to_dict(), "fixed_n": args.fixed_n}
    meta["n_points"] = len(pattern)
    meta["window"] = pattern.window.to_dict()
    write_pattern_csv(pattern, out / "pattern.csv")
    write_window_json(pattern.window, out / "pattern.window.json")
    if part is not None:
        with (out / "partition.csv").open("w") as fh:
            fh.write("label\n")
            fh.writelines(f"{v}\n" for v in part.labels)
        meta["n_clusters"] = part.n_clusters
    (out / "meta.json").write_text(_dump(meta))
    return EXIT_OK


def cmd_khat(args) -> int:
    pattern = _load(args)
    grid = default_r_grid(pattern.window, args.n_grid, args.r_max)
    curve = k_hat(pattern, grid)
    extra = {}
    if args.model == "poisson":
        extra["k_model"] = k_poisson(grid)
    elif args.model == "dpp":
        extra["k_model"] = k_gaussian_dpp(grid, args.alpha)
    elif args.model == "noisy-dpp":
        extra["k_model"] = k_noisy_dpp(grid, DppNoiseParams(args.rho_xi, args.alpha, args.omega))
    write_kcurve_csv(curve, args.out or sys.stdout, extra)
    return EXIT_OK


def cmd_fit_dpp(args) -> int:
    pattern = _load(args)
    cfg = MceConfig(n_quad=args.n_quad)
    if args.plain:
        fit = fit_plain_dpp(pattern, cfg)
        res = {"model": "plain", "rho_xi": fit.rho_xi, "alpha": fit.alpha, "omega": 0.0}
    else:
        fit = fit_noisy_dpp(pattern, cfg)
        p = fit.params
        res = {"model": "noisy", "rho_xi": p.rho_xi, "alpha": p.alpha, "omega": p.omega}
    res.update(
        schema=SCHEMA,
        objective=fit.objective,
        converged=fit.converged,
        iterations=fit.diagnostics.iterations,
        seed=args.seed,
    )
    _emit(res, args.out)
    if not fit.converged:
        raise NumericalFailure("optimizer did not converge", res)
    return EXIT_OK


def cmd_fit_sncp(args) -> int:
    pattern = _load(args)
    cfg = McemConfig(max_iter=args.max_iter, gibbs_sweeps=args.gibbs_sweeps)
    res = mcem_fit(pattern, args.c, config=cfg, rng=make_rng(args.seed, 0))
    trace_file = args.trace_file
    if trace_file:
        ex.write_csv_atomic(
            trace_file,
            ["iter", "tau", "alpha", "sigma0", "Q"],
            [dict(zip(["iter", "tau", "alpha", "sigma0", "Q"], row)) for row in res.trace.rows()],
        )
    out = {
        "schema": SCHEMA,
        "tau": res.tau,
        "alpha": res.alpha,
        "sigma0": res.sigma0,
        "c_fixed": args.c,
        "em_iterations": res.iterations,
        "em_converged": res.converged,
        "trace_file": trace_file,
        "seed": args.seed,
    }
    _emit(out, args.out)
    if not all(math.isfinite(v) for v in (res.tau, res.alpha, res.sigma0)):
        raise NumericalFailure("non-finite estimate", out)
    return EXIT_OK


def cmd_validate_palm(args) -> int:
    window = args.window
    pairs = standard_test_pairs(window)
    if not 0 <= args.pair < len(pairs):
        raise InvalidInputError(f"--pair must be in 0..{len(pairs) - 1}")
    f, g = pairs[args.pair]
    check = validate_poisson_superposition(
        [args.lambda1, args.lambda2], f, g, args.n_samples,
        make_rng(args.seed, 2 * args.pair), make_rng(args.seed, 2 * args.pair + 1), window,
    )
    out = {"schema": SCHEMA, **check.to_dict(), "pair": args.pair, "seed": args.seed}
    _emit(out, args.out)
    return EXIT_OK


def _summary_fields(rows):
    return list(rows[0]) if rows else []


def cmd_replicate_table1(args) -> int:
    records = ex.run_table1(args.row, args.n_reps, args.seed, args.jobs)
    out = Path(args.out)
    stem = f"table1_row{args.row}_seed{args.seed}"
    ex.write_csv_atomic(out / f"{stem}_replicates.csv", ex.TABLE1_FIELDS, records)
    summary = ex.summarize_table1(records)
    ex.write_csv_atomic(out / f"{stem}_summary.csv", _summary_fields(summary), summary)
    sys.stdout.write(_dump({"schema": SCHEMA, "replicates": str(out / f"{stem}_replicates.csv"),
                            "summary": str(out / f"{stem}_summary.csv")}))
    return EXIT_OK


def cmd_replicate_table2(args) -> int:
    cfg = McemConfig(max_iter=args.max_iter)
    records = ex.run_table2(args.row, args.n_reps, args.seed, args.jobs, cfg)
    out = Path(args.out)
    stem = f"table2_row{args.row}_seed{args.seed}"
    ex.write_csv_atomic(out / f"{stem}_replicates.csv", ex.TABLE2_FIELDS, records)
    summary = ex.summarize_table2(records)
    ex.write_csv_atomic(out / f"{stem}_summary.csv", _summary_fields(summary), summary)
    sys.stdout.write(_dump({"schema": SCHEMA, "replicates": str(out / f"{stem}_replicates.csv"),
                            "summary": str(out / f"{stem}_summary.csv")}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="superpalm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="simulate a point pattern")
    simsub = sim.add_subparsers(dest="model", required=True, parser_class=_Parser)
    for name in ("poisson", "dpp", "sncp", "superpose"):
        p = simsub.add_parser(name)
        p.add_argument("--seed", type=_seed, required=True)
        p.add_argument("--stream", type=_seed, default=0)
        p.add_argument("--out", default=".")
        p.set_defaults(func=cmd_simulate)
        if name == "sncp":
            _window_arg(p)
            p.add_argument("--tau", type=float, required=True)
            p.add_argument("--c", type=float, required=True)
            p.add_argument("--alpha", type=float, required=True)
            p.add_argument("--sigma0", type=float, required=True)
            p.add_argument("--fixed-n", type=int)
        else:
            _window_arg(p, default=Window(0.0, 1.0, 0.0, 1.0))
        if name == "poisson":
            p.add_argument("--intensity", type=float, required=True)
        if name in ("dpp", "superpose"):
            p.add_argument("--rho-xi", type=float, required=True)
            p.add_argument("--alpha", type=float, required=True)
        if name == "superpose":
            p.add_argument("--omega", type=float, required=True, help="Poisson noise intensity")

    kh = sub.add_parser("khat", help="edge-corrected K estimate")
    _pattern_args(kh)
    kh.add_argument("--r-max", type=float, help="default: quarter of the shorter side")
    kh.add_argument("--n-grid", type=int, default=513)
    kh.add_argument("--model", choices=["poisson", "dpp", "noisy-dpp"])
    kh.add_argument("--rho-xi", type=float, default=0.0)
    kh.add_argument("--alpha", type=float, default=1.0)
    kh.add_argument("--omega", type=float, default=0.0)
    kh.add_argument("--out")
    kh.set_defaults(func=cmd_khat)

    fd = sub.add_parser("fit-dpp", help="minimum-contrast fit of the (noisy) Gaussian DPP")
    _pattern_args(fd)
    fd.add_argument("--plain", action="store_true", help="ignore background noise")
    fd.add_argument("--n-quad", type=int, default=513)
    fd.add_argument("--seed", type=_seed, default=0)
    fd.add_argument("--out")
    fd.set_defaults(func=cmd_fit_dpp)

    fs = sub.add_parser("fit-sncp", help="Monte-Carlo EM fit of the Thomas-gamma SNCP")
    _pattern_args(fs)
    fs.add_argument("--c", type=float, required=True, help="fixed gamma-process rate")
    fs.add_argument("--seed", type=_seed, default=0)
    fs.add_argument("--max-iter", type=int, default=100)
    fs.add_argument("--gibbs-sweeps", type=int, default=20)
    fs.add_argument("--trace-file")
    fs.add_argument("--out")
    fs.set_defaults(func=cmd_fit_sncp)

    vp = sub.add_parser("validate-palm", help="Monte-Carlo check of the Palm mixture identity")
    vp.add_argument("--lambda1", type=float, default=60.0)
    vp.add_argument("--lambda2", type=float, default=40.0)
    vp.add_argument("--n-samples", type=int, default=20000)
    vp.add_argument("--pair", type=int, default=0)
    _window_arg(vp, default=Window(0.0, 1.0, 0.0, 1.0))
    vp.add_argument("--seed", type=_seed, default=0)
    vp.add_argument("--out")
    vp.set_defaults(func=cmd_validate_palm)

    for name, func, n_rows, reps in (
        ("replicate-table1", cmd_replicate_table1, len(ex.DPP_SCENARIOS), 1000),
        ("replicate-table2", cmd_replicate_table2, len(ex.SNCP_SCENARIOS), 100),
    ):
        p = sub.add_parser(name)
        p.add_argument("--row", type=int, default=1, choices=range(1, n_rows + 1))
        p.add_argument("--n-reps", type=int, default=reps)
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default=".")
        if name == "replicate-table2":
            p.add_argument("--max-iter", type=int, default=100)
        p.set_defaults(func=func)
    return parser


def _fail(code, kind, message, payload=None):
    err = {"schema": SCHEMA, "error": kind, "message": message, "exit_code": code}
    if payload is not None:
        err["result"] = payload
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "n_reps", 1) < 1:
            raise InvalidInputError("--n-reps must be >= 1")
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (InvalidInputError, FileNotFoundError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except NumericalFailure as exc:
        return _fail(EXIT_NUMERICAL, "numerical", str(exc), exc.payload)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
