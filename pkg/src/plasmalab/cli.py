"""Command-line entry point.

Exit codes: 0 success, 1 a verify check failed, 2 invalid configuration or
usage, 3 a solver failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, build_config
from .emden import lambda_plus
from .serialize import dumps, write_csv, write_json

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("plasmalab")


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("run configuration")
    g.add_argument("--config", help="key = value settings file")
    g.add_argument("--dimension", "-N", type=int)
    g.add_argument("--exponent", "-p", type=float)
    g.add_argument("--grid", "-M", type=int, help="radial intervals")
    g.add_argument("--lambda-max", type=float, help="sweep end (default 3 lambda_+)")
    g.add_argument("--lambda-step", type=float, help="sweep spacing (default: 40 points)")
    g.add_argument("--lmax", type=int, help="highest angular sector (>= 2)")
    g.add_argument("--tol", type=float, help="Newton tolerance")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")


def _at(parser):
    g = parser.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float, help="absolute lambda")
    g.add_argument("--lambda-factor", type=float, help="lambda as a multiple of lambda_+ (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plasmalab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("emden", "shoot the Emden profile on the unit ball"),
        ("lambda-plus", "closed-form lambda_+ and, with --grid, the discrete zero of alpha"),
        ("branch", "sweep the solution branch and write CSV + JSON"),
        ("spectrum", "nonlocal eigenvalues per sector at one lambda"),
        ("sobolev", "best Sobolev constants and the thresholds lambda_0, lambda_1"),
        ("variational", "free-energy minimization at one lambda, compared with Newton"),
        ("verify", "run the verification matrix"),
    ):
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name in ("spectrum", "variational"):
            _at(p)
        if name == "spectrum":
            p.add_argument("--k", type=int, default=3, help="eigenpairs per sector")
        if name == "sobolev":
            p.add_argument("--t", type=float, help="also report Lambda(D_N, t)")
        if name == "verify":
            p.add_argument("--checks", help="comma-separated check ids (default: all)")
            p.add_argument("--tolerance", action="append", default=[], metavar="CHECK[.NAME]=VALUE")
    return parser


def _config(args) -> RunConfig:
    tolerances = {}
    for item in getattr(args, "tolerance", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--tolerance expects CHECK[.NAME]=VALUE, got {item!r}")
        try:
            tolerances[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"bad tolerance value in {item!r}") from None
    checks = getattr(args, "checks", None)
    cfg = build_config(
        file=args.config,
        dimension=args.dimension, exponent=args.exponent, grid=args.grid,
        lambda_max=args.lambda_max, lambda_step=args.lambda_step, lmax=args.lmax,
        tol=args.tol, out=args.out, seed=args.seed, workers=args.workers,
        checks=tuple(c.strip() for c in checks.split(",") if c.strip()) if checks else None,
    )
    if tolerances:
        cfg = replace(cfg, tolerances={**cfg.tolerances, **tolerances}).validate()
    if getattr(args, "lam", None) is not None and args.lam < 0:
        raise ConfigError("--lambda must be >= 0")
    if getattr(args, "lambda_factor", None) is not None and args.lambda_factor < 0:
        raise ConfigError("--lambda-factor must be >= 0")
    if getattr(args, "k", 3) < 1 or getattr(args, "k", 3) > 10:
        raise ConfigError("--k must lie in [1, 10]")
    t = getattr(args, "t", None)
    if t is not None:
        N = cfg.dimension
        top = np.inf if N == 2 else 2 * N / (N - 2)
        if not 1.0 <= t < top:
            raise ConfigError(f"--t must lie in [1, {top}) for dimension {N}")
    return cfg


def _emit(cfg: RunConfig, name: str, payload: dict) -> None:
    from .runner import stem

    payload = {"schema": f"plasmalab.{name}/1", **payload}
    path = cfg.out_dir / f"{name}_{stem(cfg)}.json"
    write_json(path, payload)
    sys.stdout.write(dumps(payload))
    log.info("wrote %s", path)


def _lambda_at(args, lp: float) -> float:
    if args.lam is not None:
        return args.lam
    return (0.5 if args.lambda_factor is None else args.lambda_factor) * lp


def _point_at(cfg, params, grid, lam):
    """Newton solution at lam, reached by continuation from 0 in steps of at most lambda_+ / 8."""
    from .branch import newton_solve, sweep

    if lam == 0.0:
        return newton_solve(grid, params, 0.0, tol=cfg.tol)
    steps = int(np.ceil(8 * lam / lambda_plus(params))) + 1
    return sweep(grid, params, np.linspace(0.0, lam, max(steps, 2)), tol=cfg.tol).points[-1]


def cmd_emden(cfg, args):
    from .emden import ProblemParams, lambda_plus_formula, solve_emden
    from .radial import unit_volume_radius

    params = ProblemParams(cfg.dimension, cfg.exponent)
    prof = solve_emden(params, tol=min(cfg.tol, 1e-8))
    R = unit_volume_radius(params.N)
    write_csv(cfg.out_dir / f"emden_profile_N{params.N}_p{params.p:g}.csv",
              [{"s": s, "u": u} for s, u in zip(prof.s, prof.u)], ("s", "u"))
    _emit(cfg, "emden", {
        "dimension": params.N, "exponent": params.p, "center": prof.center, "first_zero": prof.first_zero,
        "I_p": prof.I_p, "I_p_flux": prof.I_p_flux,
        "lambda_plus": lambda_plus_formula(params, prof.I_p_flux, R),
    })
    return EXIT_OK


def cmd_lambda_plus(cfg, args):
    from .branch import find_lambda_plus
    from .emden import ProblemParams
    from .radial import build_grid

    params = ProblemParams(cfg.dimension, cfg.exponent)
    lp = lambda_plus(params)
    payload = {"dimension": params.N, "exponent": params.p, "lambda_plus_closed_form": lp}
    if args.grid is not None or args.config is not None:
        lz = find_lambda_plus(build_grid(params.N, cfg.grid), params)
        payload.update(grid=cfg.grid, lambda_plus_discrete=lz, relative_gap=abs(lz - lp) / lp)
    _emit(cfg, "lambda_plus", payload)
    return EXIT_OK


def cmd_branch(cfg, args):
    from .runner import COLUMNS, run_sweep, stem

    result = run_sweep(cfg)
    write_csv(cfg.out_dir / f"branch_{stem(cfg)}.csv", result.rows, COLUMNS)
    _emit(cfg, "branch", result.summary)
    return EXIT_OK


def cmd_spectrum(cfg, args):
    from .emden import ProblemParams
    from .radial import build_grid
    from .spectrum import kernel_check, potential, sector_eigs

    params = ProblemParams(cfg.dimension, cfg.exponent)
    grid = build_grid(params.N, cfg.grid)
    lam = _lambda_at(args, lambda_plus(params))
    pt = _point_at(cfg, params, grid, lam)
    pot = potential(grid, params, pt)
    sectors = {}
    for l in range(cfg.lmax + 1):
        pairs = sector_eigs(grid, params, pt, l, args.k, pot=pot, seed=cfg.seed)
        sectors[str(l)] = [{"sigma": q.sigma, "mu": q.mu, "nu": q.nu, "mean": q.mean, "residual": q.residual} for q in pairs]
    mins = [sectors[str(l)][0]["sigma"] for l in range(cfg.lmax + 1)]
    rep = kernel_check(grid, params, pt, pot=pot)
    _emit(cfg, "spectrum", {
        "dimension": params.N, "exponent": params.p, "grid": cfg.grid, "lambda": lam, "alpha": pt.alpha,
        "tau": pot.tau, "m_lambda": pot.m, "r_plus": pot.r_plus, "sectors": sectors,
        "sigma1": min(mins), "sigma1_sector": int(np.argmin(mins)),
        "kernel": {"empty": rep.empty, "nullity": rep.nullity, "weight_residual": rep.deflated_weight_norm,
                   "t_image": rep.T_norm},
    })
    return EXIT_OK


def cmd_sobolev(cfg, args):
    from .emden import ProblemParams
    from .radial import build_grid
    from .sobolev import best_constant, lambda0, lambda1

    params = ProblemParams(cfg.dimension, cfg.exponent)
    N, p = params.N, params.p
    lp = lambda_plus(params)
    payload = {"dimension": N, "exponent": p, "grid": cfg.grid, "lambda_plus": lp, "lambda0": lambda0(N, p, cfg.grid)}
    if N == 2:
        payload["lambda1"] = lambda1(p, M=cfg.grid)
        payload["lambda1_vs_lambda_plus"] = abs(payload["lambda1"] - lp) / lp
    if args.t is not None:
        res = best_constant(build_grid(N, cfg.grid), N, args.t)
        payload["best_constant"] = {"t": args.t, "Lambda": res.Lambda, "shooting": res.shooting,
                                    "mismatch": res.mismatch, "iterations": res.iterations, "method": res.method}
    _emit(cfg, "sobolev", payload)
    return EXIT_OK


def cmd_variational(cfg, args):
    from .emden import ProblemParams
    from .radial import build_grid
    from .variational import l1_distance, multi_start, second_variation
    from .verify import random_test_functions

    params = ProblemParams(cfg.dimension, cfg.exponent)
    grid = build_grid(params.N, cfg.grid)
    lam = _lambda_at(args, lambda_plus(params))
    pt = _point_at(cfg, params, grid, lam)
    best, states = multi_start(grid, params, lam, warm=pt.rho)
    rng = np.random.default_rng(cfg.seed)
    min_A = min(second_variation(grid, params, pt, phi)[0] for phi in random_test_functions(grid, rng, 200))
    _emit(cfg, "variational", {
        "dimension": params.N, "exponent": params.p, "grid": cfg.grid, "lambda": lam,
        "alpha_newton": pt.alpha, "alpha_recovered": best.alpha, "alpha_spread": best.alpha_spread,
        "free_energy": best.F, "best_start": best.start,
        "starts": {s.start: {"F": s.F, "l1_to_newton": l1_distance(grid, s.rho, pt.rho),
                             "iterations": s.iterations, "stationarity": s.stationarity} for s in states},
        "min_second_variation": min_A,
    })
    return EXIT_OK


def cmd_verify(cfg, args):
    from .verify import run_verify

    report = run_verify(cfg, log=print)
    path = cfg.out_dir / "verify.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json(), encoding="utf-8")
    print(f"{'all checks passed' if report.passed else 'some checks FAILED'}; report in {path}")
    return report.exit_code


COMMANDS = {
    "emden": cmd_emden, "lambda-plus": cmd_lambda_plus, "branch": cmd_branch, "spectrum": cmd_spectrum,
    "sobolev": cmd_sobolev, "variational": cmd_variational, "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .runner import SweepFailure

    try:
        return COMMANDS[args.command](cfg, args)
    except SweepFailure as exc:
        print(f"solver failure at lambda={exc.lam}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (RuntimeError, ArithmeticError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
