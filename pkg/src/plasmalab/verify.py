"""The verification matrix: ten checks over the standard (N, p) cases.

Heavy work is grouped into per-case bundles (plain dicts, so they can be
computed in worker processes); each check only aggregates bundle data and
compares it against its tolerances.  A failing or crashing check never stops
the others.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .branch import newton_solve, sweep, tangent, weighted_mean
from .emden import ProblemParams, lambda_plus
from .radial import build_grid, h10_inner, torsion_profile
from .serialize import dumps, jsonable
from .sobolev import lambda0, lambda1
from .spectrum import eigen_identity_check, kernel_check, potential, sector_eigs, sigma1
from .variational import l1_distance, multi_start, second_variation

SCHEMA = "plasmalab.verify/1"
CASES = ((2, 1.5), (2, 2.0), (2, 3.0), (3, 1.5), (3, 2.0))
DISC_EXPONENTS = (1.5, 2.0, 3.0)
SWEEP_POINTS = 40
SWEEP_SPAN = 3.0
IDENTITY_FACTORS = (0.5, 1.0, 1.5, 2.0)
EMPTY_KERNEL_FACTORS = (0.25, 0.5, 0.75)
VARIATIONAL_FACTORS = (0.5, 1.0, 1.5)
L1_FACTORS = (0.5, 1.5)
RANDOM_TESTS = 200
FD_STEP = 1e-4
LADDER = (128, 256, 512, 1024)


# ---------------------------------------------------------------- bundles


def _sweep_lams(lp):
    return np.linspace(0.0, SWEEP_SPAN * lp, SWEEP_POINTS)


def _multiplier_defect(grid, params, pt) -> float:
    V = np.maximum(pt.alpha + pt.lam * pt.psi, 0.0) ** (params.p - 1)
    m = float(np.dot(grid.weights, V))
    return abs((pt.alpha + pt.lam * weighted_mean(grid, V, pt.psi)) * m - 1.0)


def branch_bundle(N: int, p: float, M: int, tol: float = 1e-10) -> dict:
    """Sweeps at M and 2M with sigma_1, identities, tangents and kernel data."""
    params = ProblemParams(N, p)
    lp = lambda_plus(params)
    lams = _sweep_lams(lp)
    out = {"N": N, "p": p, "M": M, "lambda_plus": lp, "lams": lams.tolist()}
    coarse = None
    for key, m in (("coarse", M), ("fine", 2 * M)):
        grid = build_grid(N, m)
        tr = sweep(grid, params, lams, tol=tol)
        sig = [sigma1(grid, params, pt) for pt in tr.points]
        out[key] = {
            "M": m,
            "sigma1": [s[0] for s in sig],
            "sector": [s[1] for s in sig],
            "sectors_monotone": all(s[2] for s in sig),
            "lambda_plus_sweep": tr.lambda_plus,
            "alpha_decreasing": tr.alpha_decreasing,
            "energy_increasing": tr.energy_increasing,
            "min_alpha_drop": float(np.min(-np.diff(tr.alphas))),
            "min_energy_rise": float(np.min(np.diff(tr.energies))),
            "multiplier": max(_multiplier_defect(grid, params, pt) for pt in tr.points),
            "residual": max(pt.residual_norm for pt in tr.points),
        }
        if coarse is None:
            coarse = (grid, tr)

    grid, tr = coarse
    # tangent against central differences
    fd = []
    for pt in tr.points:
        if pt.lam < 10 * FD_STEP:
            continue
        da, dpsi = tangent(grid, params, pt)
        lo = newton_solve(grid, params, pt.lam - FD_STEP, (pt.alpha - FD_STEP * da, pt.psi - FD_STEP * dpsi), tol=tol)
        hi = newton_solve(grid, params, pt.lam + FD_STEP, (pt.alpha + FD_STEP * da, pt.psi + FD_STEP * dpsi), tol=tol)
        slope = (hi.alpha - lo.alpha) / (2 * FD_STEP)
        fd.append((pt.lam / lp, abs(da - slope) / abs(da), da))
    out["tangent_fd"] = fd

    def solve_at(f):
        near = min(tr.points, key=lambda q: abs(q.lam - f * lp))
        return newton_solve(grid, params, f * lp, (near.alpha, near.psi), tol=tol)

    ident = []
    for f in IDENTITY_FACTORS:
        pt = solve_at(f)
        pot = potential(grid, params, pt)
        for k, pair in enumerate(sector_eigs(grid, params, pt, 0, 3, pot=pot)):
            res, sign_ok = eigen_identity_check(grid, params, pt, pair, pot=pot)
            ident.append({"factor": f, "index": k, "residual": res, "sign_ok": sign_ok, "mean": pair.mean})
    out["eigen_identity"] = ident

    pt = solve_at(1.5)
    rep = kernel_check(grid, params, pt)
    phi0 = rep.phi0
    scale = float(np.sqrt(h10_inner(grid, phi0, phi0)))
    out["kernel"] = {
        "alpha": pt.alpha,
        "nullity": rep.nullity,
        "weight": rep.deflated_weight_norm / np.abs(phi0).max(),
        "t_image": rep.T_norm / scale,
    }
    empty = []
    for f in EMPTY_KERNEL_FACTORS:
        q = solve_at(f)
        krep = kernel_check(grid, params, q)
        mus = [pr.mu for pr in sector_eigs(grid, params, q, 0, 3)]
        empty.append({"factor": f, "alpha": q.alpha, "nullity": krep.nullity, "min_mu": float(min(mus))})
    out["empty_kernel"] = empty
    return out


def variational_bundle(N: int, p: float, M: int, seed: int = 0, tol: float = 1e-10) -> dict:
    params = ProblemParams(N, p)
    lp = lambda_plus(params)
    grid = build_grid(N, M)
    rng = np.random.default_rng([seed, N, int(round(100 * p))])
    tr = sweep(grid, params, np.linspace(0.0, 1.5 * lp, 16), tol=tol)
    rows = []
    for f in VARIATIONAL_FACTORS:
        near = min(tr.points, key=lambda q: abs(q.lam - f * lp))
        pt = newton_solve(grid, params, f * lp, (near.alpha, near.psi), tol=tol)
        pot = potential(grid, params, pt)
        row = {"factor": f, "alpha": pt.alpha}
        if f in L1_FACTORS:
            best, states = multi_start(grid, params, pt.lam, warm=pt.rho)
            row["l1_best"] = l1_distance(grid, best.rho, pt.rho)
            row["l1_all"] = max(l1_distance(grid, s.rho, pt.rho) for s in states)
            row["alpha_gap"] = abs(best.alpha - pt.alpha)
            row["best_start"] = best.start
        row["min_A"] = min(
            second_variation(grid, params, pt, phi, pot)[0] for phi in random_test_functions(grid, rng, RANDOM_TESTS)
        )
        worst = 0.0
        for pair in sector_eigs(grid, params, pt, 0, 3, pot=pot):
            A, _ = second_variation(grid, params, pt, pair.phi, pot)
            mean = pair.mean
            spread = float(np.dot(grid.weights, pot.V * (pair.phi - mean) ** 2))
            target = spread * pair.sigma / pair.nu
            worst = max(worst, abs(A - target) / abs(target))
        row["closing_identity"] = worst
        rows.append(row)
    return {"N": N, "p": p, "M": M, "rows": rows}


def random_test_functions(grid, rng, count: int):
    """Half white noise, half random smooth radial modes; unit weighted L^2 norm, zero at R."""
    x = grid.r / grid.R
    modes = np.array([np.cos((j + 0.5) * np.pi * x) for j in range(12)])
    for k in range(count):
        if k % 2:
            phi = rng.standard_normal(12) @ modes
        else:
            phi = rng.standard_normal(grid.size)
        phi[-1] = 0.0
        yield phi / np.sqrt(np.dot(grid.weights, phi * phi))


def threshold_bundle(N: int, p: float, M: int) -> dict:
    out = {"N": N, "p": p, "M": M, "lambda_plus": lambda_plus(ProblemParams(N, p)), "lambda0": lambda0(N, p, M)}
    if N == 2:
        out["lambda1"] = lambda1(p, M=M)
    return out


def convergence_bundle(N: int, p: float, ladder=LADDER) -> dict:
    from .branch import find_lambda_plus

    params = ProblemParams(N, p)
    lp = lambda_plus(params)
    torsion, lplus, sig = [], [], []
    for M in ladder:
        grid = build_grid(N, M)
        t = torsion_profile(grid)
        torsion.append(abs(0.5 * h10_inner(grid, t, t) - grid.R**2 / (2 * N * (N + 2))))
        lplus.append(abs(find_lambda_plus(grid, params) - lp))
        sig.append(sigma1(grid, params, newton_solve(grid, params, 0.5 * lp))[0])
    sig_err = np.abs(np.diff(sig))

    def ratios(e):
        e = np.asarray(e)
        return (e[:-1] / e[1:]).tolist()

    return {
        "N": N, "p": p, "ladder": list(ladder),
        "torsion": ratios(torsion), "lambda_plus": ratios(lplus), "sigma1": ratios(sig_err),
    }


# ---------------------------------------------------------------- checks


@dataclass(frozen=True)
class CheckSpec:
    id: str
    criterion: int
    title: str
    tolerances: dict  # first entry is the primary tolerance
    needs: str  # bundle kind
    evaluate: Callable


@dataclass
class CheckResult:
    id: str
    criterion: int
    title: str
    status: str  # pass | fail | error
    measured: dict
    tolerance: dict
    runtime: float
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class VerifyReport:
    results: list[CheckResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "passed": self.passed,
            "config": self.config,
            "checks": [asdict(r) for r in self.results],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _disc_equality(data, tol):
    gaps = {f"p={b['p']:g}": abs(b["lambda1"] - b["lambda_plus"]) / b["lambda_plus"] for b in data if b["N"] == 2}
    worst = max(gaps.values())
    return worst <= tol["rel"], {"max_rel_gap": worst, **gaps}


def _sigma1_positive(data, tol):
    worst_gap, min_sigma, monotone = 0.0, np.inf, True
    per = {}
    for b in data:
        s0, s1 = np.array(b["coarse"]["sigma1"]), np.array(b["fine"]["sigma1"])
        gap = float(np.max(np.abs(s0 - s1) / np.abs(s1)))
        lo = float(min(s0.min(), s1.min()))
        per[f"N={b['N']},p={b['p']:g}"] = {"min_sigma1": lo, "grid_gap": gap, "argmin_sectors": sorted(set(b["fine"]["sector"]))}
        worst_gap, min_sigma = max(worst_gap, gap), min(min_sigma, lo)
        monotone &= b["coarse"]["sectors_monotone"] and b["fine"]["sectors_monotone"]
    ok = worst_gap <= tol["grid_gap"] and min_sigma > tol["floor"]
    return ok, {"max_grid_gap": worst_gap, "min_sigma1": min_sigma, "sector_minima_ordered": monotone, "cases": per}


def _branch_monotone(data, tol):
    flags, worst = True, 0.0
    drops = []
    for b in data:
        for key in ("coarse", "fine"):
            flags &= b[key]["alpha_decreasing"] and b[key]["energy_increasing"]
            drops.append(min(b[key]["min_alpha_drop"], b[key]["min_energy_rise"]))
        for f, rel, _ in b["tangent_fd"]:
            if abs(f - 1.0) > tol["exclusion"]:
                worst = max(worst, rel)
    return flags and worst <= tol["tangent_fd"], {"max_tangent_fd_rel": worst, "monotone": flags, "min_step_change": min(drops)}


def _lambda_plus_crossval(data, tol):
    per = {}
    for b in data:
        for key in ("coarse", "fine"):
            lps = b[key]["lambda_plus_sweep"]
            gap = np.inf if lps is None else abs(lps - b["lambda_plus"]) / b["lambda_plus"]
            per[f"N={b['N']},p={b['p']:g},M={b[key]['M']}"] = gap
    worst = max(per.values())
    return worst <= tol["rel"], {"max_rel_gap": worst, "cases": per}


def _multiplier_identity(data, tol):
    worst = max(max(b["coarse"]["multiplier"], b["fine"]["multiplier"]) for b in data)
    return worst <= tol["abs"], {"max_defect": worst}


def _eigen_identity(data, tol):
    rows = [r for b in data for r in b["eigen_identity"]]
    worst = max(r["residual"] for r in rows)
    signs = all(r["sign_ok"] for r in rows)
    return worst <= tol["residual"] and signs, {"max_residual": worst, "signs_ok": signs, "pairs": len(rows)}


def _variational(data, tol):
    l1 = max(r["l1_best"] for b in data for r in b["rows"] if "l1_best" in r)
    l1_all = max(r["l1_all"] for b in data for r in b["rows"] if "l1_all" in r)
    min_A = min(r["min_A"] for b in data for r in b["rows"])
    closing = max(r["closing_identity"] for b in data for r in b["rows"])
    ok = l1 <= tol["l1"] and min_A >= -tol["second_variation"] and closing <= tol["closing_identity"]
    return ok, {"max_l1": l1, "max_l1_any_start": l1_all, "min_second_variation": min_A, "max_closing_identity": closing}


def _kernel(data, tol):
    weight = max(b["kernel"]["weight"] for b in data)
    t_image = max(b["kernel"]["t_image"] for b in data)
    nullity_beyond = min(b["kernel"]["nullity"] for b in data)
    empty = [e for b in data for e in b["empty_kernel"]]
    nullity_below = max(e["nullity"] for e in empty)
    min_mu = min(e["min_mu"] for e in empty)
    ok = (weight <= tol["weight"] and t_image <= tol["t_image"] and nullity_beyond > 0
          and nullity_below == 0 and min_mu >= tol["mu_floor"])
    return ok, {
        "max_weight_residual": weight, "max_t_image": t_image, "min_nullity_alpha_negative": nullity_beyond,
        "max_nullity_alpha_positive": nullity_below, "min_mu_alpha_positive": min_mu,
    }


def _lambda0_strict(data, tol):
    per = {f"N={b['N']},p={b['p']:g}": (b["lambda_plus"] - b["lambda0"]) / b["lambda_plus"] for b in data}
    worst = min(per.values())
    return worst >= tol["margin"], {"min_margin": worst, "cases": per}


def _convergence(data, tol):
    lo, hi = 4.0 - tol["ratio_halfwidth"], 4.0 + tol["ratio_halfwidth"]
    every = [x for b in data for key in ("torsion", "lambda_plus", "sigma1") for x in b[key]]
    per = {f"N={b['N']},p={b['p']:g}": {k: b[k] for k in ("torsion", "lambda_plus", "sigma1")} for b in data}
    ok = all(lo <= x <= hi for x in every)
    return ok, {"min_ratio": min(every), "max_ratio": max(every), "cases": per}


CHECKS: dict[str, CheckSpec] = {
    c.id: c
    for c in (
        CheckSpec("disc_equality", 1, "lambda_1 = lambda_+ on the disc", {"rel": 1e-3}, "threshold", _disc_equality),
        CheckSpec("sigma1_positive", 2, "sigma_1 > 0 along the branch", {"grid_gap": 0.05, "floor": 0.0}, "branch", _sigma1_positive),
        CheckSpec("branch_monotone", 3, "alpha decreasing, energy increasing, tangent = FD",
                  {"tangent_fd": 1e-4, "exclusion": 0.05}, "branch", _branch_monotone),
        CheckSpec("lambda_plus_crossval", 4, "lambda_+ closed form vs sweep zero", {"rel": 1e-3}, "branch", _lambda_plus_crossval),
        CheckSpec("multiplier_identity", 5, "(alpha + lam <psi>) m = 1", {"abs": 1e-9}, "branch", _multiplier_identity),
        CheckSpec("eigen_identity", 6, "mean identity and sign for radial eigenpairs", {"residual": 1e-6}, "branch", _eigen_identity),
        CheckSpec("variational_crosscheck", 7, "free-energy minimizer = Newton solution, A >= 0",
                  {"l1": 1e-3, "second_variation": 1e-8, "closing_identity": 1e-6}, "variational", _variational),
        CheckSpec("kernel_structure", 8, "kernel of T iff alpha < 0",
                  {"weight": 1e-8, "t_image": 1e-6, "mu_floor": 1e-3}, "branch", _kernel),
        CheckSpec("lambda0_strict", 9, "lambda_0 < lambda_+ strictly", {"margin": 1e-3}, "threshold", _lambda0_strict),
        CheckSpec("convergence_orders", 10, "second-order contraction under M -> 2M",
                  {"ratio_halfwidth": 1.0}, "convergence", _convergence),
    )
}


def _tolerances(spec: CheckSpec, overrides: dict) -> dict:
    tol = dict(spec.tolerances)
    primary = next(iter(tol))
    for key, value in overrides.items():
        check, _, name = key.partition(".")
        if check == spec.id:
            tol[name or primary] = float(value)
    return tol


def _bundle_jobs(kind: str, cfg):
    M = cfg.grid
    if kind == "branch":
        return [(branch_bundle, (N, p, M, cfg.tol)) for N, p in CASES]
    if kind == "variational":
        return [(variational_bundle, (N, p, M, cfg.seed, cfg.tol)) for N, p in CASES]
    if kind == "threshold":
        cases = sorted(set(CASES) | {(2, q) for q in DISC_EXPONENTS})
        return [(threshold_bundle, (N, p, 2 * M)) for N, p in cases]
    if kind == "convergence":
        return [(convergence_bundle, (N, p)) for N, p in CASES]
    raise KeyError(kind)


def _call(fn, args):
    return fn(*args)


def run_verify(cfg, log: Callable[[str], None] | None = None) -> VerifyReport:
    """Run the enabled checks; bundle failures turn only the dependent checks into errors."""
    ids = list(cfg.checks) if cfg.checks else list(CHECKS)
    specs = [CHECKS[i] for i in ids]
    kinds = list(dict.fromkeys(s.needs for s in specs))
    bundles: dict[str, tuple[list | None, str, float]] = {}
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for kind in kinds:
            t0 = time.perf_counter()
            jobs = _bundle_jobs(kind, cfg)
            try:
                if pool is None:
                    data = [fn(*args) for fn, args in jobs]
                else:
                    data = list(pool.map(_call, *zip(*jobs)))
                bundles[kind] = (data, "", time.perf_counter() - t0)
            except Exception as exc:  # noqa: BLE001 - reported per check
                bundles[kind] = (None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
    finally:
        if pool is not None:
            pool.shutdown()

    report = VerifyReport(config=jsonable({k: v for k, v in vars(cfg).items()}))
    shared = {k: sum(1 for s in specs if s.needs == k) for k in kinds}
    for spec in specs:
        tol = _tolerances(spec, cfg.tolerances)
        data, err, elapsed = bundles[spec.needs]
        t0 = time.perf_counter()
        if data is None:
            result = CheckResult(spec.id, spec.criterion, spec.title, "error", {}, tol, 0.0, err)
        else:
            try:
                ok, measured = spec.evaluate(data, tol)
                status, msg = ("pass" if ok else "fail"), ""
            except Exception as exc:  # noqa: BLE001
                ok, measured, status, msg = False, {}, "error", f"{type(exc).__name__}: {exc}"
            runtime = elapsed / shared[spec.needs] + time.perf_counter() - t0
            result = CheckResult(spec.id, spec.criterion, spec.title, status, jsonable(measured), tol, runtime, msg)
        report.results.append(result)
        if log:
            log(format_result(result))
    return report


def _headline(result: CheckResult) -> str:
    if not result.measured:
        return result.message
    key, value = next(iter(result.measured.items()))
    return f"{key}={value:.3e}" if isinstance(value, float) else f"{key}={value}"


def format_result(result: CheckResult) -> str:
    tol = ", ".join(f"{k}={v:g}" for k, v in result.tolerance.items())
    return (f"[{result.status.upper():5}] {result.criterion:2d} {result.id:24} "
            f"{_headline(result)}  ({tol})  {result.runtime:.1f}s")
