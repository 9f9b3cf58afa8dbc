"""Sweep driver and writers for the command line."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .branch import NewtonDivergence, SingularJacobian, SweepTrace, sweep, tangent
from .config import RunConfig
from .emden import ProblemParams, lambda_plus
from .radial import build_grid
from .spectrum import potential, sigma1

log = logging.getLogger(__name__)

SWEEP_SCHEMA = "plasmalab.sweep/1"
COLUMNS = ("lambda", "alpha", "energy", "sigma1", "sigma1_sector", "m_lambda", "r_plus", "dalpha_dlambda", "residual")
DEFAULT_POINTS = 40
DEFAULT_SPAN = 3.0


class SweepFailure(RuntimeError):
    def __init__(self, msg, lam):
        super().__init__(msg)
        self.lam = lam


@dataclass
class SweepResult:
    trace: SweepTrace
    rows: list[dict]
    summary: dict


def sweep_lambdas(cfg: RunConfig, lp: float) -> tuple[np.ndarray, float | None]:
    """The lambda grid of a run and the cap value if the cap removed points."""
    lam_max = DEFAULT_SPAN * lp if cfg.lambda_max is None else cfg.lambda_max
    if lam_max == 0.0:
        lams = np.zeros(1)
    elif cfg.lambda_step is None:
        lams = np.linspace(0.0, lam_max, DEFAULT_POINTS)
    else:
        n = int(np.floor(lam_max / cfg.lambda_step * (1 + 1e-12)))
        lams = cfg.lambda_step * np.arange(n + 1)
    cap = cfg.lambda_cap * lp
    if lams[-1] > cap:
        return lams[lams <= cap], cap
    return lams, None


def run_sweep(cfg: RunConfig) -> SweepResult:
    params = ProblemParams(cfg.dimension, cfg.exponent)
    grid = build_grid(cfg.dimension, cfg.grid)
    lp = lambda_plus(params)
    lams, capped = sweep_lambdas(cfg, lp)
    if capped is not None:
        log.warning("sweep truncated at lambda_cap * lambda_+ = %.6g", capped)
    log.info("sweeping %d points on [0, %.6g], N=%d p=%g M=%d", lams.size, lams[-1], cfg.dimension, cfg.exponent, cfg.grid)
    try:
        trace = sweep(grid, params, lams, tol=cfg.tol)
    except (NewtonDivergence, SingularJacobian) as exc:
        lam = getattr(exc, "lam", None)
        raise SweepFailure(f"branch solver failed at lambda={lam}: {exc}", lam) from exc
    rows = []
    for pt in trace.points:
        pot = potential(grid, params, pt)
        s1, sector, ordered, mins = sigma1(grid, params, pt, l_max=cfg.lmax, pot=pot)
        if not ordered:
            # the truncation at lmax is only safe while sector minima rise with l
            raise SweepFailure(f"sector minima not increasing for l >= 1 at lambda={pt.lam}: {mins}", pt.lam)
        da, _ = tangent(grid, params, pt)
        rows.append({
            "lambda": pt.lam, "alpha": pt.alpha, "energy": pt.energy, "sigma1": s1, "sigma1_sector": sector,
            "m_lambda": pot.m, "r_plus": pot.r_plus, "dalpha_dlambda": da, "residual": pt.residual_norm,
        })
    sig = np.array([r["sigma1"] for r in rows])
    summary = {
        "schema": SWEEP_SCHEMA,
        "dimension": cfg.dimension,
        "exponent": cfg.exponent,
        "grid": cfg.grid,
        "points": len(rows),
        "lambda_range": [float(lams[0]), float(lams[-1])],
        "lambda_cap": capped,
        "lambda_plus": trace.lambda_plus,
        "lambda_plus_closed_form": lp,
        "alpha_decreasing": trace.alpha_decreasing,
        "energy_increasing": trace.energy_increasing,
        "sigma1_min": float(sig.min()),
        "sigma1_positive": bool(np.all(sig > 0)),
        "max_residual": max(r["residual"] for r in rows),
    }
    return SweepResult(trace=trace, rows=rows, summary=summary)


def stem(cfg: RunConfig) -> str:
    return f"N{cfg.dimension}_p{cfg.exponent:g}_M{cfg.grid}"
