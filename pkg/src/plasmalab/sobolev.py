"""Best constants Lambda(D_N, t) = inf |grad w|_2^2 / |w|_t^2 over radial w >= 0.

The descent path minimizes the discrete Rayleigh quotient with gradient steps
taken in the H^1_0 metric (the Euclidean gradient preconditioned by the
Dirichlet stiffness matrix), which keeps the iteration count independent of
the mesh.  The shooting path solves -Delta w = Lambda w^{t-1} through the
Emden profile with exponent t - 1 and is used as the independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import pi

import numpy as np

from .emden import ProblemParams, lambda_plus, shoot
from .radial import RadialGrid, build_grid, torsion_profile, unit_volume_radius

DEFAULT_M = 2048
MISMATCH_RTOL = 1e-3


class BestConstantError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BestConstantResult:
    N: int
    t: float
    Lambda: float
    w: np.ndarray | None  # minimizer, normalized to int w^t = 1
    method: str
    iterations: int = 0
    converged: bool = True
    el_residual: float = float("nan")
    history: np.ndarray | None = None
    shooting: float = float("nan")

    @property
    def mismatch(self) -> float:
        """Relative gap between the descent and shooting values."""
        return abs(self.Lambda - self.shooting) / self.shooting


def _quotient(op, wq, x, t):
    a = float(x @ op.stiff_matvec(x))
    b = float(np.dot(wq, np.abs(x) ** t))
    return a / b ** (2 / t), b


def rayleigh_descent(
    grid: RadialGrid,
    t: float,
    max_iters: int = 5000,
    gtol: float = 1e-9,
    c: float = 1e-4,
) -> BestConstantResult:
    two_pN = np.inf if grid.N == 2 else 2 * grid.N / (grid.N - 2)
    if not 1.0 <= t < two_pN:
        raise ValueError(f"t={t} outside [1, {two_pN})")
    op = grid.sector(0)
    wq = grid.weights[: grid.M]
    x = torsion_profile(grid)[: grid.M].copy()
    x /= np.dot(wq, x**t) ** (1 / t)
    Q, _ = _quotient(op, wq, x, t)
    history = [Q]
    it = 0
    slope0 = None
    converged = False
    for it in range(1, max_iters + 1):
        # at int x^t = 1 the H^1_0 gradient is 2 (x - Q K^{-1}(w x^{t-1})) and
        # the slope along -g is g^T K g; step 1/2 is one inverse-iteration step
        y = op.solve_stiff(wq * x ** (t - 1))
        g = 2.0 * (x - Q * y)
        slope = float(g @ op.stiff_matvec(g))
        slope0 = slope if slope0 is None else slope0
        if slope <= gtol**2 * slope0:
            converged = True
            break
        step = 0.5
        for _ in range(60):
            xn = np.abs(x - step * g)
            Qn, bn = _quotient(op, wq, xn, t)
            if Qn <= Q - c * step * slope:
                break
            step *= 0.5
        else:
            converged = True  # no descent left above roundoff
            break
        x = xn / bn ** (1 / t)
        stalled = Q - Qn <= 8 * np.finfo(float).eps * Q
        Q = Qn
        history.append(Q)
        if stalled:
            converged = True
            break
    r = op.stiff_matvec(x) - Q * wq * x ** (t - 1)
    el = float(np.linalg.norm(r) / np.linalg.norm(op.stiff_matvec(x)))
    w = grid.zeros()
    w[: grid.M] = x
    return BestConstantResult(
        N=grid.N, t=t, Lambda=float(Q), w=w, method="rayleigh-descent/radial",
        iterations=it, converged=converged, el_residual=el, history=np.array(history),
    )


def shooting_constant(N: int, t: float, tol: float = 1e-11) -> float:
    """Lambda(D_N, t) from the Emden profile with exponent t - 1."""
    R = unit_volume_radius(N)
    q = t - 1.0
    prof = shoot(N, q, tol=tol)
    if q == 1.0:
        return prof.eigenvalue / R**2
    # U(r) = R^{-2/(q-1)} u0(r/R) solves -Delta U = U^q on D_N
    moment = R ** (N - 2 * (q + 1) / (q - 1)) * prof.moment(q + 1)
    return moment ** ((q - 1) / (q + 1))


def best_constant(grid: RadialGrid, N: int | None = None, t: float = 2.0, check: bool = True,
                  rtol: float = MISMATCH_RTOL) -> BestConstantResult:
    """Descent value of Lambda(D_N, t), cross-checked against shooting when ``check``."""
    N = grid.N if N is None else N
    if N != grid.N:
        raise ValueError(f"grid is {grid.N}-dimensional, asked for N={N}")
    res = rayleigh_descent(grid, t)
    if not res.converged:
        raise BestConstantError(f"descent did not converge in {res.iterations} iterations (t={t})")
    if not check:
        return res
    res = replace(res, shooting=shooting_constant(N, t))
    if res.mismatch > rtol:
        raise BestConstantError(
            f"descent {res.Lambda:.10g} vs shooting {res.shooting:.10g} (N={N}, t={t}): "
            f"relative gap {res.mismatch:.2e}"
        )
    return res


def lambda0(N: int, p: float, M: int = DEFAULT_M) -> float:
    """(1/p) Lambda(D_N, 2p)."""
    return best_constant(build_grid(N, M), N, 2 * p).Lambda / p


def lambda1(p: float, N: int = 2, M: int = DEFAULT_M) -> float:
    """(8 pi/(p+1))^{(p-1)/(2p)} Lambda(D_2, p+1)^{(p+1)/(2p)}; planar only."""
    if N != 2:
        raise ValueError("lambda_1 is defined for N = 2 only")
    if p < 1:
        raise ValueError("p must be >= 1")
    lam = best_constant(build_grid(2, M), 2, p + 1).Lambda
    return (8 * pi / (p + 1)) ** ((p - 1) / (2 * p)) * lam ** ((p + 1) / (2 * p))


def compare_thresholds(N: int, p: float, M: int = DEFAULT_M) -> dict:
    """lambda_0, lambda_+ and (planar) lambda_1 side by side."""
    out = {"N": N, "p": p, "lambda0": lambda0(N, p, M)}
    out["lambda_plus"] = lambda_plus(ProblemParams(N, p))
    if N == 2:
        out["lambda1"] = lambda1(p, M=M)
    return out
