"""Free-energy minimization over unit-mass densities.

    F(rho) = p/(p+1) int rho^{1+1/p} - lam/2 int rho G[rho],   rho >= 0, int rho = 1,

with G the Dirichlet Green operator.  Its gradient in the weighted product is
rho^{1/p} - lam G[rho]; at a stationary point this equals the mass multiplier
alpha on {rho > 0} and is >= alpha elsewhere, which is the discrete branch
equation.  The descent is a monotone spectral projected gradient method
(Barzilai-Borwein trial steps, Armijo backtracking along the projected arc).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .branch import BranchPoint
from .emden import ProblemParams
from .radial import RadialGrid, green_solve, integrate
from .spectrum import PotentialData, deflate, potential

STATIONARITY_TOL = 1e-8
MAX_ITERS = 5000


class MinimizationError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class DegenerateSupport(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityState:
    rho: np.ndarray
    F: float
    alpha: float = float("nan")
    alpha_spread: float = float("nan")
    psi: np.ndarray | None = None
    stationarity: float = float("nan")
    iterations: int = 0
    history: np.ndarray | None = field(default=None, repr=False)
    start: str = ""


def potential_of(grid: RadialGrid, rho: np.ndarray) -> np.ndarray:
    return green_solve(grid, 0, rho)


def free_energy(grid: RadialGrid, params: ProblemParams, lam: float, rho: np.ndarray, psi=None) -> float:
    p = params.p
    psi = potential_of(grid, rho) if psi is None else psi
    return p / (p + 1) * integrate(grid, rho ** (1 + 1 / p)) - 0.5 * lam * integrate(grid, rho * psi)


def free_energy_gradient(grid, params, lam, rho, psi=None) -> np.ndarray:
    """Gradient in the quadrature-weighted product."""
    psi = potential_of(grid, rho) if psi is None else psi
    return rho ** (1 / params.p) - lam * psi


def project_simplex(grid: RadialGrid, y: np.ndarray) -> np.ndarray:
    """Nearest point of {rho >= 0, int rho = 1} in the weighted metric.

    The answer is max(y - theta, 0) with the shift theta chosen so the mass is
    one; the mass is piecewise linear in theta, so the root is found exactly by
    scanning the breakpoints in sorted order.
    """
    w = grid.weights
    order = np.argsort(-y)
    ys, ws = y[order], w[order]
    cw = np.cumsum(ws)
    cwy = np.cumsum(ws * ys)
    theta = (cwy - 1.0) / cw
    k = int(np.nonzero(ys > theta)[0][-1])
    return np.maximum(y - theta[k], 0.0)


def _stationarity(grid, rho, g) -> float:
    return float(np.abs(project_simplex(grid, rho - g) - rho).max())


def _power_change(rho, delta, k):
    """(rho + delta)^k - rho^k without cancellation."""
    out = np.empty_like(rho)
    pos = rho > 0
    with np.errstate(divide="ignore"):
        out[pos] = rho[pos] ** k * np.expm1(k * np.log1p(delta[pos] / rho[pos]))
    out[~pos] = np.maximum(delta[~pos], 0.0) ** k
    return out


def scaled_step(grid, rho, g, h, s):
    """Minimizer of sum_i w_i (g_i d_i + h_i d_i^2 / (2 s)) over mass-neutral d >= -rho.

    Returns (d, theta) with d_i = max(-rho_i, s (theta - g_i) / h_i); the mass of d is piecewise linear
    and increasing in theta, so theta is located exactly among the breakpoints
    theta_i = g_i - h_i rho_i / s.
    """
    w = grid.weights
    a = s * w / h  # slope contributed by a free node
    bp = g - h * rho / s
    order = np.argsort(bp)
    bs, as_ = bp[order], a[order]
    # theta in [bs[k], bs[k+1]): nodes 0..k free, the rest clamped
    free_slope = np.cumsum(as_)
    free_off = np.cumsum(as_ * g[order])
    clamped = np.sum(w * rho) - np.cumsum((w * rho)[order])
    theta = (free_off + clamped) / free_slope
    upper = np.append(bs[1:], np.inf)
    k = int(np.argmax(theta < upper))
    return np.maximum(-rho, s * (theta[k] - g) / h), float(theta[k])


def energy_change(grid, params, lam, rho, psi, d, Gd, t) -> float:
    """F(rho + t d) - F(rho), evaluated so that tiny steps stay resolvable."""
    p = params.p
    lin = t * integrate(grid, d * psi)
    quad = 0.5 * t * t * integrate(grid, d * Gd)
    return p / (p + 1) * integrate(grid, _power_change(rho, t * d, 1 + 1 / p)) - lam * (lin + quad)


def minimize_free_energy(
    grid: RadialGrid,
    params: ProblemParams,
    lam: float,
    init: np.ndarray | DensityState,
    tol: float = STATIONARITY_TOL,
    max_iters: int = MAX_ITERS,
    c: float = 1e-4,
    rho_floor: float = 1e-6,
    start: str = "",
) -> DensityState:
    """Scaled projected descent until the projected-gradient step is below tol.

    The metric is the diagonal of the entropy Hessian, rho^{1/p-1}/p, floored
    at rho_floor * max(rho) so empty nodes can re-enter the support.
    """
    rho = np.array(init.rho if isinstance(init, DensityState) else init, dtype=float)
    rho = project_simplex(grid, rho)
    w = grid.weights
    p = params.p
    psi = potential_of(grid, rho)
    F = free_energy(grid, params, lam, rho, psi)
    g = free_energy_gradient(grid, params, lam, rho, psi)
    step = 1.0
    history = [F]
    it = 0
    stat = _stationarity(grid, rho, g)
    while stat > tol and it < max_iters:
        it += 1
        h = np.maximum(rho, rho_floor * rho.max()) ** (1 / p - 1) / p
        d, theta = scaled_step(grid, rho, g, h, step)
        # Armijo on F - theta * mass: equal to F on the simplex up to roundoff,
        # but free of the cancellation that the constant part of g causes
        slope = float(np.dot(w, (g - theta) * d))
        drift = theta * float(np.sum(w * d))
        if slope >= 0:
            break  # roundoff floor: no descent direction left
        Gd = potential_of(grid, d)
        t = 1.0
        for _ in range(60):
            dF = energy_change(grid, params, lam, rho, psi, d, Gd, t)
            if dF - t * drift <= c * t * slope:
                break
            t *= 0.5
        else:
            break
        rho_new = np.maximum(rho + t * d, 0.0)
        psi_new = psi + t * Gd
        g_new = free_energy_gradient(grid, params, lam, rho_new, psi_new)
        s_, y_ = rho_new - rho, g_new - g
        sy = float(np.dot(w, s_ * y_))
        shs = float(np.dot(w * h, s_ * s_))
        step = min(max(shs / sy, 1e-3), 1e3) if sy > 0 and np.isfinite(sy) else 1.0
        rho, psi, g = rho_new, psi_new, g_new
        F += dF
        history.append(F)
        stat = _stationarity(grid, rho, g)
    # refresh the accumulated quantities once at the end
    psi = potential_of(grid, rho)
    F = free_energy(grid, params, lam, rho, psi)
    stat = _stationarity(grid, rho, free_energy_gradient(grid, params, lam, rho, psi))
    state = _finish(grid, params, lam, rho, psi, F, stat, it, history, start)
    if stat > tol:
        raise MinimizationError(f"stationarity {stat:.2e} > {tol:.0e} after {it} iterations (lam={lam})", state)
    return state


def _finish(grid, params, lam, rho, psi, F, stat, it, history, start):
    try:
        alpha, spread = recover_alpha(grid, params, lam, rho, psi)
    except DegenerateSupport:
        alpha, spread = float("nan"), float("nan")
    return DensityState(
        rho=rho, F=F, alpha=alpha, alpha_spread=spread, psi=psi, stationarity=stat,
        iterations=it, history=np.array(history), start=start,
    )


def recover_alpha(grid, params, lam, rho, psi=None, threshold: float = 1e-8):
    """Mass-weighted mean and spread of rho^{1/p} - lam G[rho] where rho > threshold*max(rho)."""
    psi = potential_of(grid, rho) if psi is None else psi
    mask = rho > threshold * rho.max() if rho.max() > 0 else np.zeros_like(rho, dtype=bool)
    if not mask.any():
        raise DegenerateSupport("density vanishes identically")
    mult = rho[mask] ** (1 / params.p) - lam * psi[mask]
    mw = grid.weights[mask] * rho[mask]
    mean = float(np.dot(mw, mult) / mw.sum())
    spread = float(np.sqrt(np.dot(mw, (mult - mean) ** 2) / mw.sum()))
    return mean, spread


def _bump(grid):
    x = grid.r / grid.R
    return np.exp(-((x - 0.4) ** 2) / 0.02) + 1e-3


START_NAMES = ("uniform", "warm", "bump")


def multi_start(grid, params, lam, warm: np.ndarray | None = None, tol: float = STATIONARITY_TOL):
    """Descend from a uniform density, an optional warm start and an off-center bump.

    Returns (best state, all states); "best" is the lowest free energy.
    """
    starts = {"uniform": np.ones(grid.size), "bump": _bump(grid)}
    if warm is not None:
        starts["warm"] = warm
    states = [
        minimize_free_energy(grid, params, lam, starts[name], tol=tol, start=name)
        for name in START_NAMES if name in starts
    ]
    best = min(states, key=lambda s: s.F)
    return best, states


def l1_distance(grid, a, b) -> float:
    return integrate(grid, np.abs(a - b))


def second_variation(grid, params, point: BranchPoint, phi: np.ndarray, pot: PotentialData | None = None,
                     l: int = 0, pairs=None):
    """A(phi) = int V[phi]^2 - tau int V[phi] G[V[phi]]  (no deflation for l >= 1).

    With H^1_0-normalized eigenpairs of the sector, also returns the spectral
    form sum_j c_j^2 sigma_j / nu_j^2, c_j = D(phi, phi_j); it equals A(phi)
    when the pairs span the sector and phi vanishes at the boundary.
    Otherwise the second value is nan.
    """
    pot = potential(grid, params, point) if pot is None else pot
    if l == 0:
        _, dphi = deflate(grid, pot, phi)
    else:
        dphi = np.array(phi, dtype=float)
    u = pot.V * dphi
    A = integrate(grid, u * dphi) - pot.tau * integrate(grid, u * green_solve(grid, l, u))
    if pairs is None:
        return A, float("nan")
    op = grid.sector(l)
    s = op.unknowns
    Kphi = op.stiff_matvec(np.asarray(phi, dtype=float)[s])
    spectral = 0.0
    for pr in pairs:
        c = float(pr.phi[s] @ Kphi)
        spectral += c * c * pr.sigma / pr.nu**2
    return A, spectral


def taylor_check(grid, params, point: BranchPoint, phi, eps=(1e-2, 1e-3, 1e-4), pot=None):
    """Ratios (F(rho + eps V[phi]) - F(rho)) / (eps^2 A(phi) / (2p)); tend to 1 as eps -> 0."""
    pot = potential(grid, params, point) if pot is None else pot
    _, dphi = deflate(grid, pot, phi)
    drho = pot.V * dphi
    A, _ = second_variation(grid, params, point, phi, pot)
    F0 = free_energy(grid, params, point.lam, point.rho)
    out = []
    for e in eps:
        rho = np.maximum(point.rho + e * drho, 0.0)
        out.append((free_energy(grid, params, point.lam, rho) - F0) / (e * e * A / (2 * params.p)))
    return np.array(out)


def directional_derivative(grid, params, lam, rho, direction) -> float:
    return integrate(grid, free_energy_gradient(grid, params, lam, rho) * direction)
