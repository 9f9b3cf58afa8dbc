"""Newton continuation for the constrained problem on D_N.

Unknowns are the scalar alpha and the nodal values of psi (psi_M = 0).  The
residual map is

    Phi_1 = -1 + int [alpha + lam psi]_+^p
    Phi_2 = -Delta psi - [alpha + lam psi]_+^p

and its differential in direction (s, phi) is

    (p int V (s + lam phi),  -Delta phi - p V (s + lam phi)),

with V = [alpha + lam psi]_+^{p-1}.  The bordered Newton system is reduced by
block elimination on the scalar unknown (two tridiagonal solves), followed
by one step of iterative refinement on the full system.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.linalg import LinAlgError, solve_banded
from scipy.sparse.linalg import spsolve

from .emden import ProblemParams
from .radial import RadialGrid, h10_inner, integrate, sector_apply, torsion_profile

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
MAX_ITER = 50


class NewtonDivergence(RuntimeError):
    def __init__(self, msg, lam=None, last=None):
        super().__init__(msg)
        self.lam = lam
        self.last = last


class SingularJacobian(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BranchPoint:
    lam: float
    alpha: float
    psi: np.ndarray
    rho: np.ndarray
    energy: float
    energy_alt: float  # 1/2 int rho psi
    residual_norm: float  # max(|Phi_1|, ||Phi_2||_{H^-1})
    residual_max: float  # pointwise sup of Phi_2, limited by roundoff ~ eps |psi| / h^2
    iterations: int = 0


@dataclass(eq=False)
class SweepTrace:
    points: list[BranchPoint]
    lambda_plus: float | None
    alpha_decreasing: bool
    energy_increasing: bool
    sigma1: list = field(default_factory=list)
    sigma1_sector: list = field(default_factory=list)

    @property
    def lams(self) -> np.ndarray:
        return np.array([pt.lam for pt in self.points])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([pt.alpha for pt in self.points])

    @property
    def energies(self) -> np.ndarray:
        return np.array([pt.energy for pt in self.points])


def _pos(z):
    return np.maximum(z, 0.0)


def dual_norm(grid: RadialGrid, f: np.ndarray) -> float:
    """H^-1 norm of a nodal function: sqrt(<f, G f>) with the Dirichlet Green solve."""
    op = grid.sector(0)
    b = grid.weights[: grid.M] * f[: grid.M]
    return float(np.sqrt(max(np.dot(b, op.solve_stiff(b)), 0.0)))


def residual(grid: RadialGrid, params: ProblemParams, lam: float, alpha: float, psi: np.ndarray):
    """(Phi_1, Phi_2) with Phi_2 given nodally (zero in the boundary slot)."""
    rho = _pos(alpha + lam * psi) ** params.p
    phi1 = integrate(grid, rho) - 1.0
    phi2 = sector_apply(grid.sector(0), psi) - rho
    phi2[-1] = 0.0
    return phi1, phi2


def energy(grid: RadialGrid, point_or_psi, rho: np.ndarray | None = None):
    """Return (1/2 D(psi, psi), 1/2 int rho psi)."""
    if isinstance(point_or_psi, BranchPoint):
        psi, rho = point_or_psi.psi, point_or_psi.rho
    else:
        psi = point_or_psi
    e = 0.5 * h10_inner(grid, psi, psi)
    e_alt = 0.5 * integrate(grid, rho * psi) if rho is not None else np.nan
    return e, e_alt


def make_point(grid, params, lam, alpha, psi, iterations=0) -> BranchPoint:
    psi = np.array(psi, dtype=float)
    psi[-1] = 0.0
    rho = _pos(alpha + lam * psi) ** params.p
    phi1, phi2 = residual(grid, params, lam, alpha, psi)
    e, e_alt = energy(grid, psi, rho)
    return BranchPoint(
        lam=float(lam),
        alpha=float(alpha),
        psi=psi,
        rho=rho,
        energy=e,
        energy_alt=e_alt,
        residual_norm=max(abs(phi1), dual_norm(grid, phi2)),
        residual_max=float(np.abs(phi2).max()),
        iterations=iterations,
    )


def jacobian_apply(grid, params, point, s: float, phi: np.ndarray):
    """Directional derivative of Phi at (point.alpha, point.psi)."""
    lam, p = point.lam, params.p
    V = _pos(point.alpha + lam * point.psi) ** (p - 1)
    u = s + lam * phi
    d1 = p * integrate(grid, V * u)
    d2 = sector_apply(grid.sector(0), phi) - p * V * u
    d2[-1] = 0.0
    return d1, d2


class BorderedSystem:
    """Jacobian of Phi in weak (W-multiplied) form, on the unknowns.

        [ p m        tau d^T       ] [s  ]   [r1]
        [ -p d       K - tau D_V   ] [phi] = [r2]

    with d = w V, D_V = diag(w V), m = int V, tau = p lam.
    """

    def __init__(self, grid: RadialGrid, params: ProblemParams, lam: float, alpha: float, psi):
        self.grid = grid
        p = params.p
        M = grid.M
        V = _pos(alpha + lam * psi) ** (p - 1)
        self.p, self.tau = p, p * lam
        self.m = integrate(grid, V)
        self.d = grid.weights[:M] * V[:M]
        op = grid.sector(0)
        ab = np.zeros((3, M))
        ab[0, 1:] = op.stiff[0, 1:]
        ab[1] = op.stiff[1] - self.tau * self.d
        ab[2, :-1] = op.stiff[0, 1:]
        self.band = ab

    def matvec(self, s, phi):
        op = self.grid.sector(0)
        r1 = self.p * self.m * s + self.tau * np.dot(self.d, phi)
        r2 = op.stiff_matvec(phi) - self.tau * self.d * phi - self.p * self.d * s
        return r1, r2

    def _eliminate(self, r1, r2):
        a = solve_banded((1, 1), self.band, np.column_stack((r2, self.p * self.d)))
        if not np.all(np.isfinite(a)):
            raise LinAlgError("non-finite tridiagonal solve")
        pivot = self.p * self.m + self.tau * np.dot(self.d, a[:, 1])
        s = (r1 - self.tau * np.dot(self.d, a[:, 0])) / pivot
        return s, a[:, 0] + s * a[:, 1]

    def _sparse(self, r1, r2):
        M = self.grid.M
        ab = self.band
        main = sps.diags([ab[2, :-1], ab[1], ab[0, 1:]], [-1, 0, 1], shape=(M, M))
        A = sps.bmat(
            [
                [sps.csr_matrix([[self.p * self.m]]), sps.csr_matrix(self.tau * self.d[None, :])],
                [sps.csr_matrix(-self.p * self.d[:, None]), main],
            ],
            format="csc",
        )
        x = spsolve(A, np.concatenate(([r1], r2)))
        return x[0], x[1:]

    def solve(self, r1: float, r2: np.ndarray):
        try:
            s, phi = self._eliminate(r1, r2)
            e1, e2 = self.matvec(s, phi)
            ds, dphi = self._eliminate(r1 - e1, r2 - e2)
            s, phi = s + ds, phi + dphi
        except (LinAlgError, ZeroDivisionError, FloatingPointError):
            s, phi = self._sparse(r1, r2)
        e1, e2 = self.matvec(s, phi)
        scale = abs(r1) + np.abs(r2).sum() + 1e-300
        err = (abs(r1 - e1) + np.abs(r2 - e2).sum()) / scale
        if not np.isfinite(err) or err > 1e-6:
            s, phi = self._sparse(r1, r2)
            e1, e2 = self.matvec(s, phi)
            err = (abs(r1 - e1) + np.abs(r2 - e2).sum()) / scale
            if not np.isfinite(err) or err > 1e-6:
                raise SingularJacobian(f"bordered solve failed (relative residual {err:.2e})")
        return float(s), phi


def _merit(grid, phi1, phi2):
    return 0.5 * (phi1**2 + dual_norm(grid, phi2) ** 2)


def newton_solve(
    grid: RadialGrid,
    params: ProblemParams,
    lam: float,
    init: tuple[float, np.ndarray] | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_ITER,
) -> BranchPoint:
    """Damped Newton with Armijo backtracking on 1/2 ||Phi||^2."""
    M = grid.M
    if init is None:
        alpha, psi = 1.0, torsion_profile(grid)
    else:
        alpha, psi = init
    alpha = float(alpha)
    psi = np.array(psi, dtype=float)
    psi[-1] = 0.0

    phi1, phi2 = residual(grid, params, lam, alpha, psi)
    f = _merit(grid, phi1, phi2)
    for it in range(max_iter + 1):
        res = max(abs(phi1), dual_norm(grid, phi2))
        # polish well below tol; stop early only at the roundoff floor
        if res <= 1e-2 * tol:
            return make_point(grid, params, lam, alpha, psi, iterations=it)
        if it == max_iter:
            if res <= tol:
                return make_point(grid, params, lam, alpha, psi, iterations=it)
            break
        system = BorderedSystem(grid, params, lam, alpha, psi)
        ds, dphi = system.solve(-phi1, -grid.weights[:M] * phi2[:M])
        t = 1.0
        for _ in range(40):
            a_new = alpha + t * ds
            psi_new = psi.copy()
            psi_new[:M] += t * dphi
            n1, n2 = residual(grid, params, lam, a_new, psi_new)
            f_new = _merit(grid, n1, n2)
            if f_new <= (1.0 - 2e-4 * t) * f:
                break
            t *= 0.5
        else:
            if res <= tol:
                return make_point(grid, params, lam, alpha, psi, iterations=it)
            raise NewtonDivergence(f"line search stalled at lam={lam} (residual {res:.2e})", lam)
        alpha, psi, phi1, phi2, f = a_new, psi_new, n1, n2, f_new
    raise NewtonDivergence(f"no convergence in {max_iter} iterations at lam={lam}", lam)


def tangent(grid: RadialGrid, params: ProblemParams, point: BranchPoint):
    """(d alpha/d lam, d psi/d lam) from D Phi [(da, dpsi)] = -d_lam Phi."""
    M = grid.M
    p = params.p
    V = _pos(point.alpha + point.lam * point.psi) ** (p - 1)
    # d_lam Phi = (p int V psi, -p V psi); the second row in weak form
    r1 = -p * integrate(grid, V * point.psi)
    r2 = p * grid.weights[:M] * V[:M] * point.psi[:M]
    system = BorderedSystem(grid, params, point.lam, point.alpha, point.psi)
    try:
        da, dpsi = system.solve(r1, r2)
    except SingularJacobian:
        log.error("singular linearization at lam=%g: contradicts sigma_1 > 0 on balls", point.lam)
        raise
    out = grid.zeros()
    out[:M] = dpsi
    return da, out


def weighted_mean(grid, V, f) -> float:
    return integrate(grid, V * f) / integrate(grid, V)


def _advance(grid, params, point, lam_new, max_halvings=10, tol=NEWTON_TOL):
    """Predictor-corrector from ``point`` to ``lam_new``, halving on failure."""
    targets = [lam_new]
    cur = point
    halvings = 0
    while targets:
        target = targets[-1]
        da, dpsi = tangent(grid, params, cur)
        dl = target - cur.lam
        init = (cur.alpha + dl * da, cur.psi + dl * dpsi)
        try:
            cur = newton_solve(grid, params, target, init, tol=tol)
            targets.pop()
        except (NewtonDivergence, SingularJacobian) as exc:
            halvings += 1
            if halvings > max_halvings:
                raise NewtonDivergence(
                    f"continuation failed at lam={target}", lam=target, last=cur
                ) from exc
            targets.append(0.5 * (cur.lam + target))
    return cur


def sweep(grid: RadialGrid, params: ProblemParams, lam_values, tol: float = NEWTON_TOL) -> SweepTrace:
    lam_values = [float(x) for x in lam_values]
    if not lam_values or lam_values[0] != 0.0:
        raise ValueError("lambda values must start at 0")
    if any(b <= a for a, b in zip(lam_values, lam_values[1:])):
        raise ValueError("lambda values must be strictly increasing")
    pts = [newton_solve(grid, params, 0.0, tol=tol)]
    for lam in lam_values[1:]:
        pts.append(_advance(grid, params, pts[-1], lam, tol=tol))
    alphas = np.array([q.alpha for q in pts])
    energies = np.array([q.energy for q in pts])
    lam_plus = None
    idx = np.nonzero((alphas[:-1] > 0) & (alphas[1:] <= 0))[0]
    if idx.size:
        i = idx[0]
        lam_plus = float(_zero_from(grid, params, pts[i], pts[i + 1]))
    return SweepTrace(
        points=pts,
        lambda_plus=lam_plus,
        alpha_decreasing=bool(np.all(np.diff(alphas) < 0)),
        energy_increasing=bool(np.all(np.diff(energies) > 0)),
    )


def _zero_from(grid, params, lo: BranchPoint, hi: BranchPoint, tol=1e-9, max_iter=100):
    """Safeguarded Newton/secant on lam -> alpha_lam inside a sign bracket."""
    best = lo if abs(lo.alpha) < abs(hi.alpha) else hi
    for _ in range(max_iter):
        if abs(best.alpha) <= tol:
            return best.lam
        da, _ = tangent(grid, params, best)
        cand = best.lam - best.alpha / da
        if not lo.lam < cand < hi.lam:
            # secant, then bisection as last resort
            cand = lo.lam - lo.alpha * (hi.lam - lo.lam) / (hi.alpha - lo.alpha)
            if not lo.lam < cand < hi.lam:
                cand = 0.5 * (lo.lam + hi.lam)
        nxt = _advance(grid, params, best, cand)
        if nxt.alpha > 0:
            lo = nxt
        else:
            hi = nxt
        best = nxt
        if hi.lam - lo.lam <= 1e-15 * hi.lam:
            break
    if abs(best.alpha) > tol:
        raise NewtonDivergence(f"lambda_+ search did not reach |alpha| <= {tol}")
    return best.lam


def find_lambda_plus(grid: RadialGrid, params: ProblemParams, tol: float = 1e-9) -> float:
    """Locate the zero of alpha along the branch, without using the closed form."""
    cur = newton_solve(grid, params, 0.0)
    step = None
    for _ in range(200):
        da, _ = tangent(grid, params, cur)
        guess = -cur.alpha / da  # distance to the linearized zero
        step = guess if step is None else min(guess, 2 * step)
        nxt = _advance(grid, params, cur, cur.lam + 1.05 * step)
        if nxt.alpha <= 0:
            return _zero_from(grid, params, cur, nxt, tol=tol)
        cur = nxt
    raise NewtonDivergence("failed to bracket lambda_+")
