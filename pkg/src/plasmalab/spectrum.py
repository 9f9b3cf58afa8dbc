"""Nonlocal linearized spectrum at a branch point.

In sector l the eigenvalue problem -Delta phi = (tau + sigma) V [phi]_lam
(deflation only for l = 0) becomes, on the unknowns, the symmetric pencil

    K phi = nu B phi,      nu = tau + sigma,

with K the sector stiffness matrix and B = diag(w V) - d d^T / m,
d = w V, m = int V (the rank-one term is dropped for l >= 1).  Sector 1 is
posed on the staggered dipole grid with the secant weight V_half, where the
translation mode of the radial solution survives discretization; without it
sigma_1 (which tends to 0 as the plasma contracts) loses all relative
accuracy once tau >> sigma_1.

B is positive semidefinite, so the pencil is solved in the form
B phi = theta K phi with theta = 1/nu.  The compact operator T = G * (tau V [.]_lam) equals tau K^{-1} B
on the unknowns and has eigenvalues mu = tau theta.

Two eigen-solvers are provided: a blocked subspace iteration on K^{-1} B with
Rayleigh-Ritz in the K (= H^1_0) inner product, used in production, and a
dense generalized symmetric solve used as an oracle on small grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .branch import BranchPoint, _pos
from .emden import ProblemParams
from .radial import RadialGrid, green_solve, h10_inner, integrate, sector_apply

MAX_SWEEPS = 500


class EigenConvergenceError(RuntimeError):
    def __init__(self, msg, ritz_residual=None):
        super().__init__(msg)
        self.ritz_residual = ritz_residual


class DegenerateDeflation(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PotentialData:
    V: np.ndarray
    m: float
    r_plus: float
    tau: float
    alpha: float
    lam: float
    V_half: np.ndarray  # secant slope of s -> s_+^p / p between neighbouring nodes


@dataclass(frozen=True, eq=False)
class EigenPair:
    l: int
    sigma: float
    mu: float  # nan when tau = 0
    nu: float  # tau + sigma
    phi: np.ndarray  # H^1_0-normalized nodal values
    mean: float  # <phi>_lam (0 for l >= 1)
    residual: float


@dataclass(eq=False)
class SpectrumReport:
    sectors: dict[int, list[EigenPair]]
    sigma1: float
    sector: int
    monotone: bool
    kernel: "KernelReport | None" = None
    identity_residuals: list = field(default_factory=list)


def potential(grid: RadialGrid, params: ProblemParams, point: BranchPoint) -> PotentialData:
    z = point.alpha + point.lam * point.psi
    V = _pos(z) ** (params.p - 1)
    if params.p - 1 > 0:
        V[z <= 0] = 0.0
    if point.alpha >= 0:
        r_plus = grid.R
    else:
        # z decreases from the center to alpha < 0 at r = R
        k = int(np.argmax(z <= 0))
        if k == 0:
            r_plus = 0.0
        else:
            z0, z1 = z[k - 1], z[k]
            r_plus = grid.r[k - 1] + (grid.r[k] - grid.r[k - 1]) * z0 / (z0 - z1)
    return PotentialData(
        V=V, m=integrate(grid, V), r_plus=float(r_plus), tau=params.p * point.lam,
        alpha=point.alpha, lam=point.lam, V_half=secant_potential(z, params.p),
    )


def secant_potential(z: np.ndarray, p: float) -> np.ndarray:
    """(F(z_{i+1}) - F(z_i)) / (z_{i+1} - z_i) with F(s) = s_+^p / p.

    With this half-node weight, tau V_half D psi = D rho holds exactly.
    """
    a, b = z[:-1], z[1:]
    Fa, Fb = _pos(a) ** p / p, _pos(b) ** p / p
    dz = b - a
    close = np.abs(dz) <= 1e-12 * np.maximum(np.abs(a), np.abs(b))
    safe = np.where(close, 1.0, dz)
    mid = _pos(0.5 * (a + b)) ** (p - 1)
    return np.where(close, mid, (Fb - Fa) / safe)


def deflate(grid: RadialGrid, pot: PotentialData, phi: np.ndarray):
    """(<phi>_lam, [phi]_lam)."""
    if pot.m <= 1e-14:
        raise DegenerateDeflation(f"weight mass m = {pot.m:.3e}")
    mean = integrate(grid, pot.V * phi) / pot.m
    return mean, phi - mean


def weighted_avg(grid, pot, f) -> float:
    return integrate(grid, pot.V * f) / pot.m


def apply_T(grid: RadialGrid, pot: PotentialData, l: int, phi: np.ndarray) -> np.ndarray:
    if l == 0:
        _, phi = deflate(grid, pot, phi)
    return green_solve(grid, l, pot.tau * pot.V * phi)


class SectorPencil:
    """K and B restricted to the unknowns of sector l.

    Sector 1 uses the staggered dipole operator, which keeps the translation
    mode exact; the other sectors use the nodal sector operators.
    """

    def __init__(self, grid: RadialGrid, pot: PotentialData, l: int):
        if pot.m <= 1e-14:
            raise DegenerateDeflation(f"weight mass m = {pot.m:.3e}")
        self.grid, self.pot, self.l = grid, pot, l
        if l == 1:
            self.op = grid.dipole()
            self.dv = self.op.mass * pot.V_half
        else:
            self.op = grid.sector(l)
            s = self.op.unknowns
            self.dv = grid.weights[s] * pot.V[s]
        self.deflated = l == 0

    def B(self, X: np.ndarray) -> np.ndarray:
        Y = self.dv[:, None] * X if X.ndim == 2 else self.dv * X
        if self.deflated:
            Y = Y - np.multiply.outer(self.dv, self.dv @ X) / self.pot.m
        return Y

    def dense(self):
        B = np.diag(self.dv)
        if self.deflated:
            B -= np.outer(self.dv, self.dv) / self.pot.m
        return self.op.dense_stiff(), B

    def to_nodal(self, x: np.ndarray) -> np.ndarray:
        if self.l == 1:
            return self.op.to_nodal(x)
        out = self.grid.zeros()
        out[self.op.unknowns] = x
        return out


def _pairs_from(pencil: SectorPencil, theta, X) -> list[EigenPair]:
    grid, pot, l = pencil.grid, pencil.pot, pencil.l
    out = []
    for th, x in zip(theta, X.T):
        x = x / np.sqrt(x @ pencil.op.stiff_matvec(x))
        nu = 1.0 / th
        sigma = nu - pot.tau
        mu = pot.tau * th if pot.tau > 0 else np.nan
        phi = pencil.to_nodal(x)
        if x[0] < 0 or (abs(x[0]) < 1e-14 and x.sum() < 0):
            phi = -phi
            x = -x
        mean = integrate(grid, pot.V * phi) / pot.m if l == 0 else 0.0
        r = pencil.op.stiff_matvec(x) - nu * pencil.B(x)
        res = np.linalg.norm(r) / max(np.linalg.norm(pencil.op.stiff_matvec(x)), 1e-300)
        out.append(EigenPair(l=l, sigma=float(sigma), mu=float(mu), nu=float(nu), phi=phi, mean=float(mean), residual=float(res)))
    return out


def sector_eigs_dense(grid, params, point, l: int, k: int, pot: PotentialData | None = None):
    """Oracle: dense generalized symmetric eigensolve of B x = theta K x."""
    pot = pot or potential(grid, params, point)
    pencil = SectorPencil(grid, pot, l)
    K, B = pencil.dense()
    n = K.shape[0]
    theta, X = eigh(B, K, subset_by_index=[n - k, n - 1])
    order = np.argsort(theta)[::-1]
    return _pairs_from(pencil, theta[order], X[:, order])


def sector_eigs(
    grid: RadialGrid,
    params: ProblemParams,
    point: BranchPoint,
    l: int,
    k: int = 3,
    pot: PotentialData | None = None,
    tol: float = 1e-12,
    max_sweeps: int = MAX_SWEEPS,
    seed: int = 0,
) -> list[EigenPair]:
    """k smallest sigma (largest mu) in sector l by blocked subspace iteration."""
    if not 1 <= k <= 10:
        raise ValueError("k must be between 1 and 10")
    pot = pot or potential(grid, params, point)
    pencil = SectorPencil(grid, pot, l)
    op = pencil.op
    n = op.stiff.shape[1]
    b = min(k + 4, n)
    rng = np.random.default_rng(seed)
    r = op.r if l == 1 else grid.r[op.unknowns]
    # smooth start: low sine modes plus a little noise
    X = np.column_stack([np.cos((j + 0.5) * np.pi * r / grid.R) for j in range(b)])
    X += 1e-3 * rng.standard_normal(X.shape)
    theta_old = None
    res = np.inf
    for sweep in range(max_sweeps):
        BX = pencil.B(X)
        Y = op.solve_stiff(BX)
        Ks = Y.T @ BX  # K Y = B X
        Bs = Y.T @ pencil.B(Y)
        Ks = 0.5 * (Ks + Ks.T)
        Bs = 0.5 * (Bs + Bs.T)
        theta, C = eigh(Bs, Ks)
        order = np.argsort(theta)[::-1]
        theta, C = theta[order], C[:, order]
        X = Y @ C
        Xk = X[:, :k]
        KX = op.stiff_matvec(Xk)
        R = KX - pencil.B(Xk) / theta[:k]
        res = float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(KX, axis=0)))
        if theta_old is not None:
            rel = np.max(np.abs(theta[:k] - theta_old) / np.abs(theta[:k]))
            if res < 1e-9 and rel < tol:
                return _pairs_from(pencil, theta[:k], Xk)
        theta_old = theta[:k].copy()
        # rescale columns to keep the block well conditioned
        X /= np.linalg.norm(X, axis=0)
    raise EigenConvergenceError(
        f"sector {l}: no convergence after {max_sweeps} sweeps (Ritz residual {res:.2e})", res
    )


def sigma1(grid, params, point, l_max: int = 2, k: int = 1, pot=None):
    """Minimum sigma over sectors 0..l_max, the minimizing sector, and the monotonicity flag."""
    if l_max < 2:
        raise ValueError("l_max must be >= 2")
    pot = pot or potential(grid, params, point)
    mins = [sector_eigs(grid, params, point, l, k, pot=pot)[0].sigma for l in range(l_max + 1)]
    monotone = all(a <= b for a, b in zip(mins[1:], mins[2:]))
    j = int(np.argmin(mins))
    return float(mins[j]), j, monotone, mins


def spectrum(grid, params, point, l_max: int = 2, k: int = 3) -> SpectrumReport:
    pot = potential(grid, params, point)
    sectors = {l: sector_eigs(grid, params, point, l, k, pot=pot) for l in range(l_max + 1)}
    mins = [sectors[l][0].sigma for l in range(l_max + 1)]
    j = int(np.argmin(mins))
    rep = SpectrumReport(
        sectors=sectors, sigma1=float(mins[j]), sector=j,
        monotone=all(a <= b for a, b in zip(mins[1:], mins[2:])),
        kernel=kernel_check(grid, params, point, pot=pot),
    )
    rep.identity_residuals = [eigen_identity_check(grid, params, point, pr, pot=pot)[0] for pr in sectors[0]]
    return rep


@dataclass(frozen=True, eq=False)
class KernelReport:
    empty: bool
    nullity: int  # dimension of the discrete Eigen(T; 0) in the radial sector
    phi0: np.ndarray | None
    mean: float | None
    deflated_weight_norm: float  # sup |V [phi0]_lam|
    T_norm: float  # ||T phi0||_{H^1_0}
    inner_deviation: float  # sup over [0, r_+) of |[phi0]_lam|
    harmonic_residual: float  # eigenfunction residual of -Delta phi on the dead annulus


def kernel_candidate(grid: RadialGrid, pot: PotentialData, c: float = 1.0) -> np.ndarray:
    """c on [0, r_+], radial harmonic on (r_+, R), zero at R."""
    r, R, N = grid.r, grid.R, grid.N
    rp = pot.r_plus
    if N == 2:
        g = lambda x: np.log(R / x)  # noqa: E731
    else:
        g = lambda x: x ** (2 - N) - R ** (2 - N)  # noqa: E731
    phi = np.full(r.shape, float(c))
    outer = r > rp
    phi[outer] = c * g(r[outer]) / g(rp)
    phi[-1] = 0.0
    return phi


def kernel_check(grid, params, point, pot=None, pairs: list[EigenPair] | None = None) -> KernelReport:
    pot = pot or potential(grid, params, point)
    M = grid.M
    # nullity of B on the unknowns: dead nodes, plus the support indicator when V_M = 0
    dead = int(np.count_nonzero(pot.V[:M] == 0.0))
    nullity = dead + int(pot.V[M] == 0.0 and dead < M)
    if point.alpha >= 0:
        return KernelReport(
            empty=nullity == 0, nullity=nullity, phi0=None, mean=None,
            deflated_weight_norm=0.0, T_norm=0.0, inner_deviation=0.0, harmonic_residual=0.0,
        )
    phi0 = kernel_candidate(grid, pot)
    mean, dphi = deflate(grid, pot, phi0)
    Tphi = apply_T(grid, pot, 0, phi0)
    inside = grid.r < pot.r_plus
    harm = 0.0
    if pairs:
        dead_nodes = (pot.V == 0.0) & (np.arange(M + 1) < M)
        dead_nodes[0] = False
        for pr in pairs:
            lap = sector_apply(grid.sector(pr.l), pr.phi)
            scale = np.abs(lap).max()
            harm = max(harm, float(np.abs(lap[dead_nodes]).max(initial=0.0) / scale))
    return KernelReport(
        empty=False,
        nullity=nullity,
        phi0=phi0,
        mean=float(mean),
        deflated_weight_norm=float(np.abs(pot.V * dphi).max()),
        T_norm=float(np.sqrt(max(h10_inner(grid, Tphi, Tphi), 0.0))),
        inner_deviation=float(np.abs(dphi[inside]).max(initial=0.0)),
        harmonic_residual=harm,
    )


def eigen_identity_check(grid, params, point, pair: EigenPair, pot=None):
    """Relative residual of (1/m)<phi> = (lam(p-1) + sigma) <psi [phi]>, and the sign flag.

    The left side is evaluated as (alpha + lam <psi>) <phi>, which equals
    (1/m) <phi> on exact solutions.
    """
    pot = pot or potential(grid, params, point)
    lam, p = point.lam, params.p
    if pair.l != 0:
        return 0.0, True
    mean, dphi = deflate(grid, pot, pair.phi)
    psi_mean = weighted_avg(grid, pot, point.psi)
    lhs = (point.alpha + lam * psi_mean) * mean
    cross = weighted_avg(grid, pot, point.psi * dphi)
    rhs = (lam * (p - 1) + pair.sigma) * cross
    scale = max(abs(lhs), abs(rhs), 1e-14 * np.sqrt(weighted_avg(grid, pot, pair.phi**2)) / pot.m)
    resid = abs(lhs - rhs) / scale
    sign_ok = True
    if lam * (p - 1) + pair.sigma > 0 and abs(mean) > 1e-12 * np.abs(pair.phi).max():
        sign_ok = bool(np.sign(cross) == np.sign(mean))
    return float(resid), sign_ok


@dataclass(frozen=True)
class Projection:
    by_h10: np.ndarray
    by_weight: np.ndarray
    errors: np.ndarray  # H^1_0 error of the k-term reconstruction, k = 1..len


def project_eigenbasis(grid, params, point, psi_test: np.ndarray, k: int = 8, pairs=None, pot=None):
    """Fourier coefficients of psi_test on the first k radial eigenfunctions, two ways."""
    pot = pot or potential(grid, params, point)
    if pot.tau <= 0:
        raise ValueError("projection needs tau > 0")
    pairs = pairs or sector_eigs(grid, params, point, 0, k, pot=pot)
    b1 = np.array([h10_inner(grid, psi_test, pr.phi) for pr in pairs])
    b2 = np.array(
        [pot.tau / pr.mu * integrate(grid, pot.V * deflate(grid, pot, pr.phi)[1] * psi_test) for pr in pairs]
    )
    errs = []
    approx = grid.zeros()
    for beta, pr in zip(b1, pairs):
        approx = approx + beta * pr.phi
        d = psi_test - approx
        errs.append(np.sqrt(max(h10_inner(grid, d, d), 0.0)))
    return Projection(by_h10=b1, by_weight=b2, errors=np.array(errs))


def smallest_mu(grid, params, point, pot=None) -> float:
    """Smallest eigenvalue of the discrete radial T (dense); exactly 0 iff a kernel exists."""
    pot = pot or potential(grid, params, point)
    pencil = SectorPencil(grid, pot, 0)
    K, B = pencil.dense()
    theta = eigh(B, K, eigvals_only=True)
    return float(pot.tau * theta.min())
