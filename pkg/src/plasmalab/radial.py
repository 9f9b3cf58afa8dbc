"""Radial finite-volume discretization of unit-volume balls.

Nodes are r_i = i*h, i = 0..M, with h = R/M.  Each node owns the shell
[r_{i-1/2}, r_{i+1/2}] clipped to [0, R]; its quadrature weight is that
shell's N-dimensional volume, so the weights add up to |D_N| = 1 exactly.

Grid functions are plain float arrays of length M+1 holding nodal values.
Functions in H^1_0 carry a zero in the last slot.  The sector-l operator
acts on the unknowns i = 0..M-1 (l = 0) or i = 1..M-1 (l >= 1, where the
regularity condition f(0) = 0 is imposed).

With K the stiffness matrix (flux form) and W = diag(weights), the discrete
operator is A = W^{-1} K.  K is symmetric, hence A is self-adjoint in the
weighted product and summation by parts holds exactly:

    sum_i w_i (A f)_i g_i = D(f, g)   whenever g_M = 0,

where D is the discrete Dirichlet form returned by :func:`h10_inner`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

MIN_NODES = 16


class GridError(ValueError):
    pass


class SolverError(RuntimeError):
    """Internal linear-algebra failure (non-positive pivot and the like)."""


def unit_ball_volume(N: int) -> float:
    return pi ** (N / 2) / gamma(N / 2 + 1)


def unit_volume_radius(N: int) -> float:
    """Radius R_N of the ball of unit volume in R^N."""
    return unit_ball_volume(N) ** (-1.0 / N)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    N: int
    M: int
    R: float
    r: np.ndarray
    weights: np.ndarray
    # N*omega_N*r_{i+1/2}^{N-1}/h, i = 0..M-1
    flux: np.ndarray
    _sectors: dict = field(default_factory=dict, repr=False)

    @property
    def h(self) -> float:
        return self.R / self.M

    @property
    def size(self) -> int:
        return self.M + 1

    def zeros(self) -> np.ndarray:
        return np.zeros(self.M + 1)

    def sector(self, l: int) -> "SectorOperator":
        op = self._sectors.get(l)
        if op is None:
            op = SectorOperator.assemble(self, l)
            self._sectors[l] = op
        return op

    def dipole(self) -> "DipoleOperator":
        op = self._sectors.get("dipole")
        if op is None:
            op = DipoleOperator.assemble(self)
            self._sectors["dipole"] = op
        return op


def build_grid(N: int, M: int) -> RadialGrid:
    if int(N) != N or N < 2:
        raise GridError(f"dimension must be an integer >= 2, got {N!r}")
    if int(M) != M or M < MIN_NODES:
        raise GridError(f"grid size must be an integer >= {MIN_NODES}, got {M!r}")
    N, M = int(N), int(M)
    omega = unit_ball_volume(N)
    R = unit_volume_radius(N)
    h = R / M
    r = np.linspace(0.0, R, M + 1)
    edges = np.concatenate(([0.0], (np.arange(M) + 0.5) * h, [R]))
    weights = omega * np.diff(edges**N)
    mid = (np.arange(M) + 0.5) * h
    flux = N * omega * mid ** (N - 1) / h
    return RadialGrid(N=N, M=M, R=R, r=r, weights=weights, flux=flux)


def integrate(grid: RadialGrid, f) -> float:
    return float(np.dot(grid.weights, np.broadcast_to(f, grid.r.shape)))


@dataclass(frozen=True, eq=False)
class SectorOperator:
    """Discrete -f'' - (N-1)/r f' + l(l+N-2)/r^2 f with f(R) = 0.

    ``stiff`` is the symmetric tridiagonal K restricted to the unknowns in
    upper LAPACK band storage; ``chol`` is its banded Cholesky factor.
    """

    grid: RadialGrid
    l: int
    first: int
    stiff: np.ndarray
    chol: np.ndarray
    centrifugal: np.ndarray  # l(l+N-2)/r^2 at the unknowns

    @classmethod
    def assemble(cls, grid: RadialGrid, l: int) -> "SectorOperator":
        if l < 0:
            raise GridError("sector index must be >= 0")
        M, N = grid.M, grid.N
        first = 0 if l == 0 else 1
        idx = np.arange(first, M)
        left = np.where(idx > 0, grid.flux[np.maximum(idx - 1, 0)], 0.0)
        diag = left + grid.flux[idx]
        cent = np.zeros(idx.size)
        if l > 0:
            cent = l * (l + N - 2) / grid.r[idx] ** 2
            diag = diag + grid.weights[idx] * cent
        ab = np.zeros((2, idx.size))
        ab[1] = diag
        ab[0, 1:] = -grid.flux[idx[:-1]]
        try:
            chol = cholesky_banded(ab)
        except LinAlgError as exc:
            raise SolverError(f"non-positive pivot in sector {l}") from exc
        return cls(grid=grid, l=l, first=first, stiff=ab, chol=chol, centrifugal=cent)

    @property
    def unknowns(self) -> slice:
        return slice(self.first, self.grid.M)

    def stiff_matvec(self, x: np.ndarray) -> np.ndarray:
        """K x for x given on the unknowns (columns if x is 2-D)."""
        ab = self.stiff
        diag, off = (ab[1], ab[0, 1:]) if x.ndim == 1 else (ab[1][:, None], ab[0, 1:][:, None])
        y = diag * x
        y[:-1] += off * x[1:]
        y[1:] += off * x[:-1]
        return y

    def solve_stiff(self, b: np.ndarray) -> np.ndarray:
        """K^{-1} b on the unknowns (b may be 2-D, one column per rhs)."""
        return cho_solve_banded((self.chol, False), b)

    def dense_stiff(self) -> np.ndarray:
        ab = self.stiff
        return np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[0, 1:], -1)


@dataclass(frozen=True, eq=False)
class DipoleOperator:
    """Staggered discretization of the l = 1 sector.

    With d/dr as A, the radial Laplacian is -A*A and the l = 1 operator is
    -AA*.  Here the unknowns f_j sit at the half nodes r_{j+1/2}; with D the
    nodal difference quotient and E = diag(mass) D, the stiffness matrix is
    E W^{-1} E^T over all nodes.  It obeys D A_0 = A_1 D exactly, where A_0
    is the sector-0 operator without boundary condition, so radial
    derivatives of discrete radial solutions are discrete l = 1 solutions up
    to a defect in the last cell, which carries f(R) = 0.
    """

    grid: RadialGrid
    r: np.ndarray  # half-node radii
    mass: np.ndarray  # shell volumes N omega_N r^{N-1} h around the half nodes
    stiff: np.ndarray
    chol: np.ndarray
    l: int = 1
    first: int = 0

    @classmethod
    def assemble(cls, grid: RadialGrid) -> "DipoleOperator":
        M, h, w = grid.M, grid.h, grid.weights
        r = (np.arange(M) + 0.5) * h
        mass = grid.flux * h * h
        e = mass / h
        ab = np.zeros((2, M))
        ab[1] = e * e * (1.0 / w[:-1] + 1.0 / w[1:])
        ab[0, 1:] = -e[:-1] * e[1:] / w[1:-1]
        try:
            chol = cholesky_banded(ab)
        except LinAlgError as exc:
            raise SolverError("non-positive pivot in the dipole sector") from exc
        return cls(grid=grid, r=r, mass=mass, stiff=ab, chol=chol)

    @property
    def unknowns(self) -> slice:
        return slice(0, self.grid.M)

    stiff_matvec = SectorOperator.stiff_matvec
    solve_stiff = SectorOperator.solve_stiff
    dense_stiff = SectorOperator.dense_stiff

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Nodal function -> difference quotients at the half nodes."""
        return np.diff(f) / self.grid.h

    def to_nodal(self, x: np.ndarray) -> np.ndarray:
        """Interpolate half-node values onto the nodes, with f(0) = f(R) = 0."""
        return np.interp(self.grid.r, np.concatenate(([0.0], self.r, [self.grid.R])),
                         np.concatenate(([0.0], x, [0.0])))


def sector_apply(op: SectorOperator, f: np.ndarray) -> np.ndarray:
    """Nodal image of the sector operator; zero outside the unknowns."""
    grid = op.grid
    f = np.asarray(f, dtype=float)
    q = grid.flux * np.diff(f)  # -(outward flux) through r_{i+1/2}
    kf = np.empty(grid.M)
    kf[0] = -q[0]
    kf[1:] = q[:-1] - q[1:]
    out = grid.zeros()
    s = op.unknowns
    out[s] = kf[s] / grid.weights[s] + op.centrifugal * f[s]
    return out


def green_solve(grid: RadialGrid, l: int, f: np.ndarray) -> np.ndarray:
    """Dirichlet solve in sector l: returns phi with A_l phi = f, phi(R) = 0."""
    op = grid.sector(l)
    s = op.unknowns
    rhs = grid.weights[s] * np.asarray(f, dtype=float)[s]
    out = grid.zeros()
    out[s] = op.solve_stiff(rhs)
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite values in Green solve")
    return out


def h10_inner(grid: RadialGrid, f: np.ndarray, g: np.ndarray, l: int = 0) -> float:
    """Discrete Dirichlet form; includes the centrifugal term for l >= 1."""
    val = float(np.sum(grid.flux * np.diff(f) * np.diff(g)))
    if l > 0:
        r = grid.r[1:-1]
        val += l * (l + grid.N - 2) * float(
            np.sum(grid.weights[1:-1] * f[1:-1] * g[1:-1] / r**2)
        )
    return val


def torsion_profile(grid: RadialGrid) -> np.ndarray:
    """(R^2 - r^2)/(2N), the solution of -Delta psi = 1 on D_N."""
    return (grid.R**2 - grid.r**2) / (2 * grid.N)


def weighted_norm(grid: RadialGrid, f: np.ndarray) -> float:
    return float(np.sqrt(np.dot(grid.weights, f * f)))
