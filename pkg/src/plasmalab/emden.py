"""Radial shooting for the Emden problem -Delta u = u^p on B_1, u = 0 on the sphere.

The profile is obtained by integrating

    u'' + (N-1)/r u' + u^p = 0,   u(0) = c,  u'(0) = 0

up to its first zero r0 and rescaling with u_a(r) = a u(a^{(p-1)/2} r), which
maps r0 to 1.  For the linear case p = 1 there is no amplitude scaling and
the zero is moved by a pure dilation; the dilation factor squared is then
the first Dirichlet eigenvalue of B_1.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import inf

import numpy as np
from scipy.integrate import simpson, solve_ivp

from .radial import RadialGrid, integrate, unit_ball_volume, unit_volume_radius

R_MAX = 50.0
FINE_POINTS = 8193


class NoZeroFound(RuntimeError):
    pass


def critical_exponent(N: int) -> float:
    """p_N: +inf for N = 2, N/(N-2) otherwise."""
    return inf if N == 2 else N / (N - 2)


def sobolev_exponent(N: int) -> float:
    """(N+2)/(N-2): the Emden problem on a ball has a solution below it."""
    return inf if N == 2 else (N + 2) / (N - 2)


@dataclass(frozen=True)
class ProblemParams:
    N: int
    p: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.N!r}")
        if not 1.0 < self.p < critical_exponent(self.N):
            raise ValueError(
                f"exponent p={self.p} outside (1, {critical_exponent(self.N)}) for N={self.N}"
            )

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def p_N(self) -> float:
        return critical_exponent(self.N)


@dataclass(frozen=True)
class EmdenProfile:
    N: int
    p: float
    s: np.ndarray  # fine radial grid on [0, 1]
    u: np.ndarray  # u0 on s
    I_p: float  # quadrature of u0^p over B_1
    I_p_flux: float  # -N omega_N u0'(1): the same integral via the divergence theorem
    center: float  # u0(0)
    first_zero: float  # r0 of the unscaled shot
    eigenvalue: float | None = None  # only for p = 1

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation of u0, zero outside the unit ball."""
        return np.interp(x, self.s, self.u, right=0.0)

    def moment(self, t: float) -> float:
        """Integral of u0^t over B_1."""
        return shell_integral(self.N, self.s, self.u**t)


def shell_integral(N: int, s: np.ndarray, f: np.ndarray) -> float:
    return float(N * unit_ball_volume(N) * simpson(f * s ** (N - 1), x=s))


def _rhs(N, p):
    def f(r, y):
        u, v = y
        return [v, -(N - 1) / r * v - np.sign(u) * abs(u) ** p]

    return f


def shoot(N: int, p: float, tol: float = 1e-10, center: float = 1.0) -> EmdenProfile:
    """Shoot from u(0) = center and rescale onto B_1.

    Accepts any exponent 0 <= p < (N+2)/(N-2): the best-constant oracle needs
    sublinear exponents as well as exponents beyond p_N.
    """
    if not 0.0 <= p < sobolev_exponent(N):
        raise ValueError(f"exponent {p} not in [0, {sobolev_exponent(N)}) for N={N}")
    # step off the coordinate singularity with the series solution
    r_start = 1e-4 / max(1.0, center ** ((p - 1) / 2))
    c_p = center**p
    y0 = [center - c_p * r_start**2 / (2 * N), -c_p * r_start / N]

    def hit_zero(r, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1
    sol = solve_ivp(
        _rhs(N, p),
        (r_start, R_MAX),
        y0,
        method="RK45",
        rtol=0.1 * tol,
        atol=1e-3 * tol * center,
        events=hit_zero,
        dense_output=True,
    )
    if sol.status != 1 or not sol.t_events[0].size:
        raise NoZeroFound(f"no sign change of u before r = {R_MAX} (N={N}, p={p})")
    r0 = float(sol.t_events[0][0])
    slope = float(sol.y_events[0][0][1])

    s = np.linspace(0.0, 1.0, FINE_POINTS)
    rr = r0 * s
    inner = rr < r_start
    u1 = np.empty_like(rr)
    u1[inner] = center - c_p * rr[inner] ** 2 / (2 * N)
    u1[~inner] = sol.sol(rr[~inner])[0]
    u1[-1] = 0.0

    eig = None
    if p == 1.0:
        amp = 1.0 / center
        eig = r0**2
        du_end = amp * r0 * slope
    else:
        amp = r0 ** (2.0 / (p - 1))
        du_end = amp * r0 * slope
    u0 = amp * u1
    u0[-1] = 0.0
    I_quad = shell_integral(N, s, np.maximum(u0, 0.0) ** p)
    I_flux = -N * unit_ball_volume(N) * du_end
    return EmdenProfile(
        N=N, p=p, s=s, u=u0, I_p=I_quad, I_p_flux=I_flux,
        center=float(u0[0]), first_zero=r0, eigenvalue=eig,
    )


def solve_emden(params: ProblemParams, tol: float = 1e-10, center: float = 1.0) -> EmdenProfile:
    return shoot(params.N, params.p, tol=tol, center=center)


def lambda_plus_formula(params: ProblemParams, I_p: float, R: float) -> float:
    """Closed form of lambda_+ on the unit-volume ball of radius R."""
    N, p = params.N, params.p
    ratio = 0.0 if N == 2 else p / params.p_N
    return I_p ** (1.0 - 1.0 / p) * R ** (-(N / p) * (1.0 - ratio))


def lambda_plus(params: ProblemParams, tol: float = 1e-10) -> float:
    """Formula value with I_p from the flux identity (exact up to ODE tolerance)."""
    prof = solve_emden(params, tol=tol)
    return lambda_plus_formula(params, prof.I_p_flux, unit_volume_radius(params.N))


def emden_to_branch_point(profile: EmdenProfile, grid: RadialGrid, params: ProblemParams):
    """Map the Emden solution to the alpha = 0 point of the branch.

    u(x) = R^{-2/(p-1)} u0(x/R) solves the Emden equation on D_N; with
    lambda_v^{p/(p-1)} = int u^p the pair (0, lambda_v^{-p/(p-1)} u) solves
    the constrained problem at lambda = lambda_v.
    """
    from .branch import make_point

    if grid.N != profile.N:
        raise ValueError("grid dimension does not match the profile")
    p = profile.p
    u = grid.R ** (-2.0 / (p - 1)) * profile(grid.r / grid.R)
    u[-1] = 0.0
    lam = integrate(grid, u**p) ** ((p - 1) / p)
    psi = lam ** (-p / (p - 1)) * u
    return make_point(grid, params, lam, 0.0, psi)
