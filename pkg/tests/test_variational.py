import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from plasmalab.branch import newton_solve, sweep
from plasmalab.emden import ProblemParams, lambda_plus
from plasmalab.radial import build_grid, integrate
from plasmalab.spectrum import deflate, potential, sector_eigs
from plasmalab.variational import (
    MinimizationError,
    directional_derivative,
    free_energy,
    free_energy_gradient,
    l1_distance,
    minimize_free_energy,
    multi_start,
    project_simplex,
    recover_alpha,
    scaled_step,
    second_variation,
    taylor_check,
)
from plasmalab.verify import random_test_functions

DISC = ProblemParams(2, 2.0)
M = 256
FACTORS = (0.5, 1.0, 1.5)


@pytest.fixture(scope="module")
def grid():
    return build_grid(2, M)


@pytest.fixture(scope="module")
def points(grid):
    lp = lambda_plus(DISC)
    tr = sweep(grid, DISC, lp * np.linspace(0.0, 1.5, 13))
    by_factor = {round(pt.lam / lp, 6): pt for pt in tr.points}
    return {f: by_factor[f] for f in FACTORS}


def mass_neutral(grid, rng):
    d = rng.normal(size=grid.size)
    return d - integrate(grid, d)


def bisection_projection(grid, y):
    """Independent oracle: shift found by bracketing root finding on the mass."""
    mass = lambda th: integrate(grid, np.maximum(y - th, 0.0)) - 1.0  # noqa: E731
    th = brentq(mass, y.min() - 2.0, y.max(), xtol=1e-15, rtol=1e-15)
    return np.maximum(y - th, 0.0)


class TestFreeEnergy:
    @pytest.mark.parametrize("p", [1.5, 2.0, 2.5])
    def test_uniform_density_at_lambda_zero(self, p):
        g = build_grid(3, 64)
        assert free_energy(g, ProblemParams(3, p), 0.0, np.ones(g.size)) == pytest.approx(p / (p + 1), rel=1e-12)

    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 0.5))
    def test_uniform_is_strict_minimizer_at_lambda_zero(self, seed, size):
        g = build_grid(2, 64)
        rng = np.random.default_rng(seed)
        rho = np.maximum(1.0 + size * rng.normal(size=g.size), 0.0)
        rho /= integrate(g, rho)
        assert free_energy(g, DISC, 0.0, rho) > free_energy(g, DISC, 0.0, np.ones(g.size))

    def test_branch_density_is_stationary(self, grid, points, rng):
        pt = points[0.5]
        for _ in range(5):
            d = mass_neutral(grid, rng)
            assert abs(directional_derivative(grid, DISC, pt.lam, pt.rho, d)) <= 1e-6 * np.sqrt(integrate(grid, d * d))

    @settings(max_examples=10)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 30.0))
    def test_gradient_matches_finite_difference(self, seed, lam):
        g = build_grid(2, 64)
        rng = np.random.default_rng(seed)
        rho = 0.5 + rng.random(g.size)
        rho /= integrate(g, rho)
        d = mass_neutral(g, rng)
        eps = 1e-6
        fd = (free_energy(g, DISC, lam, rho + eps * d) - free_energy(g, DISC, lam, rho - eps * d)) / (2 * eps)
        exact = directional_derivative(g, DISC, lam, rho, d)
        assert fd == pytest.approx(exact, rel=1e-6, abs=1e-8)


class TestProjection:
    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
    def test_matches_root_finding_oracle(self, seed, scale):
        g = build_grid(2, 48)
        y = scale * np.random.default_rng(seed).normal(size=g.size)
        out = project_simplex(g, y)
        assert np.all(out >= 0)
        assert integrate(g, out) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(out, bisection_projection(g, y), atol=1e-9)
        np.testing.assert_allclose(project_simplex(g, out), out, atol=1e-12)


class TestScaledStep:
    @settings(max_examples=20)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_feasible_and_descending(self, seed, s):
        g = build_grid(2, 48)
        rng = np.random.default_rng(seed)
        rho = np.maximum(rng.normal(size=g.size), 0.0) + 1e-3 * (rng.random(g.size) < 0.5)
        rho /= integrate(g, rho)
        grad = rng.normal(size=g.size)
        h = 0.5 + rng.random(g.size)
        d, theta = scaled_step(g, rho, grad, h, s)
        assert np.all(rho + d >= -1e-15)
        assert abs(integrate(g, d)) <= 1e-10 * max(1.0, np.abs(d).max())
        assert integrate(g, grad * d) <= 1e-12


class TestMinimize:
    def test_lambda_zero(self, grid):
        state = minimize_free_energy(grid, DISC, 0.0, 1.0 + np.cos(grid.r / grid.R))
        np.testing.assert_allclose(state.rho, 1.0, atol=1e-7)
        assert state.alpha == pytest.approx(1.0, abs=1e-7)

    @pytest.mark.parametrize("factor", [0.5, 1.5])
    def test_agrees_with_newton(self, grid, points, factor):
        pt = points[factor]
        best, states = multi_start(grid, DISC, pt.lam, warm=pt.rho)
        assert len(states) == 3
        for st_ in states:
            assert l1_distance(grid, st_.rho, pt.rho) <= 1e-3
            assert st_.stationarity <= 1e-8
            assert np.all(np.diff(st_.history) <= 1e-12)
        assert best.alpha_spread <= 1e-6
        assert best.alpha == pytest.approx(pt.alpha, abs=1e-6)
        if factor > 1:
            assert best.rho[-1] == 0.0
            r_plus = potential(grid, DISC, pt).r_plus
            assert np.all(best.rho[grid.r > r_plus + grid.h] == 0.0)

    def test_raises_when_iterations_run_out(self, grid, points):
        with pytest.raises(MinimizationError) as info:
            minimize_free_energy(grid, DISC, points[1.0].lam, np.ones(grid.size), max_iters=2)
        assert info.value.state is not None


class TestRecoverAlpha:
    def test_uniform_at_lambda_zero(self, grid):
        alpha, spread = recover_alpha(grid, DISC, 0.0, np.ones(grid.size))
        assert alpha == pytest.approx(1.0, abs=1e-14) and spread <= 1e-14

    @pytest.mark.parametrize("factor", FACTORS)
    def test_branch_input(self, grid, points, factor):
        pt = points[factor]
        alpha, spread = recover_alpha(grid, DISC, pt.lam, pt.rho, pt.psi)
        assert alpha == pytest.approx(pt.alpha, abs=1e-6)
        assert spread <= 1e-6


class TestSecondVariation:
    def test_constants(self, grid, points):
        A, _ = second_variation(grid, DISC, points[1.0], np.full(grid.size, 3.0))
        assert abs(A) <= 1e-14

    def test_lambda_zero_is_weighted_norm(self, grid, rng):
        pt = newton_solve(grid, DISC, 0.0)
        phi = rng.normal(size=grid.size)
        _, d = deflate(grid, potential(grid, DISC, pt), phi)
        A, _ = second_variation(grid, DISC, pt, phi)
        assert A == pytest.approx(integrate(grid, d * d), rel=1e-12)

    @pytest.mark.parametrize("factor", FACTORS)
    def test_nonnegative_on_random_functions(self, grid, points, factor):
        pt = points[factor]
        pot = potential(grid, DISC, pt)
        rng = np.random.default_rng(7)
        vals = [second_variation(grid, DISC, pt, phi, pot)[0] for phi in random_test_functions(grid, rng, 200)]
        assert min(vals) >= -1e-8

    @pytest.mark.parametrize("factor", FACTORS)
    def test_closing_identity(self, grid, points, factor):
        pt = points[factor]
        pot = potential(grid, DISC, pt)
        for pr in sector_eigs(grid, DISC, pt, 0, 3, pot=pot):
            A, _ = second_variation(grid, DISC, pt, pr.phi, pot)
            _, d = deflate(grid, pot, pr.phi)
            closing = integrate(grid, pot.V * d * d) * pr.sigma / (pot.tau + pr.sigma)
            assert A == pytest.approx(closing, rel=1e-6)

    def test_spectral_form_in_span(self, grid, points):
        pt = points[1.0]
        pot = potential(grid, DISC, pt)
        pairs = sector_eigs(grid, DISC, pt, 0, 4, pot=pot)
        phi = pairs[0].phi - 0.5 * pairs[1].phi + 0.25 * pairs[3].phi
        A, spectral = second_variation(grid, DISC, pt, phi, pot, pairs=pairs)
        assert spectral == pytest.approx(A, rel=1e-8)

    @pytest.mark.parametrize("factor", [0.5, 1.5])
    def test_taylor_ratio_tends_to_one(self, grid, points, factor):
        pt = points[factor]
        phi = np.cos(np.pi * grid.r / grid.R)
        ratios = taylor_check(grid, DISC, pt, phi)
        errs = np.abs(ratios - 1.0)
        assert errs[-1] < 1e-2
        assert errs[-1] <= errs[0]

    def test_gradient_is_constant_on_support(self, grid, points):
        pt = points[1.5]
        g = free_energy_gradient(grid, DISC, pt.lam, pt.rho, pt.psi)
        on = pt.rho > 0
        assert np.ptp(g[on]) <= 1e-8
        assert np.all(g[~on] >= g[on].max() - 1e-8)
