import numpy as np
import pytest

from fracns.asymptotics import (
    build_kernel,
    bv_polynomial,
    bv_scalar_test,
    caccioppoli_energy,
    fibonacci_sphere,
    fit_decay_exponent,
    nonexistence_certificate,
    profile_decomposition,
    radial_profile,
)
from fracns.errors import EmptyShell, InvalidAlpha, InvalidRadius
from fracns.spectral import RealVectorField, to_real


def oseen_type_oracle(dirs):
    """Closed-form unit-sphere kernel for classical dissipation (alpha = 2):
    -d_k G * delta_ij - d_i d_j d_k N, G = 1/(4 pi |x|), N = -|x|/(8 pi)."""
    n = len(dirs)
    out = np.zeros((n, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                d_ij = float(i == j)
                d_jk = float(j == k)
                d_ik = float(i == k)
                out[:, i, j, k] = (
                    d_ij * dirs[:, k]
                    - d_jk * dirs[:, i]
                    - d_ik * dirs[:, j]
                    + 3 * dirs[:, i] * dirs[:, j] * dirs[:, k]
                ) / (8 * np.pi)
    return out


@pytest.fixture(scope="module")
def kernel15():
    return build_kernel(1.5, refinement_grid_n=96)


class TestKernel:
    def test_alpha_range(self):
        with pytest.raises(InvalidAlpha):
            build_kernel(0.9)
        with pytest.raises(InvalidAlpha):
            build_kernel(4.0)

    def test_homogeneity_exact(self, kernel15):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 3))
        m1 = kernel15.evaluate(2.0 * x)
        m0 = kernel15.evaluate(x)
        scale = np.max(np.abs(m0))
        assert np.max(np.abs(m1 - 2.0 ** (1.5 - 4.0) * m0)) < 1e-12 * scale

    def test_classical_closed_form(self):
        kernel = build_kernel(2.0, refinement_grid_n=96)
        dirs = fibonacci_sphere(500)
        got = kernel.evaluate_directions(dirs)
        want = oseen_type_oracle(dirs)
        err = np.max(np.abs(got - want)) / np.max(np.abs(want))
        assert err < 0.02

    def test_bound_constant_holds(self, kernel15):
        ker = kernel15
        sphere_frob = np.sqrt(np.sum(ker.sphere_values**2, axis=(1, 2, 3)))
        assert np.max(sphere_frob) == pytest.approx(ker.bound_constant, rel=1e-12)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((100, 3))
        r = np.linalg.norm(x, axis=1)
        vals = ker.evaluate(x)
        frob = np.sqrt(np.sum(vals**2, axis=(1, 2, 3)))
        assert np.all(frob <= ker.bound_constant * r ** (1.5 - 4.0) * (1 + 1e-12))

    def test_bound_constant_refinement_stable(self):
        c1 = build_kernel(1.5, refinement_grid_n=64).bound_constant
        c2 = build_kernel(1.5, refinement_grid_n=128).bound_constant
        assert abs(c2 - c1) / c2 < 0.10

    def test_scalar_moment_annihilates_profile(self, kernel15):
        dirs = fibonacci_sphere(300)
        prof = kernel15.contract_directions(dirs, 4.2 * np.eye(3))
        assert np.max(np.abs(prof)) < 1e-9 * kernel15.bound_constant

    def test_nonscalar_moment_gives_floor(self, kernel15):
        dirs = fibonacci_sphere(300)
        M = np.diag([2.0, 1.0, 1.0])
        prof = np.linalg.norm(kernel15.contract_directions(dirs, M), axis=1)
        frac = np.mean(prof > 0.01 * np.max(prof))
        assert frac > 0.01


class TestDecayFit:
    def test_synthetic_smooth_profile(self):
        radii = np.linspace(40.0, 120.0, 24)
        values = 1.0 / (1.0 + radii) ** 2.5
        prof = fit_decay_exponent((radii, values))
        assert prof.fitted_exponent == pytest.approx(2.5, abs=0.05)

    def test_lattice_power_law_exact(self, grid32):
        g = grid32
        r = g.radius_from(g.center)
        vals = np.where(r > 0, np.maximum(r, 1e-9) ** -3.0, 0.0)
        prof = radial_profile(vals, g, statistic="gmean")
        prof = fit_decay_exponent(prof)
        assert prof.fitted_exponent == pytest.approx(3.0, abs=1e-3)

    def test_needs_eight_bins(self):
        radii = np.linspace(1.0, 2.0, 5)
        with pytest.raises(EmptyShell):
            fit_decay_exponent((radii, radii**-2))

    def test_nonpositive_values_rejected(self):
        radii = np.linspace(1.0, 2.0, 10)
        vals = radii**-2
        vals[3] = 0.0
        with pytest.raises(EmptyShell):
            fit_decay_exponent((radii, vals))

    def test_window_inside_quarter_box(self, grid32):
        with pytest.raises(InvalidRadius):
            radial_profile(np.ones((32, 32, 32)), grid32, window=(1.0, 10.0))


class TestProfileDecomposition:
    def test_trivial_remainder(self, grid32):
        g = grid32
        rng = np.random.default_rng(3)
        u = RealVectorField(g, rng.standard_normal((3, 32, 32, 32)))
        kernel = build_kernel(1.5, refinement_grid_n=64)
        prof = profile_decomposition(u, u, np.zeros((3, 3)), kernel)
        assert np.all(prof.bin_values == 0.0)


class TestBrandoleseVigneron:
    def test_identity_annihilated(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            xi = rng.standard_normal(3)
            i = rng.integers(0, 3)
            q = bv_polynomial(np.eye(3), xi, i)
            assert abs(q) < 1e-12 * np.linalg.norm(xi) ** 3

    def test_scaled_identity_annihilated(self):
        xi = np.array([0.3, -1.2, 0.5])
        for i in range(3):
            assert abs(bv_polynomial(5.0 * np.eye(3), xi, i)) < 1e-11

    def test_diag123_detected(self):
        A = np.diag([1.0, 2.0, 3.0])
        t = np.linspace(-1, 1, 10)
        found = 0.0
        for x in t:
            for y in t:
                for z in t:
                    xi = np.array([x, y, z])
                    if np.linalg.norm(xi) < 1e-9:
                        continue
                    found = max(found, abs(bv_polynomial(A, xi, 0)))
        assert found > 1e-6

    def test_scalar_test_basic(self):
        assert bv_scalar_test(3.7 * np.eye(3))
        assert not bv_scalar_test(np.diag([1.0, 2.0, 3.0]))

    def test_equivalence_with_direct_test(self):
        rng = np.random.default_rng(5)
        agree = 0
        for trial in range(1000):
            if trial % 3 == 0:
                A = float(rng.standard_normal()) * np.eye(3)
            elif trial % 3 == 1:
                B = rng.standard_normal((3, 3))
                A = B + B.T
            else:
                B = rng.standard_normal((3, 3)) * 1e-8
                A = np.eye(3) + B + B.T
            direct = (
                np.linalg.norm(A - (np.trace(A) / 3.0) * np.eye(3))
                < 1e-9 * max(np.linalg.norm(A), 1e-300)
                or np.linalg.norm(A) == 0.0
            )
            agree += bv_scalar_test(A) == direct
        assert agree == 1000


class TestCertificate:
    def test_zero_solution_no_certificate(self, grid32, kernel15):
        from fracns.solver import SolverConfig, solve_steady
        from fracns.spectral import FracParams, zero_spectral

        sol = solve_steady(zero_spectral(grid32), SolverConfig(FracParams(1.5)))
        cert = nonexistence_certificate(sol, kernel15)
        assert cert["deviation"] == 0.0
        assert cert["leading_lower_bound"] == 0.0
        assert not cert["affirmative"]


class TestCaccioppoli:
    def test_zero_field(self, grid32):
        u = RealVectorField(grid32, np.zeros((3, 32, 32, 32)))
        out = caccioppoli_energy(u, np.zeros((32, 32, 32), complex), 3.0, 1.8)
        assert out["local_energy"] == 0.0
        assert out["flux_term"] == 0.0
        assert out["commutator_term"] == 0.0

    def test_radius_cap(self, grid32):
        u = RealVectorField(grid32, np.zeros((3, 32, 32, 32)))
        with pytest.raises(InvalidRadius):
            caccioppoli_energy(u, np.zeros((32, 32, 32), complex), 5.0, 1.8)

    def test_disjoint_support_flux_vanishes(self, grid32):
        # u supported inside B_{R/4} never touches grad(phi_R)
        g = grid32
        R = 4.0
        r = g.radius_from(g.center)
        bump = np.where(r < R / 4 - 2 * g.spacing, np.cos(np.pi * r / (R / 2)) ** 2, 0.0)
        u = RealVectorField(g, np.stack([bump, 0.5 * bump, -bump]))
        p = np.zeros((32, 32, 32), complex)
        out = caccioppoli_energy(u, p, R, 1.8)
        assert abs(out["flux_term"]) < 1e-10

    def test_energy_balance_on_solution(self, small_solution):
        # momentum identity: local energy <= flux + commutator + force work
        # + quadrature slack, checked on a converged steady state
        g = small_solution["grid"]
        sol = small_solution["solution"]
        f = small_solution["force"]
        alpha = small_solution["config"].params.alpha
        u = to_real(sol.velocity)
        R = g.box_length / 4
        out = caccioppoli_energy(u, sol.pressure, R, alpha)

        from fracns.asymptotics import _cutoff

        phi = _cutoff(g.radius_from(g.center), R)
        fr = to_real(f)
        force_work = g.cell_volume * float(np.sum(phi * np.sum(fr.data * u.data, axis=0)))
        slack_budget = 1e-6 * max(out["local_energy"], 1e-300) + 1e-12
        assert (
            out["local_energy"]
            <= out["flux_term"] + out["commutator_term"] + force_work + slack_budget
        )
