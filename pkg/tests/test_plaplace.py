from fractions import Fraction

import numpy as np
import pytest

from fraflow.plaplace import (
    AssumptionProfile,
    BisectionPremiseError,
    ExperimentSpec,
    Grid,
    amplitude_bisection,
    assumption_profile,
    classify_regime,
    dirichlet_p_energy,
    discrete_p_laplacian,
    initial_profile,
    q_potential,
    run_experiment,
)
from fraflow.solver import SolverConfig


class TestGrid:
    def test_spacing_and_weight(self):
        g = Grid(1, 3)
        assert g.h == 0.25
        assert g.space.weight == 0.25
        g2 = Grid(2, 3)
        assert g2.npoints == 9
        assert g2.space.weight == pytest.approx(0.0625)

    def test_rejects_bad(self):
        with pytest.raises(ValueError):
            Grid(3, 4)
        with pytest.raises(ValueError):
            Grid(1, 1)


class TestDiscretePLaplacian:
    def test_zero_state(self):
        g = Grid(1, 8)
        np.testing.assert_array_equal(discrete_p_laplacian(g, np.zeros(8), 3.0), 0.0)

    def test_p2_eigenfunction(self):
        # -Delta sin(pi x) = pi^2 sin(pi x) + O(h^2)
        g = Grid(1, 64)
        x = g.coords()[0]
        u = np.sin(np.pi * x)
        lap = discrete_p_laplacian(g, u, 2.0)
        rel = np.max(np.abs(-lap - np.pi**2 * u)) / np.pi**2
        assert rel <= 2.5 * g.h**2 / 2

    @pytest.mark.parametrize("dim,m", [(1, 16), (2, 8)])
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
    def test_gradient_consistency(self, dim, m, p, rng):
        # -Delta_p is the H-gradient of the energy: central-difference check
        grid = Grid(dim, m)
        phi = dirichlet_p_energy(grid, p)
        u = rng.uniform(-1.0, 1.0, grid.npoints)
        analytic = grid.h**dim * (-discrete_p_laplacian(grid, u, p))  # Euclidean gradient
        step = 1e-6
        fd = np.zeros_like(u)
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = step
            fd[i] = (phi.value(u + e) - phi.value(u - e)) / (2 * step)
        rel = np.linalg.norm(fd - analytic) / np.linalg.norm(analytic)
        assert rel <= 1e-6

    def test_flux_regularization_insensitivity(self, rng):
        # eps enters only through (g^2 + eps^2)^{(p-2)/2}: results for
        # p < 2 must be stable under eps -> 100 eps at nonzero gradients
        g = Grid(1, 8)
        u = rng.uniform(0.5, 1.0, 8)
        a = discrete_p_laplacian(g, u, 1.5, eps=1e-12)
        b = discrete_p_laplacian(g, u, 1.5, eps=1e-10)
        assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


class TestEnergies:
    def test_zero_states(self):
        g = Grid(1, 4)
        assert dirichlet_p_energy(g, 3.0).value(np.zeros(4)) == pytest.approx(0.0, abs=1e-15)
        assert q_potential(g, 4.0).value(np.zeros(4)) == pytest.approx(0.0)

    def test_dirichlet_energy_fixture(self):
        # hand evaluation, frozen: m=2, h=1/3, w=(1,1), p=2; faces carry
        # gradients (3, 0, -3), so phi1 = (h/p) * (9 + 0 + 9) = 3
        g = Grid(1, 2)
        assert dirichlet_p_energy(g, 2.0).value(np.ones(2)) == pytest.approx(3.0, rel=1e-12)

    def test_q2_potential_is_quadratic_norm(self, rng):
        g = Grid(1, 8)
        w = rng.standard_normal(8)
        phi2 = q_potential(g, 2.0)
        assert phi2.value(w) == pytest.approx(0.5 * g.space.inner(w, w))

    def test_p_dirichlet_prox_residual(self, rng):
        g = Grid(1, 8)
        phi = dirichlet_p_energy(g, 3.0)
        w = rng.standard_normal(8)
        z = phi.prox(w, 0.5, tol=1e-10)
        res = (z - w) / 0.5 + phi.gradient(z)
        assert phi.space.norm(res) <= 1e-8


# hand-computed classification fixture over (p, q, d); for d = 1 every
# p > 1 exceeds 2d/(d+2) = 2/3 and p* = infinity, for d = 3 the threshold
# is 6/5 and p* = 3p/(3-p) when p < 3
REGIME_FIXTURE = [
    (1.5, 1.5, 1, "local_existence"),  # p = q
    (1.5, 2.0, 1, "small_data_global"),  # p < q < inf
    (2.0, 1.5, 1, "global"),  # p > q
    (3.0, 6.0, 1, "small_data_global"),
    (2.0, 2.0, 1, "local_existence"),
    (1.5, 6.0, 1, "small_data_global"),
    (1.5, 2.0, 3, "small_data_global"),  # p* = 3, q = 2 < 3
    (1.5, 4.0, 3, "outside_theory"),  # q = 4 > p* = 3
    (2.0, 6.0, 3, "small_data_global_critical"),  # q = p* = 6
    (2.0, 4.0, 3, "small_data_global"),
    (3.0, 2.0, 3, "global"),  # (d - p)+ = 0
    (3.0, 1.5, 3, "global"),
]


class TestClassifyRegime:
    @pytest.mark.parametrize("p,q,d,verdict", REGIME_FIXTURE)
    def test_fixture_table(self, p, q, d, verdict):
        assert classify_regime(p, q, d).verdict == verdict

    def test_exponent_values(self):
        r = classify_regime(2, 4, 3)
        assert r.p_star == 6
        assert r.two_star == 6
        assert r.r_cz == 6
        r2 = classify_regime(3, 2, 3)
        assert r2.p_star is None  # (d-p)+ = 0 -> +infinity

    def test_theta_balance_example(self):
        # d=3, p=2, q=5: theta = 1/8 from the interpolation balance
        r = classify_regime(2, 5, 3)
        assert r.theta == Fraction(1, 8)
        assert r.theta_ratio == Fraction(1, 2)

    def test_theta_equivalence_exact_scan(self):
        # theta (q-1)/(p-1) < 1 iff q < p*, checked in exact rational
        # arithmetic over the admissible region (>= 200 triples)
        checked = 0
        for d in (3, 4, 5):
            dd = Fraction(d)
            low = 2 * dd / (dd + 2)
            for pnum in range(1, 30):
                p = low + Fraction(pnum, 31) * (dd - low)
                if p <= 1:
                    continue
                p_star = dd * p / (dd - p)
                # q spanning both sides of p* inside the active window
                for qk in range(1, 9):
                    q = p_star / 2 + 1 + Fraction(qk, 8) * (p_star - p_star / 2 - 1) * Fraction(12, 10)
                    if q <= max(p, 1):
                        continue
                    rep = classify_regime(p, q, dd)
                    if rep.theta is None:
                        continue
                    checked += 1
                    assert (rep.theta_ratio < 1) == (q < p_star), (p, q, d)
        assert checked >= 200

    def test_rejects_bad_exponents(self):
        with pytest.raises(ValueError):
            classify_regime(1.0, 2.0, 3)


class TestAssumptionProfile:
    def test_ratio_vanishes_iff_q_above_p(self):
        # subcritical growth branch
        assert assumption_profile(2, 4, 3).ratio_vanishes is True
        assert assumption_profile(2.5, 2, 3).ratio_vanishes is False
        # interpolation branch: 2(q-1) > p*
        prof = assumption_profile(2, 5, 3)
        assert prof.big_m2_exponent is not None
        assert prof.ratio_vanishes is True

    def test_m2_exponent_matches_coercivity(self):
        prof = assumption_profile(3, 2, 3)
        assert prof.m2_exponent == Fraction(2, 3)  # (p-1)/p

    def test_fit_hooks(self):
        r = np.array([0.5, 1.0, 2.0])
        lower = AssumptionProfile.fit_lower_scale(r, 2.0 * r**0.5, Fraction(1, 2))
        assert lower == pytest.approx(2.0)
        upper = AssumptionProfile.fit_upper_scale(r, 3.0 * r**2, Fraction(2))
        assert upper == pytest.approx(3.0)


class TestProfiles:
    def test_zero_profile(self):
        g = Grid(1, 8)
        np.testing.assert_array_equal(initial_profile(g, "zero", 5.0), 0.0)

    def test_sine_amplitude(self):
        g = Grid(1, 15)
        u = initial_profile(g, "sine", 2.0)
        assert np.max(u) == pytest.approx(2.0, rel=1e-2)

    def test_plateau_flat_top(self):
        g = Grid(1, 31)
        u = initial_profile(g, "plateau", 1.5)
        assert np.max(u) == pytest.approx(1.5)
        assert np.sum(u == 1.5) > 5  # genuinely flat in the middle

    def test_unknown_profile_rejected(self):
        with pytest.raises(ValueError):
            initial_profile(Grid(1, 4), "bump", 1.0)


class TestExperiments:
    def test_zero_data_stays_zero(self):
        spec = ExperimentSpec(p=2.0, q=4.0, alpha=0.5, grid=Grid(1, 8), amplitude=0.0, u0_profile="zero", steps=32)
        res = run_experiment(spec, keep_trajectory=True)
        assert res.completed
        np.testing.assert_array_equal(res.trajectory.states, 0.0)

    def test_blowup_and_monotonicity(self):
        spec = ExperimentSpec(p=2.0, q=4.0, alpha=0.5, grid=Grid(1, 16), steps=128)
        blown = run_experiment(spec.with_amplitude(8.0))
        assert not blown.completed
        assert blown.t_star is not None
        later = run_experiment(spec.with_amplitude(16.0))
        assert not later.completed
        assert later.t_star <= blown.t_star + 1e-12  # doubled amplitude blows no later

    def test_small_amplitude_completes(self):
        spec = ExperimentSpec(p=2.0, q=4.0, alpha=0.5, grid=Grid(1, 16), steps=128)
        res = run_experiment(spec.with_amplitude(0.5))
        assert res.completed
        assert res.energy_ratio is not None

    def test_bisection_bracket(self):
        spec = ExperimentSpec(p=2.0, q=4.0, alpha=0.5, grid=Grid(1, 16), steps=128)
        br = amplitude_bisection(spec, 0.5, 16.0)
        assert br.ratio <= 1.1
        assert br.low_result.completed
        assert not br.high_result.completed
        assert br.tag["m"] == 16

    def test_bisection_premise_rejected(self):
        spec = ExperimentSpec(p=2.0, q=4.0, alpha=0.5, grid=Grid(1, 16), steps=128)
        with pytest.raises(BisectionPremiseError):
            amplitude_bisection(spec, 0.5, 0.5)  # degenerate: completes twice

    def test_experiment_row(self):
        spec = ExperimentSpec(p=2.0, q=4.0, alpha=0.5, grid=Grid(1, 8), amplitude=0.25, steps=32)
        row = run_experiment(spec).to_row()
        assert row["verdict"] == "completed"
        assert row["m"] == 8
        assert row["t_star"] == ""
