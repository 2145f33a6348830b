import numpy as np
import pytest

from discrete_pop import random_population
from ivpolicy.data import Dataset
from ivpolicy.nuisance import (
    NuisanceSet,
    RankDeficientError,
    fit_linear_ols,
    fit_logistic_irls,
    fit_from_text,
    g_estimate_delta,
    g_estimate_gamma,
)
from ivpolicy.seeding import rng_from
from ivpolicy.synth import ScenarioSpec, generate_scenario, q_contrast


class TestLogisticIrls:
    def test_label_flip_symmetry_gives_zero(self):
        x = np.array([[0.3], [-1.2], [2.0], [0.3], [-1.2], [2.0]])
        y = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        fit = fit_logistic_irls(x, y)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-12)
        assert fit.converged

    def test_recovers_generating_coefficients(self):
        rng = rng_from(21)
        n = 100_000
        x = rng.uniform(-2, 2, size=(n, 1))
        p = 1.0 / (1.0 + np.exp(-(1.0 + 2.0 * x[:, 0])))
        y = np.where(rng.uniform(size=n) < p, 1.0, -1.0)
        fit = fit_logistic_irls(x, y)
        assert fit.converged
        np.testing.assert_allclose(fit.coefficients, [1.0, 2.0], atol=0.05)

    def test_complete_separation_flagged(self):
        x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        fit = fit_logistic_irls(x, y)
        assert fit.separation
        assert not fit.converged

    def test_collinear_design_named(self):
        rng = rng_from(22)
        x = rng.standard_normal((50, 1))
        X = np.column_stack([x, 2.0 * x])
        with pytest.raises(RankDeficientError, match="x2"):
            fit_logistic_irls(X, np.sign(x[:, 0]))

    def test_probabilities_strictly_inside_unit_interval(self):
        fit = fit_logistic_irls(np.array([[0.0], [1.0]]), np.array([1.0, -1.0]))
        p = fit.predict_proba(np.array([[1e6], [-1e6]]))
        assert np.all(p > 0) and np.all(p < 1)


class TestLinearOls:
    def test_exact_interpolation(self):
        x = np.array([[0.0], [1.0], [2.0]])
        fit = fit_linear_ols(x, 2.0 * x[:, 0])
        np.testing.assert_allclose(fit.coefficients, [0.0, 2.0], atol=1e-12)

    def test_constant_target(self):
        x = np.array([[0.0], [1.0], [2.0]])
        fit = fit_linear_ols(x, np.full(3, 3.5))
        np.testing.assert_allclose(fit.coefficients, [3.5, 0.0], atol=1e-12)

    def test_noisy_recovery(self):
        rng = rng_from(23)
        x = rng.uniform(-1, 1, size=(10_000, 1))
        y = 1.0 + 3.0 * x[:, 0] + rng.standard_normal(10_000)
        fit = fit_linear_ols(x, y)
        np.testing.assert_allclose(fit.coefficients, [1.0, 3.0], atol=0.05)

    def test_residual_orthogonality(self):
        rng = rng_from(24)
        X = rng.standard_normal((200, 3))
        y = rng.standard_normal(200)
        fit = fit_linear_ols(X, y)
        resid = y - fit.predict(X)
        Xd = np.column_stack([np.ones(200), X])
        rel = np.abs(Xd.T @ resid) / (np.linalg.norm(y) * np.linalg.norm(Xd, axis=0))
        assert np.all(rel < 1e-8)

    def test_rank_deficiency_rejected(self):
        x = np.ones((5, 1))  # duplicates the intercept column
        with pytest.raises(RankDeficientError):
            fit_linear_ols(x, np.arange(5.0))

    def test_serialization_round_trip(self):
        fit = fit_linear_ols(np.array([[0.0], [1.0], [3.0]]), np.array([1.0, 2.0, 4.0]))
        back = fit_from_text(fit.to_text())
        np.testing.assert_array_equal(back.coefficients, fit.coefficients)
        assert back.design == fit.design


class TestNuisanceSetDerived:
    def _manual_ns(self, pa_pos, pa_neg, ey_pos=None, ey_neg=None, floor=0.01):
        def p_a(L, z):
            z = np.broadcast_to(np.asarray(z, dtype=float), (np.atleast_2d(L).shape[0],))
            return np.where(z > 0, pa_pos, pa_neg)

        def p_z(L):
            return np.full(np.atleast_2d(L).shape[0], 0.5)

        def ey(L, z):
            z = np.broadcast_to(np.asarray(z, dtype=float), (np.atleast_2d(L).shape[0],))
            return np.where(z > 0, ey_pos, ey_neg)

        return NuisanceSet.from_functions(p_a, p_z, ey, delta_floor=floor)

    def test_delta_arithmetic(self):
        ns = self._manual_ns(0.8, 0.3)
        assert ns.delta(np.zeros((1, 2)))[0] == pytest.approx(0.5)

    def test_delta_truncated_at_floor(self):
        ns = self._manual_ns(0.6, 0.6, floor=0.01)
        assert ns.delta(np.zeros((1, 2)))[0] == 0.01

    def test_cate_ratio(self):
        ns = self._manual_ns(0.8, 0.3, ey_pos=1.0, ey_neg=0.5)
        assert ns.cate(np.zeros((1, 2)))[0] == pytest.approx(1.0)
        ns2 = self._manual_ns(0.8, 0.3, ey_pos=0.7, ey_neg=0.7)
        assert ns2.cate(np.zeros((1, 2)))[0] == 0.0

    def test_scenario_average_delta_near_paper(self):
        ds = generate_scenario(ScenarioSpec(1, 100_000, seed=31), rng_from(31, label="s")).observable()
        ns = NuisanceSet.fit(ds)
        assert abs(float(np.mean(ns.delta(ds.L))) - 0.66) < 0.02

    def test_cate_sign_recovers_true_rule_region(self):
        ds = generate_scenario(ScenarioSpec(1, 100_000, seed=32), rng_from(32, label="s")).observable()
        ns = NuisanceSet.fit(ds)
        grid = rng_from(33).uniform(-1, 1, size=(2000, 5))
        agree = np.mean(np.sign(ns.cate(grid)) == np.sign(q_contrast(grid)))
        assert agree >= 0.99

    def test_cate_exact_on_saturated_discrete_population(self):
        pop = random_population(rng_from(34), S=2, m=2, V=2, grid=8)
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        got = ns.cate(pop.L_support)
        np.testing.assert_allclose(got, pop.cate_true(), atol=1e-9)

    def test_orientation_flip(self):
        # anti-oriented instrument: relabeled so delta comes out positive
        rng = rng_from(35)
        n = 4000
        L = rng.uniform(-1, 1, size=(n, 1))
        z = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        p = 1.0 / (1.0 + np.exp(-(-1.5 * z)))  # A follows -Z
        a = np.where(rng.uniform(size=n) < p, 1.0, -1.0)
        ds = Dataset(rng.standard_normal(n), a, z, L)
        ns = NuisanceSet.fit(ds)
        assert ns.orient == -1
        assert float(np.mean(ns.delta(ds.L))) > 0
        assert ns.marginal_compliance(ds) > 0

    def test_binary_outcome_uses_logistic(self):
        rng = rng_from(36)
        n = 5000
        L = rng.uniform(-1, 1, size=(n, 1))
        z = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        a = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        y = (rng.uniform(size=n) < 0.3).astype(float)
        ds = Dataset(y, a, z, L)
        ns = NuisanceSet.fit(ds)
        ey = ns.mean_y(ds.L, 1)
        assert np.all((ey > 0) & (ey < 1))
        from ivpolicy.nuisance import LogisticFit
        assert isinstance(ns.fits["y_given_lz"], LogisticFit)


class TestGEstimation:
    def test_no_instrument_effect_gives_zero(self):
        pop = random_population(rng_from(41), S=2, m=2, V=2, grid=8)
        pop.pA[:, :, 1] = pop.pA[:, :, 0]  # A independent of Z given (L, U)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        _, beta = g_estimate_delta(ds, ns)
        np.testing.assert_allclose(beta, 0.0, atol=1e-9)

    def test_saturated_population_exact(self):
        pop = random_population(rng_from(42), S=2, m=2, V=2, grid=8)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        delta_fn, _ = g_estimate_delta(ds, ns, psi_basis=pop.indicator_basis())
        np.testing.assert_allclose(delta_fn(pop.L_support), pop.delta_true(), atol=1e-6)

    def test_double_robustness_wrong_treatment_mean(self):
        # E[A|Z=-1, L] deliberately wrong, instrument propensity correct
        pop = random_population(rng_from(43), S=2, m=2, V=2, grid=8)
        ds = pop.expand_dataset()
        fns = pop.nuisance_functions()
        wrong_pa = lambda L, z: np.full(np.atleast_2d(L).shape[0], 0.37)
        ns = NuisanceSet.from_functions(wrong_pa, fns["p_z_given_l"], fns["ey_given_lz"])
        delta_fn, _ = g_estimate_delta(ds, ns, psi_basis=pop.indicator_basis())
        np.testing.assert_allclose(delta_fn(pop.L_support), pop.delta_true(), atol=1e-6)

    def test_double_robustness_wrong_propensity(self):
        # instrument propensity deliberately wrong, E[A|Z=-1, L] correct
        pop = random_population(rng_from(44), S=2, m=2, V=2, grid=8)
        ds = pop.expand_dataset()
        fns = pop.nuisance_functions()
        wrong_pz = lambda L: np.full(np.atleast_2d(L).shape[0], 0.41)
        ns = NuisanceSet.from_functions(fns["p_a_given_lz"], wrong_pz, fns["ey_given_lz"])
        delta_fn, _ = g_estimate_delta(ds, ns, psi_basis=pop.indicator_basis())
        np.testing.assert_allclose(delta_fn(pop.L_support), pop.delta_true(), atol=1e-6)

    def test_gamma_mean_zero_target_gives_zero(self):
        # force A Y 1{A=D} to be conditionally mean zero by symmetric outcomes
        pop = random_population(rng_from(45), S=2, m=1, V=2, grid=8)
        pop.y_vals = np.array([1.0, -1.0])
        pop.pY[:, :, :, :] = 0.5  # Y symmetric given anything
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        from ivpolicy.data import AffineRule
        rule = AffineRule(0.1, np.zeros(1))
        _, eta = g_estimate_gamma(ds, rule, ns, lambda L: np.zeros(np.atleast_2d(L).shape[0]),
                                  psi_basis=pop.indicator_basis())
        np.testing.assert_allclose(eta, 0.0, atol=1e-9)

    def test_gamma_targets_regime_outcome_mean(self):
        # with correct auxiliaries, gamma(l) = E[Y under rule | l] exactly
        from ivpolicy.data import AffineRule
        pop = random_population(rng_from(46), S=3, m=2, V=2, grid=8)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        rule = AffineRule(0.05, np.ones(1))
        actions = np.where(rule.decision_values(pop.L_support) >= 0, 1.0, -1.0)
        # correct gamma-prime: population regression function E[AYI | Z=-1, L]
        cond = pop.pY @ pop.y_vals
        pa_neg = pop.pA[:, :, 1]
        m_neg = np.sum(pop.pU * np.where(actions[:, None] > 0, pa_neg * cond[:, :, 0],
                                         -(1 - pa_neg) * cond[:, :, 1]), axis=1)

        def gamma_prime(L):
            return m_neg[pop.stratum_of(L)]

        gamma_fn, _ = g_estimate_gamma(ds, rule, ns, gamma_prime,
                                       psi_basis=pop.indicator_basis())
        np.testing.assert_allclose(gamma_fn(pop.L_support), pop.gamma_true(actions), atol=1e-6)

    def test_gamma_double_robustness_wrong_gamma_prime(self):
        from ivpolicy.data import AffineRule
        pop = random_population(rng_from(47), S=2, m=2, V=2, grid=8)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        rule = AffineRule(-0.2, np.ones(1))
        actions = np.where(rule.decision_values(pop.L_support) >= 0, 1.0, -1.0)
        wrong_gamma_prime = lambda L: np.full(np.atleast_2d(L).shape[0], 0.3)
        gamma_fn, _ = g_estimate_gamma(ds, rule, ns, wrong_gamma_prime,
                                       psi_basis=pop.indicator_basis())
        np.testing.assert_allclose(gamma_fn(pop.L_support), pop.gamma_true(actions), atol=1e-6)
