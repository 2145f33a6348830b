import itertools

import numpy as np
import pytest

from discrete_pop import random_population
from ivpolicy.data import Dataset
from ivpolicy.nuisance import NuisanceSet
from ivpolicy.weights import SCHEMES, WeightVector, compute_weights, flip_transform


def constant_nuisances(delta=0.5, fz=0.5, ey=0.0, pa_pos=0.8, pa_neg=None):
    """NuisanceSet with constant conditionals for hand-checkable weights."""
    if pa_neg is None:
        pa_neg = pa_pos - delta

    def p_a(L, z):
        z = np.broadcast_to(np.asarray(z, dtype=float), (np.atleast_2d(L).shape[0],))
        return np.where(z > 0, pa_pos, pa_neg)

    def p_z(L):
        return np.full(np.atleast_2d(L).shape[0], fz)

    def ey_fn(L, z):
        return np.full(np.atleast_2d(L).shape[0], ey)

    return NuisanceSet.from_functions(p_a, p_z, ey_fn)


def one_row(y, a, z):
    return Dataset([y], [a], [z], [[0.0]])


class TestComputeWeights:
    def test_iv_iw_a_hand_value(self):
        ns = constant_nuisances(delta=0.5, fz=0.5)
        wv = compute_weights(one_row(2.0, 1, 1), ns, "IV_IW_A")
        assert wv.weights[0] == pytest.approx(8.0)
        assert wv.anchors[0] == 1.0

    def test_iv_iw_a_sign_flips_with_za(self):
        ns = constant_nuisances(delta=0.5, fz=0.5)
        wv = compute_weights(one_row(2.0, -1, 1), ns, "IV_IW_A")
        assert wv.weights[0] == pytest.approx(-8.0)

    def test_iv_mr_reduces_to_iv_iw_when_corrections_vanish(self):
        # zero treatment-effect fit, zero outcome mean, 50/50 treatment mean
        def p_a(L, z):
            return np.full(np.atleast_2d(L).shape[0], 0.5)  # E[A|Z,L] = 0, delta floored

        def p_z(L):
            return np.full(np.atleast_2d(L).shape[0], 0.5)

        def ey(L, z):
            return np.zeros(np.atleast_2d(L).shape[0])

        ns = NuisanceSet.from_functions(p_a, p_z, ey, delta_floor=0.4)
        rng = np.random.default_rng(1)
        ds = Dataset(rng.standard_normal(50),
                     np.where(rng.uniform(size=50) < 0.5, 1.0, -1.0),
                     np.where(rng.uniform(size=50) < 0.5, 1.0, -1.0),
                     rng.standard_normal((50, 1)))
        mr = compute_weights(ds, ns, "IV_MR_A")
        iw = compute_weights(ds, ns, "IV_IW_A")
        np.testing.assert_allclose(mr.weights, iw.weights, atol=1e-12)
        np.testing.assert_array_equal(mr.anchors, iw.anchors)

    def test_complier_z_hand_value(self):
        ns = constant_nuisances(fz=0.5)
        for z in (1, -1):
            wv = compute_weights(one_row(1.0, 1, z), ns, "COMPLIER_Z")
            assert wv.weights[0] == pytest.approx(2.0)
            assert wv.anchors[0] == z

    def test_owl_uses_observed_arm_probability(self):
        ns = constant_nuisances(pa_pos=0.8, pa_neg=0.3)
        wv_t = compute_weights(one_row(1.0, 1, 1), ns, "OWL")
        assert wv_t.weights[0] == pytest.approx(1.0 / 0.8)
        wv_c = compute_weights(one_row(1.0, -1, 1), ns, "OWL")
        assert wv_c.weights[0] == pytest.approx(1.0 / 0.2)

    def test_anchor_assignment_by_scheme(self):
        ns = constant_nuisances()
        ds = one_row(1.0, 1, -1)
        for scheme in SCHEMES:
            wv = compute_weights(ds, ns, scheme)
            expected = 1.0 if scheme in ("IV_IW_A", "IV_MR_A", "OWL", "COMPLIER_A") else -1.0
            assert wv.anchors[0] == expected, scheme

    def test_unknown_scheme_rejected(self):
        ns = constant_nuisances()
        with pytest.raises(ValueError, match="IV_IW_A"):
            compute_weights(one_row(1.0, 1, 1), ns, "NOPE")

    def test_weight_magnitude_bound(self):
        # |w| <= max|Y| / (delta_floor * fz_floor) for the inverse-weighted scheme
        pop = random_population(np.random.default_rng(8), S=2, m=2, grid=8)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions(),
                                        delta_floor=0.05, fz_floor=0.05)
        wv = compute_weights(ds, ns, "IV_IW_A")
        bound = np.max(np.abs(ds.y)) / (0.05 * 0.05)
        assert np.all(np.abs(wv.weights) <= bound + 1e-12)


class TestFlipTransform:
    def test_negative_weight_flips_anchor(self):
        wv = WeightVector("IV_IW_A", np.array([-3.0]), np.array([1.0]))
        f = flip_transform(wv)
        assert f.weights[0] == 3.0 and f.anchors[0] == -1.0

    def test_nonnegative_weight_untouched(self):
        wv = WeightVector("IV_IW_A", np.array([2.0]), np.array([-1.0]))
        f = flip_transform(wv)
        assert f.weights[0] == 2.0 and f.anchors[0] == -1.0

    def test_zero_weight_sign_convention(self):
        wv = WeightVector("IV_IW_A", np.array([0.0]), np.array([-1.0]))
        f = flip_transform(wv)
        assert f.weights[0] == 0.0 and f.anchors[0] == -1.0  # sign(0) = +1

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        wv = WeightVector("OWL", rng.standard_normal(30),
                          np.where(rng.uniform(size=30) < 0.5, 1.0, -1.0))
        once = flip_transform(wv)
        twice = flip_transform(once)
        np.testing.assert_array_equal(once.weights, twice.weights)
        np.testing.assert_array_equal(once.anchors, twice.anchors)

    def test_objective_shift_constant_over_all_regimes_3rows(self):
        # enumerate all 2^3 label patterns: the flipped and raw objectives
        # differ by sum(max(-w, 0)) regardless of the regime
        rng = np.random.default_rng(4)
        w = rng.standard_normal(3) * 2
        anchors = np.array([1.0, -1.0, 1.0])
        f = flip_transform(WeightVector("OWL", w, anchors))
        shift = np.sum(np.maximum(-w, 0.0))
        for regime in itertools.product((1.0, -1.0), repeat=3):
            d = np.asarray(regime)
            raw = np.sum(w * (anchors != d))
            flipped = np.sum(f.weights * (f.anchors != d))
            assert flipped == pytest.approx(raw + shift, abs=1e-12)

    def test_iw_a_and_iw_z_flip_to_identical_problems(self):
        pop = random_population(np.random.default_rng(9), S=3, m=2, grid=8)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        fa = flip_transform(compute_weights(ds, ns, "IV_IW_A"))
        fz = flip_transform(compute_weights(ds, ns, "IV_IW_Z"))
        np.testing.assert_array_equal(fa.weights, fz.weights)
        np.testing.assert_array_equal(fa.anchors, fz.anchors)

    def test_mr_a_and_mr_z_flip_to_identical_problems(self):
        pop = random_population(np.random.default_rng(10), S=3, m=2, grid=8)
        ds = pop.expand_dataset()
        ns = NuisanceSet.from_functions(**pop.nuisance_functions())
        fa = flip_transform(compute_weights(ds, ns, "IV_MR_A"))
        fz = flip_transform(compute_weights(ds, ns, "IV_MR_Z"))
        np.testing.assert_allclose(fa.weights, fz.weights, rtol=0, atol=0)
        np.testing.assert_array_equal(fa.anchors, fz.anchors)


class TestMrUnionModelRanking:
    """The population objective built from the multiply robust weights picks
    the same best regime as the true treatment-effect criterion whenever one
    of the three nuisance configurations is correctly specified."""

    def _argmax_regimes(self, pop, objective):
        best, best_val = [], -np.inf
        for regime in pop.all_regimes():
            val = objective(regime)
            if val > best_val + 1e-12:
                best, best_val = [regime], val
            elif abs(val - best_val) <= 1e-12:
                best.append(regime)
        return best

    def _mr_objective(self, ds, ns, pop):
        wv = compute_weights(ds, ns, "IV_MR_A")

        def objective(regime):
            actions = regime[pop.stratum_of(ds.L)]
            return float(np.mean(wv.weights * (ds.a == actions)))

        return objective

    def _truth_objective(self, pop):
        cate = pop.cate_true()

        def objective(regime):
            return float(np.sum(pop.pL * cate * regime))

        return objective

    @pytest.mark.parametrize("model", ["M1", "M2", "M3"])
    def test_argmax_matches_truth_under_each_configuration(self, model):
        rng = np.random.default_rng({"M1": 51, "M2": 52, "M3": 53}[model])
        pop = random_population(rng, S=3, m=2, V=2, grid=8)
        ds = pop.expand_dataset()
        fns = pop.nuisance_functions()

        wrong_pz = lambda L: np.full(np.atleast_2d(L).shape[0], 0.37)
        # sign-flipping the outcome model makes the implied effect estimate
        # point the wrong way, so the configuration is exercised sharply
        wrong_ey = lambda L, z: fns["ey_given_lz"](L, z) * -0.7 + 0.3

        if model == "M1":
            # delta and f(Z|L) correct; outcome models wrong
            ns = NuisanceSet.from_functions(fns["p_a_given_lz"], fns["p_z_given_l"], wrong_ey)
        elif model == "M2":
            # f(Z|L) and the treatment-effect ratio correct, the rest wrong:
            # halving both the treatment contrast and the outcome contrast
            # leaves the ratio right while each conditional is wrong
            def pa_scaled(L, z):
                return np.clip(0.5 + (fns["p_a_given_lz"](L, z) - 0.5) * 0.5, 0.01, 0.99)

            def ey_scaled(L, z):
                return fns["ey_given_lz"](L, z) * 0.5 + 0.1

            ns = NuisanceSet.from_functions(pa_scaled, fns["p_z_given_l"], ey_scaled)
        else:
            # all outcome-side models correct but f(Z|L) wrong
            ns = NuisanceSet.from_functions(fns["p_a_given_lz"], wrong_pz, fns["ey_given_lz"])

        mr_best = self._argmax_regimes(pop, self._mr_objective(ds, ns, pop))
        truth_best = self._argmax_regimes(pop, self._truth_objective(pop))
        assert len(truth_best) == 1
        assert any(np.array_equal(b, truth_best[0]) for b in mr_best)
        assert len(mr_best) == 1
