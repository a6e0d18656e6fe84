import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import AA_BB, AB_BA, ASYM3
from duel import (TrainableDenoiser, aoarm_elbo_exhaustive, elbo_exhaustive_mc_mean,
                  elbo_loss_gradient, elbo_loss_mc, fit_tabular, load_denoiser, save_denoiser,
                  train)
from duel.denoiser import draw_mask, mask_count_weight
from duel.errors import EmptyCorpus, InvalidToken, LengthMismatch
from reference import conditional_rows, joint_from_corpus

M2 = 2


class TestFitTabular:
    def test_joint_by_counting(self, aa_bb):
        assert aa_bb.joint_table() == {(0, 0): 0.5, (1, 1): 0.5}

    def test_point_mass_conditional(self):
        d = fit_tabular([np.array([0, 0])], n_tokens=2)
        np.testing.assert_array_equal(d.evaluate([0, M2]).probs[1], [1.0, 0.0])

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            fit_tabular([])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            fit_tabular([np.array([0, 1]), np.array([0])])

    def test_smoothing_normalizes(self):
        d = fit_tabular(AA_BB, lam=0.5)
        joint = {x: math.exp(d.log_joint(np.array(x))) for x in [(0, 0), (0, 1), (1, 0), (1, 1)]}
        assert math.fsum(joint.values()) == pytest.approx(1.0, abs=1e-12)
        assert joint[(0, 0)] == pytest.approx(1.5 / 4)
        assert joint[(0, 1)] == pytest.approx(0.5 / 4)


class TestTabularEvaluate:
    def test_marginals(self, aa_bb):
        P = aa_bb.evaluate([M2, M2])
        np.testing.assert_allclose(P.probs, [[0.5, 0.5], [0.5, 0.5]])

    def test_exact_conditional(self, aa_bb):
        np.testing.assert_allclose(aa_bb.evaluate([0, M2]).probs[1], [1.0, 0.0])

    def test_revealed_rows_one_hot(self, aa_bb):
        np.testing.assert_array_equal(aa_bb.evaluate([0, 1]).probs, [[1, 0], [0, 1]])

    def test_order_sensitivity(self):
        d = fit_tabular(AB_BA)
        assert d.evaluate([0, M2]).probs[1, 1] == 1.0
        assert d.evaluate([M2, M2]).probs[1, 1] == 0.5

    def test_support_miss_falls_back_to_uniform(self, aa_bb):
        assert not aa_bb.evaluate([0, M2]).support_miss
        d = fit_tabular([np.array([0, 0, 0])], n_tokens=2)
        P = d.evaluate([1, M2, M2])
        assert P.support_miss
        np.testing.assert_allclose(P.probs[1:], 0.5)

    def test_bit_identical_repeat(self, asym3):
        a = asym3.evaluate([M2, 1, M2]).log_probs
        fresh = fit_tabular(ASYM3).evaluate([M2, 1, M2]).log_probs
        assert a.tobytes() == fresh.tobytes()

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.sampled_from([0, 1, M2]), min_size=3, max_size=3))
    def test_matches_reference_conditionals(self, z):
        d = fit_tabular(ASYM3)
        ref = conditional_rows(joint_from_corpus([tuple(x) for x in ASYM3]),
                               [None if t == M2 else t for t in z], 2)
        np.testing.assert_allclose(d.evaluate(z).probs, np.array(ref, dtype=float), atol=1e-12)

    def test_state_checked(self, aa_bb):
        with pytest.raises(LengthMismatch):
            aa_bb.evaluate([M2, M2, M2])
        with pytest.raises(InvalidToken):
            aa_bb.evaluate([M2 + 1, M2])


class TestTrainableDenoiser:
    def test_zero_hidden_width_rejected(self):
        with pytest.raises(ValueError):
            TrainableDenoiser(2, 2, hidden=0)

    def test_subs(self):
        d = TrainableDenoiser(3, 4, seed=5)
        P = d.evaluate([1, 4, 4])
        np.testing.assert_array_equal(P.probs[0], [0, 1, 0, 0])
        assert P.shape == (3, 4)
        assert P.is_valid()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.lists(st.integers(0, 3), min_size=3, max_size=3))
    def test_rows_are_distributions(self, seed, z):
        P = TrainableDenoiser(3, 3, hidden=4, seed=seed).evaluate(z)
        assert P.is_valid()
        assert np.all(np.isfinite(P.log_probs[np.array(z) == 3]))

    def test_order_sensitive(self):
        d = TrainableDenoiser(2, 2, seed=0)
        assert not np.allclose(d.evaluate([0, 2]).probs[1], d.evaluate([2, 2]).probs[1])

    def test_persistence_roundtrip(self, tmp_path, mlp4):
        path = tmp_path / "m.json"
        save_denoiser(mlp4, path)
        back = load_denoiser(path)
        assert back.params.tobytes() == mlp4.params.tobytes()
        z = [0, 3, 3, 1]
        assert back.evaluate(z).log_probs.tobytes() == mlp4.evaluate(z).log_probs.tobytes()

    def test_tabular_persistence(self, tmp_path):
        d = fit_tabular(ASYM3, lam=0.25)
        save_denoiser(d, tmp_path / "t.json")
        back = load_denoiser(tmp_path / "t.json")
        for z in ([2, 2, 2], [0, 2, 1]):
            assert back.evaluate(z).log_probs.tobytes() == d.evaluate(z).log_probs.tobytes()


class TestElboEstimator:
    def test_weights(self):
        assert [mask_count_weight(n, 4) for n in range(1, 5)] == [4.0, 2.0, 4 / 3, 1.0]
        with pytest.raises(ValueError):
            mask_count_weight(0, 4)

    def test_draws_are_valid_subsets(self):
        for seed in range(200):
            m = draw_mask(5, seed)
            assert 1 <= len(m) <= 5 and m <= set(range(5))
        assert draw_mask(5, 3) == draw_mask(5, 3)

    def test_perfect_denoiser_gives_zero(self):
        d = fit_tabular([np.array([0, 1, 1])])
        assert all(elbo_loss_mc(d, [0, 1, 1], s) == 0.0 for s in range(20))

    def test_length_one(self):
        d = fit_tabular([np.array([0]), np.array([0]), np.array([1])])
        assert elbo_loss_mc(d, [1], 7) == pytest.approx(-math.log(1 / 3))

    def test_closed_form_mean_equals_permutation_average(self, asym3, mlp4):
        for d, xs in ((asym3, ASYM3), (mlp4, [np.array([0, 2, 1, 1]), np.array([2, 2, 2, 0])])):
            for x in xs:
                assert elbo_exhaustive_mc_mean(d, x) == pytest.approx(
                    aoarm_elbo_exhaustive(d, x), abs=1e-10)

    def test_empirical_mean_aa_bb(self, aa_bb):
        draws = np.array([elbo_loss_mc(aa_bb, [0, 0], s) for s in range(20_000)])
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert abs(draws.mean() - math.log(2)) <= 3 * se


class TestGradient:
    def test_matches_finite_differences(self):
        d = TrainableDenoiser(3, 3, hidden=5, embed=4, seed=2)
        x = np.array([2, 0, 1])
        g = elbo_loss_gradient(d, x, 11)
        masked = draw_mask(3, 11)
        w = mask_count_weight(len(masked), 3)
        rng = np.random.default_rng(0)
        for i in rng.choice(d.n_params, 20, replace=False):
            e = np.zeros(d.n_params)
            e[i] = 1e-5
            fd = (d.masked_loss(x, masked, w, d.params + e)
                  - d.masked_loss(x, masked, w, d.params - e)) / 2e-5
            assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), abs(g[i]), 1e-6)

    def test_stationary_point(self):
        d = TrainableDenoiser(2, 2, hidden=3, seed=0)
        p = {k: v.copy() for k, v in d.unpack().items()}
        x = np.array([1, 0])
        p["w_out"][:] = 0.0
        p["b_out"][:] = 0.0
        p["b_out"][np.arange(2), x] = 50.0
        theta = np.concatenate([p[k].ravel() for k in d.shapes])
        g = elbo_loss_gradient(d.with_params(theta), x, 4)
        assert np.linalg.norm(g) < 1e-8


class TestTrain:
    def test_zero_steps_keeps_parameters(self):
        d = TrainableDenoiser(2, 2, seed=1)
        assert train(d, AA_BB, 0).params.tobytes() == d.params.tobytes()

    def test_deterministic(self):
        d = TrainableDenoiser(2, 2, seed=1)
        a = train(d, AA_BB, 50, seed=9)
        b = train(d, AA_BB, 50, seed=9)
        assert a.params.tobytes() == b.params.tobytes()
        assert train(d, AA_BB, 50, seed=10).params.tobytes() != a.params.tobytes()

    def test_loss_decreases(self):
        d = TrainableDenoiser(2, 2, hidden=8, seed=1)
        before = sum(aoarm_elbo_exhaustive(d, x) for x in AA_BB)
        trained = train(d, AA_BB, 2000, seed=0)
        after = sum(aoarm_elbo_exhaustive(trained, x) for x in AA_BB)
        assert after < before

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            train(TrainableDenoiser(3, 2), AA_BB, 1)
