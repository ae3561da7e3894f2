"""Mask curriculum: linear ramps, adaptive teacher, per-sample mask draws."""

import numpy as np
import pytest

from entrofuse.curriculum import (MaskDistribution, Schedules,
                                  acm_distribution, candidate_family,
                                  masks_to_keep, sample_keep, sample_mask,
                                  schedule_lambda, schedule_pi)
from entrofuse.model import FusionConfig, FusionModel
from entrofuse.subsets import SubsetMask, nonempty_subsets

from test_model import random_batch, random_model


class TestSchedules:
    def test_linear_ramp_values_are_exact(self):
        s = Schedules(t_warm=10, pi_max=0.40, t_lam=10, lam_max=0.08)
        assert schedule_pi(0, s) == 0.0
        assert schedule_lambda(0, s) == 0.0
        np.testing.assert_allclose(schedule_pi(5, s), 0.20, rtol=0, atol=1e-12)
        np.testing.assert_allclose(schedule_lambda(5, s), 0.04, rtol=0, atol=1e-12)

    def test_random_tuples_match_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            t_warm = int(rng.integers(1, 40))
            t_lam = int(rng.integers(1, 40))
            pi_max = float(rng.uniform(0.05, 0.95))
            lam_max = float(rng.uniform(0.0, 0.5))
            t = int(rng.integers(0, 80))
            s = Schedules(t_warm=t_warm, pi_max=pi_max, t_lam=t_lam,
                          lam_max=lam_max)
            np.testing.assert_allclose(schedule_pi(t, s),
                                       pi_max * min(1.0, t / t_warm),
                                       rtol=0, atol=1e-12)
            np.testing.assert_allclose(schedule_lambda(t, s),
                                       lam_max * min(1.0, t / t_lam),
                                       rtol=0, atol=1e-12)

    def test_saturation_at_horizon(self):
        s = Schedules(t_warm=10, pi_max=0.40, t_lam=7, lam_max=0.08)
        for t in (10, 11, 50, 10_000):
            assert schedule_pi(t, s) == 0.40
        for t in (7, 8, 50, 10_000):
            assert schedule_lambda(t, s) == 0.08

    def test_ramps_never_decrease(self):
        s = Schedules(t_warm=13, pi_max=0.3, t_lam=9, lam_max=0.1)
        pis = [schedule_pi(t, s) for t in range(40)]
        lams = [schedule_lambda(t, s) for t in range(40)]
        assert all(b >= a for a, b in zip(pis, pis[1:]))
        assert all(b >= a for a, b in zip(lams, lams[1:]))

    def test_negative_epoch_rejected(self):
        s = Schedules()
        with pytest.raises(ValueError):
            schedule_pi(-1, s)
        with pytest.raises(ValueError):
            schedule_lambda(-1, s)

    def test_invalid_fields_rejected(self):
        with pytest.raises(ValueError):
            Schedules(t_warm=0)
        with pytest.raises(ValueError):
            Schedules(pi_max=0.0)
        with pytest.raises(ValueError):
            Schedules(pi_max=1.0)
        with pytest.raises(ValueError):
            Schedules(lam_max=-0.1)
        with pytest.raises(ValueError):
            Schedules(eta=0.0)
        with pytest.raises(ValueError):
            Schedules(mode="random")


class TestCandidateFamily:
    def test_single_drops_are_the_singletons(self):
        fam = candidate_family(4, "single_drops")
        assert fam == [SubsetMask.from_indices(4, [m]) for m in range(4)]

    def test_all_subsets_excludes_empty_and_full(self):
        fam = candidate_family(3, "all_subsets")
        assert len(fam) == 6  # 2^3 - 2
        assert SubsetMask.empty(3) not in fam
        assert SubsetMask.full(3) not in fam

    def test_all_subsets_capped_at_four_modalities(self):
        with pytest.raises(ValueError):
            candidate_family(5, "all_subsets")
        assert len(candidate_family(5, "single_drops")) == 5

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            candidate_family(3, "pairs")


class TestMaskDistribution:
    def test_full_drop_in_support_rejected(self):
        with pytest.raises(ValueError):
            MaskDistribution(support=(SubsetMask.full(2),),
                             probs=np.array([1.0]),
                             mean_entropies=np.array([0.0]))

    def test_probs_must_be_simplex(self):
        support = tuple(candidate_family(2, "single_drops"))
        with pytest.raises(ValueError):
            MaskDistribution(support=support, probs=np.array([0.7, 0.7]),
                             mean_entropies=np.zeros(2))
        with pytest.raises(ValueError):
            MaskDistribution(support=support, probs=np.array([1.5, -0.5]),
                             mean_entropies=np.zeros(2))

    def test_shape_mismatches_rejected(self):
        support = tuple(candidate_family(2, "single_drops"))
        with pytest.raises(ValueError):
            MaskDistribution(support=support, probs=np.array([1.0]),
                             mean_entropies=np.zeros(1))
        with pytest.raises(ValueError):
            MaskDistribution(support=support, probs=np.array([0.5, 0.5]),
                             mean_entropies=np.zeros(3))


class TestAcmDistribution:
    def test_matches_brute_force_softmax(self):
        # independent exp/sum oracle on the probe entropies
        for k in range(3):
            rng = np.random.default_rng(k)
            cfg = FusionConfig(modalities=3, dims=(4, 4, 4), classes=3,
                               fused_dim=5)
            model = random_model(rng, cfg)
            batch = random_batch(rng, 32, cfg.dims, cfg.classes)
            for eta in (0.25, 1.0, 4.0):
                dist = acm_distribution(model, batch, eta, family="all_subsets")
                w = np.exp(dist.mean_entropies / eta)
                np.testing.assert_allclose(dist.probs, w / w.sum(),
                                           rtol=0, atol=1e-10)

    def test_higher_probe_entropy_gets_strictly_higher_probability(self):
        rng = np.random.default_rng(10)
        cfg = FusionConfig(modalities=3, dims=(4, 4, 4), classes=3, fused_dim=5)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 32, cfg.dims, cfg.classes)
        dist = acm_distribution(model, batch, 0.5, family="all_subsets")
        h, p = dist.mean_entropies, dist.probs
        gaps = 0
        for i in range(len(h)):
            for j in range(len(h)):
                if h[i] > h[j] + 1e-12:
                    assert p[i] > p[j]
                    gaps += 1
        assert gaps > 0

    def test_huge_eta_flattens_to_uniform(self):
        rng = np.random.default_rng(11)
        cfg = FusionConfig(modalities=3, dims=(4, 4, 4), classes=3, fused_dim=5)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 32, cfg.dims, cfg.classes)
        dist = acm_distribution(model, batch, 1e6, family="all_subsets")
        np.testing.assert_allclose(dist.probs, 1.0 / len(dist.support),
                                   rtol=0, atol=1e-6)

    def test_two_modality_single_drops_are_exactly_uniform(self):
        # dropping either modality leaves one observed, entropy exactly zero
        rng = np.random.default_rng(12)
        cfg = FusionConfig(modalities=2, dims=(3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 16, cfg.dims, cfg.classes)
        dist = acm_distribution(model, batch, 1.0, family="single_drops")
        assert (dist.mean_entropies == 0.0).all()
        np.testing.assert_allclose(dist.probs, [0.5, 0.5], rtol=0, atol=0)

    def test_fresh_gate_spreads_candidates_uniformly(self):
        # zero gate output layer keeps every probe entropy at log(2)
        rng = np.random.default_rng(13)
        cfg = FusionConfig(modalities=3, dims=(3, 3, 3), classes=3, fused_dim=4)
        model = FusionModel.init(cfg, rng)
        batch = random_batch(rng, 16, cfg.dims, cfg.classes)
        dist = acm_distribution(model, batch, 1.0, family="single_drops")
        np.testing.assert_allclose(dist.mean_entropies, np.log(2.0),
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(dist.probs, 1.0 / 3.0, rtol=0, atol=1e-12)

    def test_families_agree_on_shared_candidates(self):
        rng = np.random.default_rng(14)
        cfg = FusionConfig(modalities=3, dims=(4, 4, 4), classes=3, fused_dim=5)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 24, cfg.dims, cfg.classes)
        singles = acm_distribution(model, batch, 1.0, family="single_drops")
        full = acm_distribution(model, batch, 1.0, family="all_subsets")
        assert full.support[:3] == singles.support
        np.testing.assert_allclose(full.mean_entropies[:3],
                                   singles.mean_entropies, rtol=0, atol=0)

    def test_nonpositive_eta_rejected(self):
        rng = np.random.default_rng(15)
        cfg = FusionConfig(modalities=2, dims=(3, 3), classes=2, fused_dim=4)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 8, cfg.dims, cfg.classes)
        with pytest.raises(ValueError):
            acm_distribution(model, batch, 0.0)


class TestSampleMask:
    def _dist(self, probs=(0.5, 0.5)):
        support = tuple(candidate_family(2, "single_drops"))
        return MaskDistribution(support=support,
                                probs=np.asarray(probs, dtype=np.float64),
                                mean_entropies=np.zeros(2))

    def test_zero_rate_masks_nothing(self):
        dist = self._dist()
        masks = sample_mask(dist, 0.0, 50, np.random.default_rng(0))
        assert all(m.count == 0 for m in masks)
        assert masks_to_keep(masks).all()

    def test_sample_keep_equals_subset_route_bitwise(self):
        # same rng stream in, same keep matrix and same post-call rng state out
        dist = self._dist(probs=(0.3, 0.7))
        for pi_t in (0.0, 0.4, 1.0):
            rng_a = np.random.default_rng(21)
            rng_b = np.random.default_rng(21)
            via_subsets = masks_to_keep(sample_mask(dist, pi_t, 40, rng_a))
            direct = sample_keep(dist, pi_t, 40, rng_b)
            assert (via_subsets == direct).all()
            assert rng_a.random() == rng_b.random()

    def test_sample_keep_validation_matches_sample_mask(self):
        dist = self._dist()
        with pytest.raises(ValueError):
            sample_keep(dist, 1.5, 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_keep(dist, 0.5, 0, np.random.default_rng(0))

    def test_full_rate_on_degenerate_teacher_always_picks_it(self):
        dist = self._dist(probs=(1.0, 0.0))
        masks = sample_mask(dist, 1.0, 50, np.random.default_rng(1))
        assert all(m == dist.support[0] for m in masks)

    def test_masked_fraction_tracks_rate(self):
        dist = self._dist()
        masks = sample_mask(dist, 0.5, 100_000, np.random.default_rng(2))
        frac = np.mean([m.count > 0 for m in masks])
        np.testing.assert_allclose(frac, 0.5, rtol=0, atol=0.01)

    def test_pick_frequencies_track_teacher_probs(self):
        dist = self._dist(probs=(0.8, 0.2))
        masks = sample_mask(dist, 1.0, 100_000, np.random.default_rng(3))
        frac0 = np.mean([m == dist.support[0] for m in masks])
        np.testing.assert_allclose(frac0, 0.8, rtol=0, atol=0.01)

    def test_rng_consumption_is_independent_of_rate(self):
        # downstream draws stay aligned when the curriculum rate ramps
        dist = self._dist()
        after = []
        for pi_t in (0.0, 0.3, 1.0):
            rng = np.random.default_rng(7)
            sample_mask(dist, pi_t, 64, rng)
            after.append(rng.random(4))
        assert (after[0] == after[1]).all()
        assert (after[0] == after[2]).all()

    def test_keep_matrix_inverts_drop_bits(self):
        dist = self._dist(probs=(1.0, 0.0))
        masks = sample_mask(dist, 1.0, 10, np.random.default_rng(4))
        keep = masks_to_keep(masks)
        assert keep.shape == (10, 2)
        assert (~keep[:, 0]).all()  # support[0] drops modality 0
        assert keep[:, 1].all()

    def test_invalid_arguments_rejected(self):
        dist = self._dist()
        with pytest.raises(ValueError):
            sample_mask(dist, -0.1, 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_mask(dist, 1.1, 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_mask(dist, 0.5, 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            masks_to_keep([])
