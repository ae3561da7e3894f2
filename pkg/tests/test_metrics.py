"""Calibration, ranking metrics, inversion audit, and CSV formatting."""

import numpy as np
import pytest

import entrofuse.tensor as T
from entrofuse.data import MultimodalBatch
from entrofuse.losses import cec_loss, subset_confidences
from entrofuse.metrics import (CalibrationReport, InversionAudit,
                               audit_confidences, ece,
                               entropy_confidence_export, format_value,
                               inversion_audit, map_at_1, per_class_ece,
                               top1_accuracy, write_csv)
from entrofuse.model import FusionConfig, FusionModel, forward, predict_subset
from entrofuse.subsets import SubsetMask, subset_lattice

from test_model import random_batch, random_model


class TestEce:
    def test_hand_example_scores_exactly_point_four(self):
        # two bins, each holding half the mass with a 0.4 confidence gap
        conf = np.array([0.9, 0.9, 0.6, 0.6])
        correct = np.array([True, False, True, True])
        report = ece(conf, correct, bins=15)
        assert report.ece == 0.4

    def test_perfectly_confident_and_correct_scores_zero(self):
        report = ece(np.ones(10), np.ones(10, dtype=bool))
        assert report.ece == 0.0

    def test_perfectly_confident_and_wrong_scores_one(self):
        report = ece(np.ones(10), np.zeros(10, dtype=bool))
        assert report.ece == 1.0

    def test_calibrated_predictor_scores_below_two_percent(self):
        # correctness drawn with probability equal to the stated confidence
        rng = np.random.default_rng(0)
        conf = rng.uniform(0.0, 1.0, size=10_000)
        correct = rng.random(10_000) < conf
        report = ece(conf, correct, bins=15)
        assert report.ece < 0.02

    def test_score_is_permutation_invariant(self):
        rng = np.random.default_rng(1)
        conf = rng.uniform(0.0, 1.0, size=200)
        correct = rng.random(200) < 0.7
        perm = rng.permutation(200)
        a = ece(conf, correct).ece
        b = ece(conf[perm], correct[perm]).ece
        assert a == b

    def test_counts_cover_every_sample(self):
        rng = np.random.default_rng(2)
        conf = rng.uniform(0.0, 1.0, size=137)
        correct = rng.random(137) < 0.5
        report = ece(conf, correct, bins=15)
        assert report.counts.sum() == 137
        assert report.n == 137
        assert report.bin_edges.shape == (16,)

    def test_bins_are_left_closed_and_last_closed_at_one(self):
        # 1/15 lands in bin 1; exact 1.0 stays in bin 14
        report = ece(np.array([1.0 / 15.0, 1.0]), np.array([True, True]), bins=15)
        assert report.counts[1] == 1
        assert report.counts[14] == 1
        assert report.counts[0] == 0

    def test_empty_bins_contribute_nothing(self):
        # all mass in one bin: score is that bin's gap alone
        conf = np.full(8, 0.52)
        correct = np.array([True] * 4 + [False] * 4)
        report = ece(conf, correct, bins=15)
        np.testing.assert_allclose(report.ece, abs(0.5 - 0.52), rtol=0, atol=1e-15)
        assert (report.counts > 0).sum() == 1

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            conf = rng.uniform(0.0, 1.0, size=64)
            correct = rng.random(64) < conf
            bins = 15
            score = 0.0
            for k in range(bins):
                lo, hi = k / bins, (k + 1) / bins
                sel = ((conf >= lo) & (conf < hi)) | ((k == bins - 1) & (conf == 1.0))
                if sel.any():
                    score += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
            np.testing.assert_allclose(ece(conf, correct, bins=bins).ece, score,
                                       rtol=0, atol=1e-12)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            ece(np.array([]), np.array([]))
        with pytest.raises(ValueError):
            ece(np.array([0.5, 0.5]), np.array([True]))
        with pytest.raises(ValueError):
            ece(np.array([1.2]), np.array([True]))
        with pytest.raises(ValueError):
            ece(np.array([-0.1]), np.array([True]))
        with pytest.raises(ValueError):
            ece(np.array([0.5]), np.array([True]), bins=0)


class TestPerClassEce:
    def test_single_predicted_class_equals_plain_ece(self):
        rng = np.random.default_rng(4)
        conf = rng.uniform(0.0, 1.0, size=50)
        correct = rng.random(50) < conf
        pred = np.zeros(50, dtype=np.int64)
        assert per_class_ece(conf, correct, pred, classes=3) == ece(conf, correct).ece

    def test_macro_average_over_predicted_classes(self):
        conf = np.array([0.9, 0.9, 0.6, 0.6])
        correct = np.array([True, False, True, True])
        pred = np.array([0, 0, 1, 1])
        got = per_class_ece(conf, correct, pred, classes=5)
        expected = (ece(conf[:2], correct[:2]).ece + ece(conf[2:], correct[2:]).ece) / 2
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-15)

    def test_never_predicted_classes_are_skipped(self):
        conf = np.array([0.8, 0.7])
        correct = np.array([True, True])
        pred = np.array([2, 2])
        got = per_class_ece(conf, correct, pred, classes=10)
        assert got == ece(conf, correct).ece


class TestMapAt1:
    def test_perfect_predictor_scores_one(self):
        labels = np.eye(3)[[0, 1, 2, 0]]
        logits = labels * 10.0
        assert map_at_1(logits, labels) == 1.0

    def test_matches_enumeration_oracle(self):
        # top-1 picks per sample: [0, 0, 1, 2, 2, 0]
        logits = np.array([
            [3.0, 1.0, 0.0],
            [2.0, 1.0, 1.0],
            [0.0, 4.0, 1.0],
            [0.0, 1.0, 2.0],
            [1.0, 0.0, 5.0],
            [9.0, 2.0, 3.0],
        ])
        labels = np.array([
            [1, 0, 0],
            [0, 1, 0],
            [0, 1, 0],
            [0, 0, 1],
            [1, 0, 1],
            [0, 1, 0],
        ], dtype=np.float64)
        # class 0 predicted 3x with hits [1, 0, 0]; class 1 once, hit;
        # class 2 twice with hits [1, 1]
        expected = np.mean([1.0 / 3.0, 1.0, 1.0])
        np.testing.assert_allclose(map_at_1(logits, labels), expected,
                                   rtol=0, atol=1e-15)

    def test_never_predicted_class_is_excluded(self):
        logits = np.array([[5.0, 0.0, 0.0], [4.0, 1.0, 0.0]])
        labels = np.array([[1, 0, 0], [0, 0, 1]], dtype=np.float64)
        assert map_at_1(logits, labels) == 0.5  # only class 0 enters

    def test_per_row_shift_leaves_score_unchanged(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(20, 4))
        labels = (rng.random((20, 4)) < 0.4).astype(np.float64)
        shifted = logits + rng.normal(size=(20, 1))
        assert map_at_1(logits, labels) == map_at_1(shifted, labels)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            map_at_1(np.zeros((2, 3)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            map_at_1(np.zeros((0, 3)), np.zeros((0, 3)))


class TestTop1Accuracy:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(40, 5))
        labels = rng.integers(0, 5, size=40)
        hits = sum(int(np.argmax(logits[i]) == labels[i]) for i in range(40))
        assert top1_accuracy(logits, labels) == hits / 40

    def test_ties_resolve_to_lowest_index(self):
        logits = np.zeros((3, 4))
        assert top1_accuracy(logits, np.array([0, 0, 0])) == 1.0
        assert top1_accuracy(logits, np.array([1, 2, 3])) == 0.0

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            top1_accuracy(np.zeros((2, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            top1_accuracy(np.zeros((0, 3)), np.zeros(0))


class TestInversionAudit:
    def test_constant_confidence_has_no_inversions(self):
        # zero projections make every subset prediction identical
        rng = np.random.default_rng(7)
        cfg = FusionConfig(modalities=2, dims=(3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        for w in model.proj:
            w.data = np.zeros_like(w.data)
        batch = random_batch(rng, 12, cfg.dims, cfg.classes)
        audit = inversion_audit(model, batch)
        assert audit.total_count == 0
        assert audit.rate == 0.0
        assert (audit.mean_violation == 0.0).all()

    def test_counts_match_brute_force_recomputation(self):
        rng = np.random.default_rng(8)
        cfg = FusionConfig(modalities=3, dims=(3, 3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 16, cfg.dims, cfg.classes)
        audit = inversion_audit(model, batch)
        pairs = subset_lattice(3)
        assert audit.pairs == tuple(pairs)
        for i, (small, big) in enumerate(pairs):
            cs = predict_subset(model, batch, small).confidence.data
            cb = predict_subset(model, batch, big).confidence.data
            assert audit.counts[i] == int((cs > cb).sum())
            np.testing.assert_allclose(audit.mean_violation[i],
                                       np.maximum(cs - cb, 0.0).mean(),
                                       rtol=0, atol=1e-15)
        assert audit.n == 16

    def test_zero_audit_count_iff_zero_consistency_loss(self):
        # the hinge loss and the audit agree on "no violations"
        rng = np.random.default_rng(9)
        cfg = FusionConfig(modalities=2, dims=(4, 4), classes=3, fused_dim=4)
        pairs = subset_lattice(2)
        zero_model = random_model(rng, cfg)
        for w in zero_model.proj:
            w.data = np.zeros_like(w.data)
        batch = random_batch(rng, 10, cfg.dims, cfg.classes)
        loss = cec_loss(subset_confidences(zero_model, batch, pairs), pairs)
        audit = inversion_audit(zero_model, batch)
        assert loss.item() == 0.0 and audit.total_count == 0

        live_model = random_model(np.random.default_rng(10), cfg)
        loss = cec_loss(subset_confidences(live_model, batch, pairs), pairs)
        audit = inversion_audit(live_model, batch)
        assert (loss.item() > 0.0) == (audit.total_count > 0)
        assert audit.total_count > 0  # random weights do violate somewhere

    def test_rate_normalizes_by_samples_and_pairs(self):
        rng = np.random.default_rng(11)
        cfg = FusionConfig(modalities=2, dims=(3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 10, cfg.dims, cfg.classes)
        audit = inversion_audit(model, batch)
        assert audit.rate == audit.total_count / (10 * 2)

    def test_more_than_four_modalities_rejected(self):
        rng = np.random.default_rng(12)
        cfg = FusionConfig(modalities=5, dims=(2,) * 5, classes=2, fused_dim=3)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 4, cfg.dims, cfg.classes)
        with pytest.raises(ValueError):
            inversion_audit(model, batch)


class TestAuditConfidences:
    def test_matches_model_audit(self):
        rng = np.random.default_rng(30)
        cfg = FusionConfig(modalities=3, dims=(3, 3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 14, cfg.dims, cfg.classes)
        pairs = subset_lattice(3)
        conf = {}
        for pair in pairs:
            for subset in pair:
                if subset not in conf:
                    conf[subset] = predict_subset(model, batch, subset).confidence.data
        direct = audit_confidences(conf, pairs)
        via_model = inversion_audit(model, batch)
        assert direct.pairs == via_model.pairs
        assert (direct.counts == via_model.counts).all()
        np.testing.assert_allclose(direct.mean_violation,
                                   via_model.mean_violation, rtol=0, atol=0)
        assert direct.n == via_model.n == 14

    def test_counts_constructed_lattice(self):
        a, ab = SubsetMask.from_indices(2, [0]), SubsetMask.from_indices(2, [0, 1])
        b = SubsetMask.from_indices(2, [1])
        conf = {a: np.array([0.9, 0.2, 0.5]),
                b: np.array([0.1, 0.1, 0.5]),
                ab: np.array([0.5, 0.3, 0.5])}
        audit = audit_confidences(conf, subset_lattice(2))
        # pair ({0},{0,1}) violated once; ties never count
        assert audit.total_count == 1
        assert audit.n == 3

    def test_missing_subset_rejected(self):
        a, ab = SubsetMask.from_indices(2, [0]), SubsetMask.from_indices(2, [0, 1])
        with pytest.raises(ValueError, match="no confidence entry"):
            audit_confidences({a: np.zeros(3)}, [(a, ab)])

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            audit_confidences({}, [])

    def test_length_mismatch_rejected(self):
        a, ab = SubsetMask.from_indices(2, [0]), SubsetMask.from_indices(2, [0, 1])
        conf = {a: np.zeros(3), ab: np.zeros(4)}
        with pytest.raises(ValueError, match="length"):
            audit_confidences(conf, [(a, ab)])


class TestEntropyConfidenceExport:
    def test_columns_are_forward_outputs(self):
        rng = np.random.default_rng(13)
        cfg = FusionConfig(modalities=2, dims=(3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        batch = random_batch(rng, 9, cfg.dims, cfg.classes)
        rows = entropy_confidence_export(model, batch)
        out = forward(model, batch)
        assert rows.shape == (9, 2)
        assert (rows[:, 0] == out.gate_entropy.data).all()
        assert (rows[:, 1] == out.confidence.data).all()

    def test_single_observed_modality_exports_zero_entropy(self):
        rng = np.random.default_rng(14)
        cfg = FusionConfig(modalities=2, dims=(3, 3), classes=3, fused_dim=4)
        model = random_model(rng, cfg)
        presence = np.tile([True, False], (6, 1))
        batch = random_batch(rng, 6, cfg.dims, cfg.classes, presence)
        rows = entropy_confidence_export(model, batch)
        assert (rows[:, 0] == 0.0).all()


class TestCsvFormatting:
    def test_float_cells_round_trip(self):
        rng = np.random.default_rng(15)
        for x in rng.normal(size=20) * 10.0 ** rng.integers(-8, 8, size=20):
            assert float(format_value(float(x))) == float(x)

    def test_value_kinds(self):
        assert format_value(True) == "true"
        assert format_value(False) == "false"
        assert format_value(np.int64(7)) == "7"
        assert format_value(0.5) == "0.5"
        assert format_value("tag") == "tag"

    def test_write_csv_bytes_are_deterministic(self, tmp_path):
        header = ["epoch", "loss"]
        rows = [[1, 0.25], [2, 1.0 / 3.0]]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, header, rows)
        write_csv(b, header, rows)
        assert a.read_bytes() == b.read_bytes()
        text = a.read_text().splitlines()
        assert text[0] == "epoch,loss"
        assert text[1] == "1,0.25"
        assert float(text[2].split(",")[1]) == 1.0 / 3.0

    def test_write_csv_creates_parent_directories(self, tmp_path):
        path = tmp_path / "deep" / "nested" / "out.csv"
        write_csv(path, ["x"], [[1.5]])
        assert path.read_text() == "x\n1.5\n"
