"""Double-masking inference cases, certification, and evaluation metrics."""

import numpy as np
import pytest

from helpers import ConstantClassifier, HashClassifier, TableClassifier
from patchcert.cache import CachedClassifier
from patchcert.defense import certify, double_masking_infer, evaluate
from patchcert.masks import apply_masks, build_mask_set


MS = build_mask_set(32, 5, 3)


def one_mask_image(image, mask_id):
    return apply_masks(image, [MS.masks[mask_id]])


def two_mask_image(image, i, j):
    return apply_masks(image, [MS.masks[i], MS.masks[j]])


def infer(classifier, image):
    cache = CachedClassifier(classifier)
    image_id = cache.register(image)
    return double_masking_infer(cache, image_id, MS)


def run_certify(classifier, image, label, **kw):
    cache = CachedClassifier(classifier)
    image_id = cache.register(image)
    return certify(cache, image_id, label, MS, **kw), cache


class TestInference:
    def test_constant_classifier_is_case_one(self):
        img = np.random.default_rng(0).random((32, 32, 1))
        clf = ConstantClassifier([0.1, 0.7, 0.2])
        cache = CachedClassifier(clf)
        image_id = cache.register(img)
        res = double_masking_infer(cache, image_id, MS)
        assert res.case == "I"
        assert res.label == 1
        assert res.one_mask_labels == (1,) * 9
        # case-I fast path: round 2 never runs
        assert cache.scheduled_evaluations == 9

    def test_single_unanimous_disagreer_wins_case_two(self):
        # Simulates a patched image: mask 4 erases the patch and predicts the
        # true label 0 on all its two-mask copies; every other mask sees the
        # patch and predicts 2.
        img = np.random.default_rng(1).random((32, 32, 1))
        table = {}
        for m in range(9):
            table[TableClassifier.key(one_mask_image(img, m))] = 0 if m == 4 else 2
        for j in range(9):
            table[TableClassifier.key(two_mask_image(img, 4, j))] = 0
            table[TableClassifier.key(two_mask_image(img, j, 4))] = 0
        clf = TableClassifier(3, table, default_label=2)
        res = infer(clf, img)
        assert res.case == "II"
        assert res.label == 0
        assert res.unanimous_disagreers == 1

    def test_two_non_unanimous_minorities_fall_back_to_majority(self):
        img = np.random.default_rng(2).random((32, 32, 1))
        table = {}
        for m in range(9):
            table[TableClassifier.key(one_mask_image(img, m))] = {3: 1, 5: 2}.get(m, 0)
        # minority masks 3 and 5 both see mixed two-mask predictions
        table[TableClassifier.key(two_mask_image(img, 3, 0))] = 1
        table[TableClassifier.key(two_mask_image(img, 5, 0))] = 2
        clf = TableClassifier(3, table, default_label=0)
        res = infer(clf, img)
        assert res.case == "III"
        assert res.label == 0
        assert res.unanimous_disagreers == 0

    def test_two_unanimous_disagreers_fall_back_to_majority(self):
        img = np.random.default_rng(3).random((32, 32, 1))
        table = {}
        for m in range(9):
            table[TableClassifier.key(one_mask_image(img, m))] = 1 if m in (3, 5) else 0
        for m in (3, 5):
            for j in range(9):
                table[TableClassifier.key(two_mask_image(img, m, j))] = 1
                table[TableClassifier.key(two_mask_image(img, j, m))] = 1
        # the (3, 5) combo belongs to both minority rounds; keep it unanimous
        clf = TableClassifier(3, table, default_label=0)
        res = infer(clf, img)
        assert res.case == "III"
        assert res.label == 0
        assert res.unanimous_disagreers == 2

    def test_majority_tie_breaks_to_smallest_class(self):
        img = np.random.default_rng(4).random((32, 32, 1))
        table = {}
        labels = [2, 2, 2, 2, 1, 1, 1, 1, 0]
        for m in range(9):
            table[TableClassifier.key(one_mask_image(img, m))] = labels[m]
        # several minority masks end up unanimous (all their pair images hit
        # the default), so the >1 rule routes to the majority either way
        clf = TableClassifier(3, table, default_label=2)
        res = infer(clf, img)
        assert res.case == "III"
        assert res.unanimous_disagreers == 4
        # counts: class 2 and class 1 tie at 4; smallest class id wins
        assert res.label == 1


class TestCertify:
    def test_constant_correct_certifies_in_45_combos(self):
        img = np.random.default_rng(5).random((32, 32, 1))
        (res, cache) = run_certify(ConstantClassifier([0.9, 0.1]), img, 0)
        assert res.certified
        assert res.combos_evaluated == 45
        assert cache.unique_evaluations == 45
        assert res.witness is None

    def test_failing_combo_reported_as_witness(self):
        img = np.random.default_rng(6).random((32, 32, 1))
        table = {TableClassifier.key(two_mask_image(img, 0, 5)): 1}
        clf = TableClassifier(2, table, default_label=0)
        (res, _) = run_certify(clf, img, 0)
        assert not res.certified
        assert res.witness == (0, 5)

    def test_early_exit_vs_full_enumeration(self):
        img = np.random.default_rng(7).random((32, 32, 1))
        table = {TableClassifier.key(two_mask_image(img, 1, 2)): 1}
        clf = TableClassifier(2, table, default_label=0)
        (fast, _) = run_certify(clf, img, 0, early_exit=True)
        (full, cache) = run_certify(clf, img, 0, early_exit=False)
        assert fast.witness == full.witness == (1, 2)
        assert fast.combos_evaluated <= full.combos_evaluated
        assert full.combos_evaluated == 45
        assert cache.unique_evaluations == 45

    def test_constant_wrong_label_fails_immediately(self):
        img = np.random.default_rng(8).random((32, 32, 1))
        (res, _) = run_certify(ConstantClassifier([0.9, 0.1]), img, 1)
        assert not res.certified
        assert res.witness == (0, 0)


class TestEvaluate:
    def test_constant_correct_single_class(self):
        imgs = [np.random.default_rng(i).random((32, 32, 1)) for i in range(4)]
        labels = [0, 0, 0, 0]
        report = evaluate(imgs, labels, ConstantClassifier([1.0, 0.0]), MS)
        assert report.clean_accuracy == 1.0
        assert report.certified_robust_accuracy == 1.0
        assert report.cases == {"I": 4, "II": 0, "III": 0}

    def test_certified_subset_of_clean(self):
        imgs = [np.random.default_rng(i).random((32, 32, 1)) for i in range(12)]
        labels = [i % 4 for i in range(12)]
        report = evaluate(imgs, labels, HashClassifier(class_count=4, salt=2), MS)
        assert report.certified_robust_accuracy <= report.clean_accuracy
        for inf, cert, y in zip(report.inferences, report.certifications, labels):
            if cert.certified:
                assert inf.label == y

    def test_thread_count_does_not_change_results(self):
        imgs = [np.random.default_rng(i).random((32, 32, 1)) for i in range(8)]
        labels = [i % 4 for i in range(8)]
        clf = HashClassifier(class_count=4, salt=3)
        a = evaluate(imgs, labels, clf, MS, threads=1)
        b = evaluate(imgs, labels, clf, MS, threads=8)
        assert a.clean_accuracy == b.clean_accuracy
        assert a.certified_robust_accuracy == b.certified_robust_accuracy
        assert a.unique_passes == b.unique_passes
        assert [i.label for i in a.inferences] == [i.label for i in b.inferences]
        assert [c.witness for c in a.certifications] == [c.witness for c in b.certifications]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            evaluate([], [], ConstantClassifier([1.0]), MS)
