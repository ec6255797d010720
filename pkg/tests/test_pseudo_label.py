"""Pseudo-label extraction rules and the correctness audit."""

import math

import numpy as np
import pytest

from aldet.boxes import (
    BoxCorner,
    ClassDist,
    Detection,
    ImagePrediction,
    encode_box,
    image_anchor,
)
from aldet.pseudo_label import (
    GroundTruthObject,
    PseudoLabel,
    audit_pl_correctness,
    extract_pseudo_labels,
    extract_topk_per_class,
)


def det(probs, box=BoxCorner(0, 0, 10, 10)):
    return Detection(box, encode_box(box, image_anchor(100, 100)), ClassDist(probs))


def pred(dets, image_id="img"):
    return ImagePrediction(image_id, 100, 100, tuple(dets))


def peaked(cls, peak, k=4):
    probs = np.full(k + 1, (1.0 - peak) / k)
    probs[cls] = peak
    return probs


class TestExtractPseudoLabels:
    def test_confident_detection_labeled(self):
        p = pred([det(peaked(3, 0.995))])
        pls = extract_pseudo_labels(p, 0.99)
        assert len(pls) == 1
        assert pls[0].class_id == 3
        assert pls[0].confidence == pytest.approx(0.995)

    def test_below_threshold_skipped(self):
        p = pred([det(peaked(3, 0.98))])
        assert extract_pseudo_labels(p, 0.99) == []

    def test_background_argmax_never_labeled(self):
        p = pred([det(peaked(0, 0.999))])
        assert extract_pseudo_labels(p, 0.99) == []

    def test_tau_validation(self):
        p = pred([])
        for bad in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                extract_pseudo_labels(p, bad)

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            dets = []
            for _ in range(int(rng.integers(1, 10))):
                cls = int(rng.integers(0, 5))
                peak = float(rng.uniform(0.3, 0.999))
                dets.append(det(peaked(cls, peak)))
            p = pred(dets)
            counts = [len(extract_pseudo_labels(p, tau)) for tau in (0.5, 0.9, 0.99)]
            assert counts == sorted(counts, reverse=True)

    def test_emitted_labels_satisfy_contract(self):
        rng = np.random.default_rng(7)
        for tau in (0.5, 0.9, 0.99):
            dets = [det(peaked(int(rng.integers(0, 5)), float(rng.uniform(0.3, 0.999)))) for _ in range(20)]
            p = pred(dets)
            for pl, d in zip(extract_pseudo_labels(p, tau), (d for d in dets if d.class_id != 0 and d.score >= tau)):
                assert pl.confidence >= tau
                assert pl.class_id == d.class_id >= 1


class TestTopKPerClass:
    def test_full_take(self):
        dets = [det(peaked(1, 0.6)), det(peaked(2, 0.7)), det(peaked(0, 0.9))]
        pls = extract_topk_per_class([pred(dets)], 1.0)
        assert len(pls) == 2  # background-argmax detection excluded

    def test_top_20_percent(self):
        # 10 detections of one class -> ceil(0.2 * 10) = 2 labels, highest probs
        confs = [0.3, 0.9, 0.5, 0.7, 0.95, 0.4, 0.6, 0.45, 0.35, 0.55]
        dets = [det(peaked(1, c)) for c in confs]
        pls = extract_topk_per_class([pred(dets)], 0.2)
        assert len(pls) == 2
        assert sorted(pl.confidence for pl in pls) == pytest.approx([0.9, 0.95])

    def test_matches_sort_and_slice_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            preds = []
            for i in range(3):
                dets = [
                    det(peaked(int(rng.integers(1, 4)), float(rng.uniform(0.3, 0.99))))
                    for _ in range(int(rng.integers(0, 8)))
                ]
                preds.append(pred(dets, image_id=f"img_{i}"))
            k = float(rng.choice([0.2, 0.5, 1.0]))
            got = extract_topk_per_class(preds, k)

            per_class: dict[int, list[float]] = {}
            for p in preds:
                for d in p.detections:
                    if d.class_id >= 1:
                        per_class.setdefault(d.class_id, []).append(d.score)
            expected_count = sum(
                math.ceil(k * len(v)) for v in per_class.values()
            )
            assert len(got) == expected_count
            for cls, confs in per_class.items():
                take = math.ceil(k * len(confs))
                kept = sorted((pl.confidence for pl in got if pl.class_id == cls), reverse=True)
                assert kept == pytest.approx(sorted(confs, reverse=True)[:take])

    def test_k_validation(self):
        with pytest.raises(ValueError):
            extract_topk_per_class([], 0.0)
        with pytest.raises(ValueError):
            extract_topk_per_class([], 1.5)


def gt(image_id, box, cls):
    return GroundTruthObject(image_id, box, cls)


def pl(image_id, box, cls, conf=0.995):
    return PseudoLabel(image_id, box, cls, conf)


class TestAudit:
    def test_match_above_threshold_counts(self):
        box_gt = BoxCorner(0, 0, 10, 10)
        box_pl = BoxCorner(0, 0, 10, 8)  # IoU 0.8
        assert audit_pl_correctness([pl("a", box_pl, 1)], [gt("a", box_gt, 1)]) == 1.0

    def test_low_iou_counts_as_wrong(self):
        box_gt = BoxCorner(0, 0, 10, 10)
        box_pl = BoxCorner(0, 0, 10, 4)  # IoU 0.4
        assert audit_pl_correctness([pl("a", box_pl, 1)], [gt("a", box_gt, 1)]) == 0.0

    def test_class_mismatch_counts_as_wrong(self):
        box = BoxCorner(0, 0, 10, 10)
        assert audit_pl_correctness([pl("a", box, 2)], [gt("a", box, 1)]) == 0.0

    def test_gt_single_use(self):
        # two duplicate pseudo-labels, one GT: only one can be validated
        box = BoxCorner(0, 0, 10, 10)
        labels = [pl("a", box, 1), pl("a", BoxCorner(0, 0, 10, 9.5), 1)]
        assert audit_pl_correctness(labels, [gt("a", box, 1)]) == 0.5

    def test_empty_pl_list_convention(self):
        assert audit_pl_correctness([], [gt("a", BoxCorner(0, 0, 1, 1), 1)]) == 1.0

    def test_24_of_25_fixture(self):
        labels, truths = [], []
        for i in range(25):
            image_id = f"img_{i:02d}"
            box = BoxCorner(10, 10, 50, 50)
            truths.append(gt(image_id, box, 1 + i % 3))
            if i < 24:
                labels.append(pl(image_id, BoxCorner(10, 10, 50, 46), 1 + i % 3))  # IoU 0.9
            else:
                labels.append(pl(image_id, BoxCorner(60, 60, 80, 80), 1 + i % 3))  # IoU 0
        assert audit_pl_correctness(labels, truths) == 0.96

    def test_order_invariance_with_distinct_ious(self):
        rng = np.random.default_rng(3)
        truths, labels = [], []
        for i in range(12):
            image_id = f"img_{i}"
            x = float(rng.uniform(0, 40))
            box = BoxCorner(x, 10, x + 30, 40)
            truths.append(gt(image_id, box, 1))
            shrink = float(rng.uniform(0, 12))
            labels.append(pl(image_id, BoxCorner(x, 10, x + 30 - shrink, 40), 1))
        base = audit_pl_correctness(labels, truths)
        for _ in range(5):
            perm = rng.permutation(len(labels))
            assert audit_pl_correctness([labels[k] for k in perm], truths) == base
