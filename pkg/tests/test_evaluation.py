"""Tests for matching, detection accuracy, FPPI curves, and log-average miss rate."""

import math

import numpy as np
import pytest

from vishud.errors import EmptyCurveError, NoGroundTruthError
from vishud.evaluation import (LAMR_REFERENCES, MISS_RATE_FLOOR, CurvePoint, accuracy,
                               curve, evaluate, format_curve, format_report, lamr, match)
from vishud.gridcodec import BBox
from vishud.inference import Detection


def det(x1, y1, x2, y2, score):
    return Detection(BBox(x1, y1, x2, y2), score, cluster_size=1)


class TestMatch:
    def test_perfect(self):
        gts = [BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)]
        dets = [det(0, 0, 10, 10, 0.9), det(20, 20, 30, 30, 0.8)]
        res = match(dets, gts)
        assert len(res.matches) == 2
        assert res.false_positives == ()
        assert res.misses == ()

    def test_no_detections(self):
        res = match([], [BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)])
        assert res.matches == ()
        assert res.misses == (0, 1)

    def test_best_iou_wins(self):
        # detection overlaps gt B with iou 0.6 and gt A with 0.8; it takes A
        gt_b = BBox(0, 0, 10, 6)
        gt_a = BBox(0, 0, 10, 8)
        res = match([det(0, 0, 10, 10, 1.0)], [gt_b, gt_a])
        assert res.matches == ((0, 1),)
        assert res.misses == (0,)

    def test_score_priority(self):
        gt = [BBox(0, 0, 10, 10)]
        weak = det(0, 0, 10, 9, 0.3)
        strong = det(0, 0, 10, 8, 0.9)
        res = match([weak, strong], gt)
        assert res.matches == ((1, 0),)
        assert res.false_positives == (0,)

    def test_equal_iou_takes_lowest_gt_index(self):
        gts = [BBox(0, 0, 10, 8), BBox(0, 2, 10, 10)]  # both iou 0.8
        res = match([det(0, 0, 10, 10, 1.0)], gts)
        assert res.matches == ((0, 0),)

    def test_threshold_excludes_weak_overlap(self):
        res = match([det(0, 0, 10, 10, 1.0)], [BBox(0, 0, 10, 8)], iou_threshold=0.9)
        assert res.matches == ()
        assert res.false_positives == (0,)
        assert res.misses == (0,)

    def test_assignment_is_injective(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            gts = [BBox(x, y, x + 8, y + 8)
                   for x, y in rng.uniform(0, 30, size=(int(rng.integers(0, 4)), 2))]
            dets = []
            for _ in range(int(rng.integers(0, 5))):
                x, y = rng.uniform(0, 30, size=2)
                dets.append(det(x, y, x + 8, y + 8, float(rng.uniform(0.1, 1))))
            res = match(dets, gts)
            di = [m[0] for m in res.matches]
            gj = [m[1] for m in res.matches]
            assert len(set(di)) == len(di)
            assert len(set(gj)) == len(gj)
            assert sorted(di + list(res.false_positives)) == list(range(len(dets)))
            assert sorted(gj + list(res.misses)) == list(range(len(gts)))


class TestAccuracy:
    def test_all_matched(self):
        per = [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10)]),
               ([det(5, 5, 9, 9, 0.8)], [BBox(5, 5, 9, 9)])]
        assert accuracy(per) == (2, 2, 0)

    def test_half_matched(self):
        per = [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10), BBox(30, 30, 40, 40)])]
        matched, total, fps = accuracy(per)
        assert (matched, total, fps) == (1, 2, 0)
        assert matched / total == 0.5

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            accuracy([([det(0, 0, 10, 10, 0.9)], [])])


class TestCurve:
    def test_perfect_detector_single_point(self):
        per = [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10)])]
        pts = curve(per)
        assert len(pts) == 1
        assert (pts[0].fppi, pts[0].miss_rate, pts[0].threshold) == (0.0, 0.0, 0.9)

    def test_silent_detector_single_point(self):
        pts = curve([([], [BBox(0, 0, 10, 10)])])
        assert len(pts) == 1
        assert (pts[0].fppi, pts[0].miss_rate) == (0.0, 1.0)
        assert math.isinf(pts[0].threshold)

    def test_two_image_hand_aggregation(self):
        # image 0: TP at 0.9; image 1: lone FP at 0.4; 2 gts total
        per = [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10)]),
               ([det(50, 50, 60, 60, 0.4)], [BBox(0, 0, 10, 10)])]
        pts = curve(per)
        assert [(p.fppi, p.miss_rate, p.threshold) for p in pts] == [
            (0.0, 0.5, 0.9), (0.5, 0.5, 0.4)]

    def test_equal_fppi_keeps_lowest_miss(self):
        per = [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10)]),
               ([det(5, 5, 15, 15, 0.7)], [BBox(5, 5, 15, 15)])]
        pts = curve(per)
        assert len(pts) == 1
        assert (pts[0].fppi, pts[0].miss_rate, pts[0].threshold) == (0.0, 0.0, 0.7)

    def test_sorted_and_distinct_fppi(self):
        rng = np.random.default_rng(42)
        per = []
        for _ in range(4):
            gts = [BBox(0, 0, 10, 10)]
            dets = [det(x, x, x + 9, x + 9, float(rng.choice([0.2, 0.5, 0.8])))
                    for x in rng.uniform(0, 20, size=int(rng.integers(0, 4)))]
            per.append((dets, gts))
        pts = curve(per)
        fppis = [p.fppi for p in pts]
        assert fppis == sorted(fppis)
        assert len(set(fppis)) == len(fppis)

    def test_final_point_agrees_with_accuracy(self):
        rng = np.random.default_rng(7)
        per = []
        for _ in range(5):
            gts = [BBox(x, y, x + 10, y + 10)
                   for x, y in rng.uniform(0, 30, size=(int(rng.integers(1, 3)), 2))]
            dets = [det(x, y, x + 10, y + 10, float(s)) for (x, y), s in
                    zip(rng.uniform(0, 30, size=(int(rng.integers(0, 4)), 2)),
                        rng.uniform(0.1, 1.0, size=4))]
            per.append((dets, gts))
        matched, total, fps = accuracy(per)
        last = curve(per)[-1]
        assert last.miss_rate == pytest.approx(1.0 - matched / total)
        assert last.fppi == pytest.approx(fps / len(per))

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            curve([([], [])])


class TestLamr:
    def test_references(self):
        assert len(LAMR_REFERENCES) == 9
        assert LAMR_REFERENCES[0] == pytest.approx(1e-2)
        assert LAMR_REFERENCES[-1] == pytest.approx(1.0)
        ratios = np.diff(np.log10(LAMR_REFERENCES))
        np.testing.assert_allclose(ratios, 0.25)

    def test_constant_curve(self):
        pts = [CurvePoint(fppi=0.005, miss_rate=0.3, threshold=0.5)]
        assert lamr(pts) == pytest.approx(0.3)

    def test_hand_curve(self):
        pts = [CurvePoint(0.005, 0.8, 0.9), CurvePoint(0.5, 0.4, 0.6),
               CurvePoint(2.0, 0.2, 0.1)]
        want = math.exp((7 * math.log(0.8) + 2 * math.log(0.4)) / 9)
        assert lamr(pts) == pytest.approx(want, rel=1e-12)
        assert lamr(pts) == pytest.approx(0.686, abs=5e-4)

    def test_curve_right_of_all_references(self):
        assert lamr([CurvePoint(5.0, 0.2, 0.1)]) == 1.0

    def test_floor_clamp(self):
        assert lamr([CurvePoint(0.005, 0.0, 0.9)]) == pytest.approx(MISS_RATE_FLOOR, rel=1e-12)

    def test_empty_curve(self):
        with pytest.raises(EmptyCurveError):
            lamr([])

    def test_range_property(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            pts = [CurvePoint(float(f), float(m), 0.5)
                   for f, m in zip(np.sort(rng.uniform(0, 2, n)), rng.uniform(0, 1, n))]
            assert MISS_RATE_FLOOR <= lamr(pts) <= 1.0

    def test_unsorted_input_is_sorted_internally(self):
        pts = [CurvePoint(0.5, 0.4, 0.6), CurvePoint(0.005, 0.8, 0.9),
               CurvePoint(2.0, 0.2, 0.1)]
        want = math.exp((7 * math.log(0.8) + 2 * math.log(0.4)) / 9)
        assert lamr(pts) == pytest.approx(want, rel=1e-12)


class TestEvaluate:
    def perfect(self):
        return [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10)]),
                ([det(3, 3, 9, 9, 0.7)], [BBox(3, 3, 9, 9)])]

    def test_perfect_report(self):
        rep = evaluate(self.perfect())
        assert rep.detection_accuracy == 1.0
        assert (rep.matched_count, rep.total_gt, rep.false_positives) == (2, 2, 0)
        # miss 0 clamps at the floor
        assert rep.lamr == pytest.approx(MISS_RATE_FLOOR, rel=1e-12)

    def test_accuracy_identity(self):
        per = [([det(0, 0, 10, 10, 0.9)], [BBox(0, 0, 10, 10), BBox(30, 30, 40, 40)])]
        rep = evaluate(per)
        assert rep.detection_accuracy == rep.matched_count / rep.total_gt

    def test_shuffle_invariance(self):
        rng = np.random.default_rng(42)
        gts = [BBox(0, 0, 10, 10), BBox(20, 0, 30, 10)]
        dets = [det(0, 0, 10, 9, 0.9), det(20, 0, 30, 9, 0.9),
                det(40, 40, 50, 50, 0.5), det(1, 0, 11, 10, 0.5)]
        base = evaluate([(dets, gts)])
        for _ in range(6):
            shuffled = [dets[i] for i in rng.permutation(len(dets))]
            rep = evaluate([(shuffled, gts)])
            assert rep == base


class TestFormatters:
    def test_report_text(self):
        rep = evaluate([([det(0, 0, 10, 10, 0.9)],
                         [BBox(0, 0, 10, 10), BBox(30, 30, 40, 40)])])
        text = format_report(rep)
        assert text == ("accuracy = 0.500000\n"
                        "lamr = 0.500000\n"
                        "tp = 1\n"
                        "fp = 0\n"
                        "miss = 1\n")

    def test_curve_text(self):
        pts = [CurvePoint(0.0, 0.5, 0.9), CurvePoint(0.5, 0.25, 0.4)]
        assert format_curve(pts) == "0,0.5,0.9\n0.5,0.25,0.4\n"
        assert format_curve([]) == ""
