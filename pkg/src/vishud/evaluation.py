"""Detection accuracy and log-average miss rate over FPPI references.

Two protocols share one greedy matcher: per-human detection accuracy
(matched ground truths / total ground truths at a fixed IoU threshold)
and the miss-rate curve swept over score thresholds, summarized by the
geometric mean of miss rates sampled at nine FPPI reference points
spaced evenly in log space over [1e-2, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyCurveError, NoGroundTruthError
from .gridcodec import BBox
from .inference import Detection, iou

LAMR_REFERENCES = tuple(10.0 ** (-2.0 + k / 4.0) for k in range(9))
MISS_RATE_FLOOR = 1e-4


@dataclass(frozen=True)
class MatchResult:
    """Greedy assignment for one image."""

    matches: tuple[tuple[int, int], ...]
    false_positives: tuple[int, ...]
    misses: tuple[int, ...]


@dataclass(frozen=True)
class CurvePoint:
    fppi: float
    miss_rate: float
    threshold: float


@dataclass(frozen=True)
class EvalReport:
    detection_accuracy: float
    matched_count: int
    total_gt: int
    false_positives: int
    curve: tuple[CurvePoint, ...]
    lamr: float


def match(detections: Sequence[Detection], gts: Sequence[BBox],
          iou_threshold: float = 0.5) -> MatchResult:
    """Assign detections to ground truths, best score first.

    Each detection takes the still-unmatched ground truth with the
    highest IoU if that IoU clears the threshold, else it is a false
    positive.  Detection order is fixed by (score desc, x1, y1) and
    equal-IoU ground truths resolve to the lowest index, making the
    result deterministic under input permutation.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score,
                                  detections[i].box.x1, detections[i].box.y1))
    taken = [False] * len(gts)
    matches = []
    false_positives = []
    for di in order:
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(detections[di].box, gt)
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            matches.append((di, best_j))
        else:
            false_positives.append(di)
    misses = tuple(j for j, t in enumerate(taken) if not t)
    return MatchResult(matches=tuple(matches),
                       false_positives=tuple(false_positives), misses=misses)


def accuracy(per_image: Sequence[tuple[Sequence[Detection], Sequence[BBox]]],
             iou_threshold: float = 0.5) -> tuple[int, int, int]:
    """(matched, total ground truths, false positives) over all images."""
    total_gt = sum(len(gts) for _, gts in per_image)
    if total_gt == 0:
        raise NoGroundTruthError("no ground-truth boxes to evaluate against")
    matched = 0
    fps = 0
    for dets, gts in per_image:
        res = match(dets, gts, iou_threshold)
        matched += len(res.matches)
        fps += len(res.false_positives)
    return matched, total_gt, fps


def curve(per_image: Sequence[tuple[Sequence[Detection], Sequence[BBox]]],
          iou_threshold: float = 0.5) -> list[CurvePoint]:
    """FPPI/miss-rate operating points, one per distinct score threshold.

    Equal-FPPI points collapse to the lowest miss rate; the result is
    sorted by FPPI ascending.  A detector that emits nothing yields the
    single point (0, 1) at an infinite threshold.
    """
    if sum(len(gts) for _, gts in per_image) == 0:
        raise NoGroundTruthError("no ground-truth boxes to evaluate against")
    total_gt = sum(len(gts) for _, gts in per_image)
    n_images = len(per_image)
    scores = sorted({d.score for dets, _ in per_image for d in dets}, reverse=True)
    if not scores:
        return [CurvePoint(fppi=0.0, miss_rate=1.0, threshold=math.inf)]
    best: dict[float, CurvePoint] = {}
    for s in scores:
        fp = 0
        miss = 0
        for dets, gts in per_image:
            kept = [d for d in dets if d.score >= s]
            res = match(kept, gts, iou_threshold)
            fp += len(res.false_positives)
            miss += len(res.misses)
        pt = CurvePoint(fppi=fp / n_images, miss_rate=miss / total_gt, threshold=s)
        prev = best.get(pt.fppi)
        if prev is None or pt.miss_rate < prev.miss_rate:
            best[pt.fppi] = pt
    return sorted(best.values(), key=lambda p: p.fppi)


def lamr(points: Sequence[CurvePoint]) -> float:
    """Geometric mean of miss rates sampled at the nine FPPI references.

    Sampling is a step function: each reference takes the miss rate of
    the point with the largest FPPI not exceeding it, or 1.0 when the
    curve starts to its right.  Samples are clamped below at 1e-4 so the
    log never diverges.
    """
    if len(points) == 0:
        raise EmptyCurveError("cannot average an empty curve")
    ordered = sorted(points, key=lambda p: p.fppi)
    samples = []
    for ref in LAMR_REFERENCES:
        miss = 1.0
        for p in ordered:
            if p.fppi <= ref:
                miss = p.miss_rate
            else:
                break
        samples.append(max(miss, MISS_RATE_FLOOR))
    # the exp/log round trip can drift a hair outside the sample range
    return float(np.clip(np.exp(np.mean(np.log(samples))), MISS_RATE_FLOOR, 1.0))


def evaluate(per_image: Sequence[tuple[Sequence[Detection], Sequence[BBox]]],
             iou_threshold: float = 0.5) -> EvalReport:
    """Full report: accuracy counts, curve, and log-average miss rate."""
    matched, total_gt, fps = accuracy(per_image, iou_threshold)
    pts = curve(per_image, iou_threshold)
    return EvalReport(detection_accuracy=matched / total_gt,
                      matched_count=matched, total_gt=total_gt,
                      false_positives=fps, curve=tuple(pts), lamr=lamr(pts))


def format_report(report: EvalReport) -> str:
    lines = [f"accuracy = {report.detection_accuracy:.6f}",
             f"lamr = {report.lamr:.6f}",
             f"tp = {report.matched_count}",
             f"fp = {report.false_positives}",
             f"miss = {report.total_gt - report.matched_count}"]
    return "\n".join(lines) + "\n"


def format_curve(points: Sequence[CurvePoint]) -> str:
    lines = [f"{p.fppi:.6g},{p.miss_rate:.6g},{p.threshold:.6g}" for p in points]
    return "\n".join(lines) + ("\n" if lines else "")
