"""Test-time path: modulate, forward, decode, and cluster into detections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import network
from .errors import BadConfigError, MalformedRecordError
from .gridcodec import BBox, Candidate, GridSpec, decode
from .saliency import ModulationCfg, frequency_tuned_saliency, modulate

SALIENCY_MODES = ("builtin", "external", "off")


@dataclass(frozen=True)
class Detection:
    """One clustered detection: merged box, summed score, member count."""

    box: BBox
    score: float
    cluster_size: int

    def __post_init__(self):
        if not (math.isfinite(self.score) and self.score > 0):
            raise BadConfigError(f"detection score must be positive, got {self.score}")
        if self.cluster_size < 1:
            raise BadConfigError(f"cluster_size must be >= 1, got {self.cluster_size}")


@dataclass(frozen=True)
class ClusterCfg:
    iou_threshold: float = 0.5
    min_cluster_size: int = 1
    coverage_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise BadConfigError("iou_threshold must be in (0, 1]")
        if self.min_cluster_size < 1:
            raise BadConfigError("min_cluster_size must be >= 1")
        if not 0.0 <= self.coverage_threshold <= 1.0:
            raise BadConfigError("coverage_threshold must be in [0, 1]")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    inter = a.intersection_area(b)
    if inter <= 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def cluster(candidates: Sequence[Candidate], cfg: ClusterCfg = ClusterCfg()
            ) -> list[Detection]:
    """Greedy seed-and-absorb clustering of decoded candidates.

    The highest-scoring unassigned candidate seeds a cluster and absorbs
    every remaining candidate whose IoU with the seed clears the
    threshold.  A cluster emits one Detection whose box is the
    score-weighted mean of member corners and whose score is the member
    sum; clusters smaller than min_cluster_size are dropped.  All
    orderings break ties by (score desc, x1, y1) so the result is a
    deterministic function of the candidate set.
    """
    order = sorted(range(len(candidates)),
                   key=lambda i: (-candidates[i].score,
                                  candidates[i].box.x1, candidates[i].box.y1))
    assigned = [False] * len(candidates)
    out: list[Detection] = []
    for si in order:
        if assigned[si]:
            continue
        seed = candidates[si]
        members = [si]
        assigned[si] = True
        for mi in order:
            if assigned[mi]:
                continue
            if iou(candidates[mi].box, seed.box) >= cfg.iou_threshold:
                members.append(mi)
                assigned[mi] = True
        total = sum(candidates[k].score for k in members)
        corners = np.zeros(4)
        # normalized weights keep a single-member cluster bit-identical
        # to its candidate
        for k in members:
            corners += (candidates[k].score / total) * np.array(candidates[k].box.as_tuple())
        if len(members) >= cfg.min_cluster_size:
            out.append(Detection(box=BBox(*corners), score=total,
                                 cluster_size=len(members)))
    out.sort(key=lambda d: (-d.score, d.box.x1, d.box.y1))
    return out


def detect(params: dict[str, np.ndarray], net_cfg: network.NetConfig,
           img: np.ndarray, sal_mode: str = "builtin",
           smap: np.ndarray | None = None,
           mod_cfg: ModulationCfg = ModulationCfg(),
           cfg: ClusterCfg = ClusterCfg()) -> list[Detection]:
    """Full single-image pipeline: modulate, forward (eval), decode, cluster.

    sal_mode picks the detector input: "builtin" computes the saliency
    map from the image, "external" uses the supplied smap, "off" feeds
    the raw image.
    """
    if sal_mode not in SALIENCY_MODES:
        raise BadConfigError(f"unknown saliency mode {sal_mode!r}")
    if sal_mode == "builtin":
        inp = modulate(img, frequency_tuned_saliency(img), mod_cfg)
    elif sal_mode == "external":
        if smap is None:
            raise BadConfigError("external saliency mode needs a map")
        inp = modulate(img, smap, mod_cfg)
    else:
        inp = img
    coverage, bbox, _ = network.forward(params, net_cfg, inp, train_mode=False)
    grid = GridSpec(net_cfg.stride_product, net_cfg.grid_w, net_cfg.grid_h)
    return cluster(decode(coverage, bbox, grid, cfg.coverage_threshold), cfg)


def format_detections(per_image: Sequence[tuple[str, Sequence[Detection]]]) -> str:
    """Detections file: one "image_id x1 y1 x2 y2 score" line per detection."""
    lines = []
    for image_id, dets in per_image:
        for d in dets:
            lines.append(f"{image_id} {d.box.x1:.2f} {d.box.y1:.2f} "
                         f"{d.box.x2:.2f} {d.box.y2:.2f} {d.score:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_detections(text: str) -> dict[str, list[Detection]]:
    """Inverse of format_detections, keyed by image id.

    Images without detections simply have no lines, so callers supply
    the image list from the manifest.
    """
    out: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise MalformedRecordError(f"detections line {lineno}: expected 6 fields")
        image_id = parts[0]
        try:
            x1, y1, x2, y2, score = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise MalformedRecordError(f"detections line {lineno}: {exc}") from None
        out.setdefault(image_id, []).append(
            Detection(box=BBox(x1, y1, x2, y2), score=score, cluster_size=1))
    return out
