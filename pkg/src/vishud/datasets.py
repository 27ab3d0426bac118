"""Annotation parsing, manifests, and deterministic synthetic scenes.

Two line-grammar parsers cover the published pedestrian annotation
formats (per-image key/colon/value files and IDL record lists), and a
seeded generator renders desk-scale scenes: bright warm elliptical
"person" blobs over a dark background strewn with low-contrast clutter
rectangles, optionally occluded.  Ground truth is the tight bounding box
of each blob as rendered, before any occluder is painted on top.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (BadConfigError, BadFractionsError, MalformedBoxLineError,
                     MalformedRecordError, MissingFilenameError)
from .gridcodec import BBox

SPLITS = ("train", "val", "test")
SOURCES = ("pennfudan", "idl", "synthetic")

_FILENAME_RE = re.compile(r'^Image filename\s*:\s*"([^"]+)"\s*$')
_BOX_RE = re.compile(
    r'^Bounding box for object (\d+) "([^"]*)" \(Xmin, Ymin\) - \(Xmax, Ymax\)'
    r' : \((-?\d+), (-?\d+)\) - \((-?\d+), (-?\d+)\)\s*$')
_IDL_RECORD_RE = re.compile(r'^"([^"]+)"\s*(?::\s*(.+?))?\s*;$')
_IDL_TUPLE_RE = re.compile(r'\(\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\)')


@dataclass(frozen=True)
class Annotation:
    """One image's ground truth plus where it came from."""

    image_path: str
    boxes: tuple[BBox, ...]
    source: str

    def __post_init__(self):
        if not self.image_path:
            raise BadConfigError("annotation image_path must be non-empty")
        if self.source not in SOURCES:
            raise BadConfigError(f"unknown annotation source {self.source!r}")
        object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class Manifest:
    split: str
    entries: tuple[Annotation, ...]

    def __post_init__(self):
        if self.split not in SPLITS:
            raise BadConfigError(f"unknown split {self.split!r}")
        object.__setattr__(self, "entries", tuple(self.entries))


@dataclass(frozen=True)
class ManifestEntry:
    """One line of a manifest file."""

    image_path: str
    annotation_path: str
    split: str


@dataclass(frozen=True)
class SynthCfg:
    image_size: int = 64
    count: int = 360
    humans_per_image: tuple[int, int] = (1, 2)
    clutter_density: float = 0.5
    occlusion_prob: float = 0.25
    seed: int = 42

    def __post_init__(self):
        if self.image_size < 32:
            raise BadConfigError(f"image_size must be >= 32, got {self.image_size}")
        if self.count < 0:
            raise BadConfigError(f"count must be >= 0, got {self.count}")
        lo, hi = self.humans_per_image
        if not 1 <= lo <= hi:
            raise BadConfigError(f"humans_per_image must satisfy 1 <= lo <= hi, got {lo}..{hi}")
        for name, v in (("clutter_density", self.clutter_density),
                        ("occlusion_prob", self.occlusion_prob)):
            if not 0.0 <= v <= 1.0:
                raise BadConfigError(f"{name} must be in [0, 1], got {v}")


def parse_pennfudan(text: str) -> Annotation:
    """Parse one per-image annotation file in the key-colon-value grammar.

    Only the image filename line and the bounding-box lines carry
    information; every other line (sizes, masks, comments) is ignored.
    A line that starts like a box line but fails the coordinate grammar,
    or whose corners are not strictly ordered, is an error.
    """
    image_path = None
    boxes = []
    for line in text.splitlines():
        m = _FILENAME_RE.match(line)
        if m:
            image_path = m.group(1)
            continue
        if line.startswith("Bounding box"):
            m = _BOX_RE.match(line)
            if not m:
                raise MalformedBoxLineError(f"bad bounding-box line: {line!r}")
            x1, y1, x2, y2 = (int(g) for g in m.groups()[2:])
            if not (x1 < x2 and y1 < y2):
                raise MalformedBoxLineError(
                    f"corners not ordered in box line: ({x1}, {y1}) - ({x2}, {y2})")
            boxes.append(BBox(x1, y1, x2, y2))
    if image_path is None:
        raise MissingFilenameError("annotation has no Image filename line")
    return Annotation(image_path=image_path, boxes=tuple(boxes), source="pennfudan")


def format_pennfudan(ann: Annotation, label: str = "PASpersonWalking") -> str:
    """Serialize back to the key-colon-value grammar (integer coordinates)."""
    lines = [f'Image filename : "{ann.image_path}"',
             f"Objects with ground truth : {len(ann.boxes)}"]
    for k, b in enumerate(ann.boxes, start=1):
        lines.append(
            f'Bounding box for object {k} "{label}" (Xmin, Ymin) - (Xmax, Ymax)'
            f" : ({int(b.x1)}, {int(b.y1)}) - ({int(b.x2)}, {int(b.y2)})")
    return "\n".join(lines) + "\n"


def parse_idl(text: str) -> list[Annotation]:
    """Parse IDL records: `"<path>": (x1, y1, x2, y2), ...;` per line.

    A record with no box list (`"<path>";`) is a negative image.  Corner
    pairs may come in either order and are normalized to x1 < x2,
    y1 < y2.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        m = _IDL_RECORD_RE.match(line)
        if not m:
            raise MalformedRecordError(f"line {lineno}: not an IDL record: {line!r}")
        path, boxpart = m.group(1), m.group(2)
        boxes = []
        if boxpart is not None:
            tuples = _IDL_TUPLE_RE.findall(boxpart)
            leftover = _IDL_TUPLE_RE.sub("", boxpart).replace(",", "").strip()
            if not tuples or leftover:
                raise MalformedRecordError(f"line {lineno}: bad box list: {boxpart!r}")
            for sx1, sy1, sx2, sy2 in tuples:
                ax, bx = sorted((int(sx1), int(sx2)))
                ay, by = sorted((int(sy1), int(sy2)))
                if ax == bx or ay == by:
                    raise MalformedRecordError(
                        f"line {lineno}: degenerate box ({sx1}, {sy1}, {sx2}, {sy2})")
                boxes.append(BBox(ax, ay, bx, by))
        out.append(Annotation(image_path=path, boxes=tuple(boxes), source="idl"))
    return out


def format_idl(annotations: Sequence[Annotation]) -> str:
    """Serialize annotations as IDL records, one per line."""
    lines = []
    for ann in annotations:
        if ann.boxes:
            body = ", ".join(f"({int(b.x1)}, {int(b.y1)}, {int(b.x2)}, {int(b.y2)})"
                             for b in ann.boxes)
            lines.append(f'"{ann.image_path}": {body};')
        else:
            lines.append(f'"{ann.image_path}";')
    return "\n".join(lines) + ("\n" if lines else "")


def sniff_format(text: str) -> str:
    """Guess the annotation grammar from content: IDL records start with a quote."""
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        return "idl" if stripped.startswith('"') else "pennfudan"
    raise MalformedRecordError("empty annotation text")


def parse_annotations(text: str, fmt: str = "auto") -> list[Annotation]:
    """Parse either grammar into a list of annotations."""
    if fmt == "auto":
        fmt = sniff_format(text)
    if fmt == "pennfudan":
        return [parse_pennfudan(text)]
    if fmt == "idl":
        return parse_idl(text)
    raise BadConfigError(f"unknown annotation format {fmt!r}")


def parse_manifest(text: str) -> list[ManifestEntry]:
    """Parse manifest lines `<image_path>\\t<annotation_path>\\t<split>`."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedRecordError(
                f"manifest line {lineno}: expected 3 tab-separated fields")
        image_path, annotation_path, split = (p.strip() for p in parts)
        if split not in SPLITS:
            raise MalformedRecordError(f"manifest line {lineno}: unknown split {split!r}")
        if not image_path or not annotation_path:
            raise MalformedRecordError(f"manifest line {lineno}: empty path")
        entries.append(ManifestEntry(image_path, annotation_path, split))
    return entries


def format_manifest(entries: Sequence[ManifestEntry]) -> str:
    lines = [f"{e.image_path}\t{e.annotation_path}\t{e.split}" for e in entries]
    return "\n".join(lines) + ("\n" if lines else "")


def split_manifest(annotations: Sequence[Annotation],
                   fractions: tuple[float, float, float], seed: int
                   ) -> tuple[Manifest, Manifest, Manifest]:
    """Seeded shuffle, then partition into train/val/test.

    Split sizes are floor(fraction * n) with the remainder handed out by
    largest fractional part (earlier split wins ties), so sizes always
    sum to n and the splits are disjoint by construction.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractionsError(f"fractions must be >= 0 and sum to 1, got {fractions}")
    n = len(annotations)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    remainder = n - sum(sizes)
    by_frac = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in range(remainder):
        sizes[by_frac[i % 3]] += 1
    manifests = []
    start = 0
    for split, size in zip(SPLITS, sizes):
        chunk = [annotations[int(k)] for k in order[start:start + size]]
        manifests.append(Manifest(split=split, entries=tuple(chunk)))
        start += size
    return manifests[0], manifests[1], manifests[2]


def _place_blob(rng: np.random.Generator, size: int, boxes: list[BBox]
                ) -> tuple[np.ndarray, BBox] | None:
    """Sample a person ellipse that does not collide with earlier ones.

    Radii keep each blob's bounding box at least a full grid cell wide
    and tall at the default stride (size/4 grid), so every ground-truth
    box contains at least one cell center and stays encodable.
    """
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(40):
        rx = rng.uniform(0.135, 0.165) * size
        ry = rx * rng.uniform(1.7, 2.1)
        cx = rng.uniform(rx + 2.0, size - rx - 3.0)
        cy = rng.uniform(ry + 2.0, size - ry - 3.0)
        mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            continue
        box = BBox(float(xs.min()), float(ys.min()),
                   float(xs.max() + 1), float(ys.max() + 1))
        if all(box.intersection_area(b) <= 0.1 * min(box.area, b.area) for b in boxes):
            return mask, box
    return None


def _render_scene(rng: np.random.Generator, cfg: SynthCfg) -> tuple[np.ndarray, list[BBox]]:
    size = cfg.image_size
    base = rng.uniform(0.06, 0.13)
    img = np.full((size, size, 3), base)
    img += rng.uniform(-0.02, 0.02, size=3)
    img += rng.normal(0.0, 0.008, size=(size, size, 3))

    n_clutter = int(round(cfg.clutter_density * 14 * (size / 64.0) ** 2))
    for _ in range(n_clutter):
        w = int(rng.integers(4, max(5, size // 4)))
        h = int(rng.integers(4, max(5, size // 4)))
        x = int(rng.integers(0, size - w))
        y = int(rng.integers(0, size - h))
        img[y:y + h, x:x + w] = base + rng.uniform(-0.05, 0.12, size=3)

    k = int(rng.integers(cfg.humans_per_image[0], cfg.humans_per_image[1] + 1))
    boxes: list[BBox] = []
    for _ in range(k):
        placed = _place_blob(rng, size, boxes)
        if placed is None:
            continue
        mask, box = placed
        color = np.array([rng.uniform(0.78, 0.95), rng.uniform(0.55, 0.75),
                          rng.uniform(0.22, 0.42)])
        shade = 0.88 + 0.12 * rng.random(int(mask.sum()))
        img[mask] = color * shade[:, None]
        boxes.append(box)

    # Occluders go on after the blobs so they genuinely hide pixels;
    # ground truth keeps the full pre-occlusion extent.
    for box in boxes:
        if rng.random() >= cfg.occlusion_prob:
            continue
        bw, bh = box.width, box.height
        ow = max(3, int(round(bw * rng.uniform(0.6, 1.1))))
        oh = max(3, int(round(bh * rng.uniform(0.25, 0.45))))
        ox = int(round(box.x1 + rng.uniform(-0.2, 0.4) * bw))
        oy = int(round(box.y2 - oh * rng.uniform(0.7, 1.0)))
        ox = min(max(ox, 0), size - 1)
        oy = min(max(oy, 0), size - 1)
        color = base + rng.uniform(-0.04, 0.10, size=3)
        img[oy:min(oy + oh, size), ox:min(ox + ow, size)] = color

    return np.clip(img, 0.0, 1.0), boxes


def synth_generate(cfg: SynthCfg) -> list[tuple[np.ndarray, Annotation]]:
    """Render cfg.count annotated scenes, fully determined by cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for i in range(cfg.count):
        img, boxes = _render_scene(rng, cfg)
        ann = Annotation(image_path=f"synth_{i:05d}.ppm", boxes=tuple(boxes),
                         source="synthetic")
        out.append((img, ann))
    return out
