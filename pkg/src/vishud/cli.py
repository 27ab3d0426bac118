"""Command-line surface for the detection pipeline.

One executable, seven subcommands: saliency/MVSI preview, label-grid
dumps, synthetic dataset generation, training, detection, evaluation,
and augmentation.  Every command is deterministic given its inputs and
seed; exit codes are 0 on success, 1 on processing errors (message
names the failing command), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datasets, evaluation, inference, network, raster, training
from .errors import BadConfigError, VishudError
from .gridcodec import BBox, GridSpec, encode, format_labelgrid
from .saliency import ModulationCfg, frequency_tuned_saliency, load_external_map, modulate

DESK_DEFAULTS = {
    "epochs": "30", "iterations": "20", "batch_size": "4", "base_lr": "2e-3",
    "decay_start": "30", "decay_every": "10", "decay_factor": "10",
    "w_cov": "1.0", "w_box": "2.0", "alpha": "0.8", "stride": "16",
    "blocks": "16,32,64,64", "dropout": "0.5", "seed": "42",
    "saliency": "builtin", "coverage_threshold": "0.5",
}
SYNTH_DEFAULTS = {
    "image_size": "64", "count": "360", "humans_min": "1", "humans_max": "2",
    "clutter_density": "0.5", "occlusion_prob": "0.25", "seed": "42",
    "train_frac": "0.7", "val_frac": "0.1", "test_frac": "0.2",
}


def parse_config_text(text: str, defaults: dict[str, str]) -> dict[str, str]:
    """Line-based "key = value" config; unknown or repeated keys are errors."""
    values = dict(defaults)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise BadConfigError(f"config line {lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in defaults:
            raise BadConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in seen:
            raise BadConfigError(f"config line {lineno}: repeated key {key!r}")
        if not value:
            raise BadConfigError(f"config line {lineno}: empty value for {key!r}")
        seen.add(key)
        values[key] = value
    return values


def _load_config(path: str | None, defaults: dict[str, str]) -> dict[str, str]:
    if path is None:
        return dict(defaults)
    return parse_config_text(Path(path).read_text(), defaults)


def _as_int(cfg: dict[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise BadConfigError(f"config key {key!r}: not an integer: {cfg[key]!r}") from None


def _as_float(cfg: dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise BadConfigError(f"config key {key!r}: not a number: {cfg[key]!r}") from None


def worker_count() -> int:
    """Worker cap from VSHD_THREADS (0 or unset = auto)."""
    raw = os.environ.get("VSHD_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise BadConfigError(f"VSHD_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise BadConfigError(f"VSHD_THREADS must be >= 0, got {n}")
    if n == 0:
        return min(4, os.cpu_count() or 1)
    return n


def _parse_size(value: str) -> tuple[int, int]:
    parts = value.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected WxH, got {value!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {value!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {value!r}")
    return w, h


def _parse_sal_mode(value: str) -> tuple[str, str | None]:
    if value in ("builtin", "off"):
        return value, None
    if value.startswith("external:") and value.partition(":")[2]:
        return "external", value.partition(":")[2]
    raise argparse.ArgumentTypeError(
        f"saliency mode must be builtin, off, or external:<dir>, got {value!r}")


def _sal_mode_from_cfg(cfg: dict[str, str]) -> tuple[str, str | None]:
    try:
        return _parse_sal_mode(cfg["saliency"])
    except argparse.ArgumentTypeError as exc:
        raise BadConfigError(f"config key 'saliency': {exc}") from None


def _parse_blocks(raw: str) -> tuple[int, ...]:
    try:
        channels = tuple(int(tok) for tok in raw.split(","))
    except ValueError:
        raise BadConfigError(f"blocks must be comma-separated integers, got {raw!r}") from None
    if not channels or any(c < 1 for c in channels):
        raise BadConfigError(f"blocks must be positive integers, got {raw!r}")
    return channels


def _net_config(cfg: dict[str, str], input_w: int, input_h: int,
                input_channels: int) -> network.NetConfig:
    channels = _parse_blocks(cfg["blocks"])
    net_cfg = network.NetConfig.default(
        input_w=input_w, input_h=input_h, input_channels=input_channels,
        channels=channels, dropout_rate=_as_float(cfg, "dropout"))
    if _as_int(cfg, "stride") != net_cfg.stride_product:
        raise BadConfigError(
            f"config stride {cfg['stride']} does not match the {len(channels)}-block "
            f"network stride {net_cfg.stride_product}")
    return net_cfg


def _load_split(manifest_path: str, split: str
                ) -> list[tuple[str, np.ndarray, tuple[BBox, ...]]]:
    """Load (image_path, image, boxes) for every manifest entry in a split."""
    base = Path(manifest_path).resolve().parent
    entries = [e for e in datasets.parse_manifest(Path(manifest_path).read_text())
               if e.split == split]
    if not entries:
        raise BadConfigError(f"manifest has no entries for split {split!r}")
    out = []
    for e in entries:
        img = raster.load_pnm((base / e.image_path).read_bytes())
        anns = datasets.parse_annotations((base / e.annotation_path).read_text())
        ann = anns[0]
        if len(anns) > 1:
            stem = Path(e.image_path).name
            ann = next((a for a in anns if Path(a.image_path).name == stem), anns[0])
        out.append((e.image_path, img, ann.boxes))
    return out


def _external_maps(items, directory: str, alpha: float):
    """Pre-modulate images with per-image external saliency maps."""
    mod = ModulationCfg(alpha=alpha)
    out = []
    for path, img, boxes in items:
        map_path = Path(directory) / (Path(path).stem + ".pgm")
        w, h = raster.image_size(img)
        smap = load_external_map(map_path.read_bytes(), w, h)
        out.append((path, modulate(img, smap, mod), boxes))
    return out


def cmd_saliency(args) -> int:
    img = raster.load_pnm(Path(args.inp).read_bytes())
    smap = frequency_tuned_saliency(img, sigma=args.sigma)
    Path(args.out).write_bytes(raster.save_pnm(smap[:, :, None]))
    if args.mvsi:
        mvsi = modulate(img, smap, ModulationCfg(alpha=args.alpha))
        Path(args.mvsi).write_bytes(raster.save_pnm(mvsi))
    return 0


def cmd_encode(args) -> int:
    anns = datasets.parse_annotations(Path(args.ann).read_text(), args.format)
    w, h = args.size
    grid = GridSpec.for_image(w, h, args.stride)
    for ann in anns:
        if len(anns) > 1:
            sys.stdout.write(f"# {ann.image_path}\n")
        sys.stdout.write(format_labelgrid(encode(ann.boxes, grid)))
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config, SYNTH_DEFAULTS)
    scfg = datasets.SynthCfg(
        image_size=_as_int(cfg, "image_size"), count=_as_int(cfg, "count"),
        humans_per_image=(_as_int(cfg, "humans_min"), _as_int(cfg, "humans_max")),
        clutter_density=_as_float(cfg, "clutter_density"),
        occlusion_prob=_as_float(cfg, "occlusion_prob"), seed=_as_int(cfg, "seed"))
    fractions = (_as_float(cfg, "train_frac"), _as_float(cfg, "val_frac"),
                 _as_float(cfg, "test_frac"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = datasets.synth_generate(scfg)
    for img, ann in scenes:
        stem = Path(ann.image_path).stem
        (out_dir / ann.image_path).write_bytes(raster.save_pnm(img))
        (out_dir / f"{stem}.idl").write_text(datasets.format_idl([ann]))
    manifests = datasets.split_manifest([ann for _, ann in scenes], fractions,
                                        scfg.seed)
    entries = [datasets.ManifestEntry(a.image_path, Path(a.image_path).stem + ".idl",
                                      m.split)
               for m in manifests for a in m.entries]
    (out_dir / "manifest.tsv").write_text(datasets.format_manifest(entries))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, DESK_DEFAULTS)
    mode, sal_dir = args.saliency if args.saliency else _sal_mode_from_cfg(cfg)
    items = _load_split(args.manifest, args.split)
    alpha = _as_float(cfg, "alpha")
    if mode == "external":
        items = _external_maps(items, sal_dir, alpha)
    h, w, c = items[0][1].shape
    net_cfg = _net_config(cfg, w, h, c)
    tcfg = training.TrainConfig(
        epochs=_as_int(cfg, "epochs"),
        iterations_per_epoch=_as_int(cfg, "iterations"),
        batch_size=_as_int(cfg, "batch_size"), base_lr=_as_float(cfg, "base_lr"),
        lr_decay_start_epoch=_as_int(cfg, "decay_start"),
        lr_decay_every=_as_int(cfg, "decay_every"),
        lr_decay_factor=_as_float(cfg, "decay_factor"),
        coverage_threshold=_as_float(cfg, "coverage_threshold"),
        seed=_as_int(cfg, "seed"))
    weights = training.LossWeights(w_cov=_as_float(cfg, "w_cov"),
                                   w_box=_as_float(cfg, "w_box"))
    dataset = [(img, boxes) for _, img, boxes in items]
    result = training.train(dataset, tcfg, net_cfg, weights,
                            saliency_on=(mode == "builtin"),
                            mod_cfg=ModulationCfg(alpha=alpha))
    Path(args.out).write_bytes(network.save_checkpoint(result.params, net_cfg))
    trace_path = args.trace or (args.out + ".trace")
    Path(trace_path).write_text(training.format_trace(result.trace))
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args.config, DESK_DEFAULTS)
    mode, sal_dir = args.saliency if args.saliency else _sal_mode_from_cfg(cfg)
    items = _load_split(args.manifest, args.split)
    alpha = _as_float(cfg, "alpha")
    if mode == "external":
        items = _external_maps(items, sal_dir, alpha)
    h, w, c = items[0][1].shape
    net_cfg = _net_config(cfg, w, h, c)
    params = network.load_checkpoint(Path(args.ckpt).read_bytes(), net_cfg)
    ccfg = inference.ClusterCfg(iou_threshold=args.cluster_iou,
                                min_cluster_size=args.min_cluster_size,
                                coverage_threshold=args.coverage_threshold)
    sal_mode = "off" if mode == "external" else mode
    mod = ModulationCfg(alpha=alpha)

    def run(item):
        _, img, _ = item
        return inference.detect(params, net_cfg, img, sal_mode, None, mod, ccfg)

    workers = worker_count()
    if workers > 1 and len(items) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    per_image = [(item[0], dets) for item, dets in zip(items, results)]
    Path(args.out).write_text(inference.format_detections(per_image))
    return 0


def cmd_eval(args) -> int:
    dets = inference.parse_detections(Path(args.dets).read_text())
    items = _load_split(args.manifest, args.split)
    per_image = [(dets.get(path, []), list(boxes)) for path, _, boxes in items]
    report = evaluation.evaluate(per_image, iou_threshold=args.iou)
    Path(args.out).write_text(evaluation.format_report(report))
    curve_path = args.curve or (args.out + ".curve")
    Path(curve_path).write_text(evaluation.format_curve(report.curve))
    return 0


def cmd_augment(args) -> int:
    img = raster.load_pnm(Path(args.inp).read_bytes())
    text = Path(args.ann).read_text()
    fmt = args.format if args.format != "auto" else datasets.sniff_format(text)
    ann = datasets.parse_annotations(text, fmt)[0]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, (vimg, vboxes) in enumerate(training.augment(img, ann.boxes)):
        name = f"variant_{k:02d}"
        (out_dir / f"{name}.ppm").write_bytes(raster.save_pnm(vimg))
        var_ann = datasets.Annotation(image_path=f"{name}.ppm",
                                      boxes=tuple(vboxes), source=ann.source)
        if fmt == "pennfudan":
            (out_dir / f"{name}.txt").write_text(datasets.format_pennfudan(var_ann))
        else:
            (out_dir / f"{name}.idl").write_text(datasets.format_idl([var_ann]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vishud",
        description="Saliency-modulated human detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("saliency", help="write a saliency map (and optional MVSI)")
    p.add_argument("--in", dest="inp", required=True, help="input PPM/PGM image")
    p.add_argument("--out", required=True, help="output PGM saliency map")
    p.add_argument("--mvsi", default=None, help="optional modulated image output")
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--sigma", type=float, default=1.0)

    p = sub.add_parser("encode", help="print the label grid for an annotation file")
    p.add_argument("--ann", required=True)
    p.add_argument("--format", choices=("auto", "pennfudan", "idl"), default="auto")
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--size", type=_parse_size, default=(64, 64), help="WxH")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--saliency", type=_parse_sal_mode, default=None,
                   help="builtin | off | external:<dir> (overrides config)")
    p.add_argument("--split", default="train", choices=datasets.SPLITS)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--trace", default=None, help="loss trace path (default <out>.trace)")

    p = sub.add_parser("detect", help="run detection over a manifest split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--saliency", type=_parse_sal_mode, default=None)
    p.add_argument("--split", default="test", choices=datasets.SPLITS)
    p.add_argument("--coverage-threshold", type=float, default=0.5)
    p.add_argument("--cluster-iou", type=float, default=0.5)
    p.add_argument("--min-cluster-size", type=int, default=1)
    p.add_argument("--out", required=True, help="detections file")

    p = sub.add_parser("eval", help="score a detections file against ground truth")
    p.add_argument("--dets", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=datasets.SPLITS)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", required=True, help="report file")
    p.add_argument("--curve", default=None, help="curve file (default <out>.curve)")

    p = sub.add_parser("augment", help="write the 14 augmentation variants")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ann", required=True)
    p.add_argument("--format", choices=("auto", "pennfudan", "idl"), default="auto")
    p.add_argument("--out", required=True, help="output directory")

    return parser


_HANDLERS = {
    "saliency": cmd_saliency, "encode": cmd_encode, "synth": cmd_synth,
    "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval,
    "augment": cmd_augment,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _HANDLERS[args.command](args)
    except (VishudError, OSError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
