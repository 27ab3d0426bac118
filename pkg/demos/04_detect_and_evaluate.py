"""Detection and evaluation on held-out synthetic scenes.

Loads the checkpoint from demo 03 (run that first), detects on 20 fresh
scenes, and prints the evaluation report plus the miss-rate/FPPI curve.
"""

from pathlib import Path

from vishud import datasets, evaluation, inference, network

CKPT = Path(__file__).parent / "out" / "03" / "model.ckpt"
if not CKPT.exists():
    raise SystemExit("run 03_toy_training.py first (no checkpoint found)")

net_cfg = network.NetConfig.default()
params = network.load_checkpoint(CKPT.read_bytes(), net_cfg)

scenes = datasets.synth_generate(datasets.SynthCfg(count=20, seed=99))
per_image = []
for img, ann in scenes:
    dets = inference.detect(params, net_cfg, img)
    per_image.append((dets, list(ann.boxes)))
    shown = ", ".join(f"{d.score:.2f}@({d.box.x1:.0f},{d.box.y1:.0f})" for d in dets)
    print(f"{ann.image_path}: {len(ann.boxes)} gt, {len(dets)} det  [{shown}]")

report = evaluation.evaluate(per_image)
print()
print(evaluation.format_report(report), end="")
print("\nfppi,miss rate,threshold")
print(evaluation.format_curve(report.curve), end="")
