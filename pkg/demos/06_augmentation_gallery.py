"""The 14-variant flip/rotation augmentation family, written as files.

Renders one scene and writes every augmented variant (original,
horizontal flip, six small rotations, and the flipped rotations) with
its transformed boxes to demos/out/06/.
"""

from pathlib import Path

from vishud import datasets, raster, training
from vishud.datasets import Annotation, format_idl

OUT = Path(__file__).parent / "out" / "06"
OUT.mkdir(parents=True, exist_ok=True)

scenes = datasets.synth_generate(datasets.SynthCfg(count=1, seed=11))
img, ann = scenes[0]

names = (["original", "hflip"]
         + [f"rot{t:+d}" for t in (-7, -5, -3, 3, 5, 7)]
         + [f"hflip_rot{t:+d}" for t in (-7, -5, -3, 3, 5, 7)])

variants = training.augment(img, ann.boxes)
print(f"{len(variants)} variants from 1 scene with {len(ann.boxes)} boxes")
records = []
for (var_img, var_boxes), name in zip(variants, names):
    path = f"variant_{name}.ppm"
    (OUT / path).write_bytes(raster.save_pnm(var_img))
    records.append(Annotation(image_path=path, boxes=tuple(var_boxes),
                              source="synthetic"))
    corners = ["(" + ", ".join(f"{v:.1f}" for v in b.as_tuple()) + ")"
               for b in var_boxes]
    print(f"  {name:14s} {len(var_boxes)} boxes  {' '.join(corners)}")

(OUT / "variants.idl").write_text(format_idl(records))
print(f"wrote {len(variants)} images + variants.idl to {OUT}")
