"""Short training run on synthetic scenes, with the loss trace.

Trains the default detector for a handful of epochs on 60 scenes and
prints the per-epoch mean total loss; the curve should drop steeply in
the first epochs.  The checkpoint lands in demos/out/03/ for the later
demos to reuse.
"""

import time
from pathlib import Path

from vishud import datasets, network, training

OUT = Path(__file__).parent / "out" / "03"
OUT.mkdir(parents=True, exist_ok=True)

scenes = datasets.synth_generate(datasets.SynthCfg(count=60, seed=3))
dataset = [(img, ann.boxes) for img, ann in scenes]

net_cfg = network.NetConfig.default()
cfg = training.TrainConfig(epochs=8, iterations_per_epoch=20, batch_size=4,
                           base_lr=2e-3, lr_decay_start_epoch=8, seed=3)

start = time.perf_counter()
result = training.train(dataset, cfg, net_cfg)
elapsed = time.perf_counter() - start

means = training.epoch_mean_losses(result.trace)
print("epoch  mean total loss")
for e, m in enumerate(means):
    bar = "#" * int(m / means[0] * 40)
    print(f"{e:5d}  {m:10.4f}  {bar}")
print(f"\nfinal/first ratio: {means[-1] / means[0]:.3f}  ({elapsed:.1f}s, "
      f"{cfg.epochs * cfg.iterations_per_epoch} iterations)")

(OUT / "model.ckpt").write_bytes(network.save_checkpoint(result.params, net_cfg))
(OUT / "trace.txt").write_text(training.format_trace(result.trace))
print(f"wrote model.ckpt and trace.txt to {OUT}")
