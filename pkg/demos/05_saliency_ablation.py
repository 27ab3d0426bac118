"""Does saliency modulation help under clutter and occlusion?

Trains the same net twice on heavy-clutter scenes (clutter 0.8,
occlusion 0.5) — once on MVSI inputs, once on raw images — and compares
held-out detection accuracy.  One seed only, so treat the delta as a
demo, not a measurement; the acceptance suite repeats this over five
seeds and checks the median.
"""

import time

from vishud import datasets, evaluation, inference, network, training

SEED = 1
cfg = datasets.SynthCfg(count=80, clutter_density=0.8, occlusion_prob=0.5, seed=SEED)
scenes = datasets.synth_generate(cfg)
n_train = cfg.count - cfg.count // 6
train_set = [(img, ann.boxes) for img, ann in scenes[:n_train]]
test_scenes = scenes[n_train:]
print(f"{n_train} train / {len(test_scenes)} test scenes, "
      f"clutter {cfg.clutter_density}, occlusion {cfg.occlusion_prob}")

net_cfg = network.NetConfig.default()
tcfg = training.TrainConfig(epochs=30, iterations_per_epoch=20, batch_size=4,
                            base_lr=2e-3, lr_decay_start_epoch=30, seed=SEED)

for saliency_on in (True, False):
    label = "mvsi" if saliency_on else "raw "
    start = time.perf_counter()
    result = training.train(train_set, tcfg, net_cfg, saliency_on=saliency_on)
    mode = "builtin" if saliency_on else "off"
    per = [(inference.detect(result.params, net_cfg, img, sal_mode=mode),
            list(ann.boxes)) for img, ann in test_scenes]
    report = evaluation.evaluate(per)
    print(f"{label} input: accuracy {report.detection_accuracy:.3f}, "
          f"lamr {report.lamr:.3f}  ({time.perf_counter() - start:.0f}s)")
