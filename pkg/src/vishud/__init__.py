"""Saliency-modulated human detection with a grid-coded convolutional detector.

The pipeline follows the DetectNet shape: a saliency map multiplied into
the input image (MVSI), a fully-convolutional network predicting a
coverage grid plus per-cell corner offsets, greedy clustering of decoded
candidates, and miss-rate/accuracy evaluation.  Everything is numpy,
deterministic under explicit seeds, and exactly differentiated by hand.
"""

from .errors import VishudError
from .gridcodec import BBox, Candidate, GridSpec, LabelGrid, decode, encode
from .inference import ClusterCfg, Detection, cluster, detect, iou
from .network import NetConfig, init, forward, backward, load_checkpoint, save_checkpoint
from .saliency import ModulationCfg, frequency_tuned_saliency, modulate
from .training import (AdamState, LossWeights, TrainConfig, TrainResult, adam_init,
                       adam_step, augment, bbox_loss, coverage_loss, lr_at,
                       total_loss, train)
from .evaluation import CurvePoint, EvalReport, MatchResult, curve, evaluate, lamr, match
from .datasets import (Annotation, Manifest, SynthCfg, parse_idl, parse_pennfudan,
                       split_manifest, synth_generate)

__version__ = "0.1.0"

__all__ = [
    "VishudError", "BBox", "Candidate", "GridSpec", "LabelGrid", "decode", "encode",
    "ClusterCfg", "Detection", "cluster", "detect", "iou",
    "NetConfig", "init", "forward", "backward", "load_checkpoint", "save_checkpoint",
    "ModulationCfg", "frequency_tuned_saliency", "modulate",
    "AdamState", "LossWeights", "TrainConfig", "TrainResult", "adam_init",
    "adam_step", "augment", "bbox_loss", "coverage_loss", "lr_at", "total_loss",
    "train", "CurvePoint", "EvalReport", "MatchResult", "curve", "evaluate",
    "lamr", "match", "Annotation", "Manifest", "SynthCfg", "parse_idl",
    "parse_pennfudan", "split_manifest", "synth_generate",
]
