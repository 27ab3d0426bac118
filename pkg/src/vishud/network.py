"""A small fully-convolutional detector network with exact backprop.

The net is a stack of conv(3x3, same padding) / ReLU / maxpool(2x2)
blocks followed by dropout and two 1x1 heads: a sigmoid coverage head
(1 channel) and a linear corner-offset head (4 channels).  Spatial
resolution drops by 2 at every pooling block, so the output grids sit at
input_size / 2^(pool count).

Everything is float64 numpy.  forward() records enough state to make
backward() an exact reverse-mode differentiation of the same
computation; the pairing is verified against finite differences in the
test suite, which is the contract the rest of the pipeline leans on.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadConfigError, CacheMismatchError, CheckpointError, ShapeMismatchError

CHECKPOINT_MAGIC = b"VSHD"
CHECKPOINT_VERSION = 1

_SIGMOID_EPS = 1e-12


@dataclass(frozen=True)
class ConvBlock:
    """One conv/ReLU stage; `pool` appends a 2x2 max pool."""

    channels: int
    kernel: int = 3
    pool: bool = True

    def __post_init__(self):
        if self.channels < 1:
            raise BadConfigError(f"channels must be positive, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise BadConfigError(f"kernel must be odd and positive, got {self.kernel}")


@dataclass(frozen=True)
class NetConfig:
    input_w: int
    input_h: int
    input_channels: int
    blocks: tuple[ConvBlock, ...]
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise BadConfigError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if not self.blocks:
            raise BadConfigError("at least one block is required")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise BadConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        sp = self.stride_product
        if self.input_w % sp or self.input_h % sp:
            raise BadConfigError(
                f"input {self.input_w}x{self.input_h} not divisible by stride {sp}")

    @property
    def stride_product(self) -> int:
        return 2 ** sum(1 for b in self.blocks if b.pool)

    @property
    def grid_w(self) -> int:
        return self.input_w // self.stride_product

    @property
    def grid_h(self) -> int:
        return self.input_h // self.stride_product

    @classmethod
    def default(cls, input_w: int = 64, input_h: int = 64, input_channels: int = 3,
                channels: Sequence[int] = (16, 32, 64, 64),
                dropout_rate: float = 0.5) -> "NetConfig":
        """Desk-scale detector: four pooled 3x3 blocks, overall stride 16."""
        return cls(input_w=input_w, input_h=input_h, input_channels=input_channels,
                   blocks=tuple(ConvBlock(c) for c in channels),
                   dropout_rate=dropout_rate)

    def canonical(self) -> str:
        parts = [f"in={self.input_w}x{self.input_h}x{self.input_channels}",
                 f"dropout={self.dropout_rate!r}"]
        for b in self.blocks:
            parts.append(f"conv{b.kernel}x{b.kernel}:{b.channels}:pool={int(b.pool)}")
        return ";".join(parts)

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical().encode("ascii")).digest()


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in declaration order."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = cfg.input_channels
    for idx, blk in enumerate(cfg.blocks):
        shapes[f"conv{idx}.w"] = (blk.channels, c_in, blk.kernel, blk.kernel)
        shapes[f"conv{idx}.b"] = (blk.channels,)
        c_in = blk.channels
    shapes["cov.w"] = (1, c_in)
    shapes["cov.b"] = (1,)
    shapes["box.w"] = (4, c_in)
    shapes["box.b"] = (4,)
    return shapes


def init(cfg: NetConfig, seed: int) -> dict[str, np.ndarray]:
    """He-normal weights (variance 2/fan_in), zero biases, seeded."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


def _check_params(cfg: NetConfig, params: dict[str, np.ndarray]):
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        raise ShapeMismatchError(
            f"parameter names {sorted(params)} do not match config {sorted(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeMismatchError(
                f"{name}: expected shape {shape}, got {params[name].shape}")


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(c, h, w) -> (c*k*k, h*w) patch matrix under same-padding."""
    c, h, w = x.shape
    pad = kernel // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(padded, (kernel, kernel), axis=(1, 2))
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kernel * kernel, h * w)


def _col2im(dpatches: np.ndarray, shape: tuple[int, int, int], kernel: int) -> np.ndarray:
    """Adjoint of _im2col: fold (c*k*k, h*w) gradients back to (c, h, w)."""
    c, h, w = shape
    pad = kernel // 2
    dpadded = np.zeros((c, h + 2 * pad, w + 2 * pad))
    d6 = dpatches.reshape(c, kernel, kernel, h, w)
    for di in range(kernel):
        for dj in range(kernel):
            dpadded[:, di:di + h, dj:dj + w] += d6[:, di, dj]
    return dpadded[:, pad:pad + h, pad:pad + w]


def _maxpool(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pool; returns pooled values and flat argmax (0..3)."""
    c, h, w = a.shape
    windows = a.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return pooled, idx


def _maxpool_backward(grad: np.ndarray, idx: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = shape
    dwindows = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(dwindows, idx[..., None], grad[..., None], axis=-1)
    return dwindows.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIGMOID_EPS, 1.0 - _SIGMOID_EPS)


@dataclass
class ForwardCache:
    """Everything backward() needs to retrace one forward pass exactly."""

    cfg: NetConfig
    seed: int
    conv_inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    pool_idx: list[np.ndarray | None] = field(default_factory=list)
    pool_shapes: list[tuple[int, int, int] | None] = field(default_factory=list)
    dropout_mask: np.ndarray | None = None
    head_input: np.ndarray | None = None
    coverage: np.ndarray | None = None


def forward(params: dict[str, np.ndarray], cfg: NetConfig, img: np.ndarray,
            train_mode: bool = False, seed: int = 0
            ) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run the net on one image.

    Returns (coverage, bbox, cache) with coverage of shape
    (grid_h, grid_w) strictly inside (0, 1) and bbox of shape
    (grid_h, grid_w, 4).  In train mode, inverted dropout (mask scaled by
    1/(1-p)) is applied to the head input, seeded for reproducibility;
    in eval mode the pass is fully deterministic.
    """
    _check_params(cfg, params)
    if img.shape != (cfg.input_h, cfg.input_w, cfg.input_channels):
        raise ShapeMismatchError(
            f"image shape {img.shape} does not match config "
            f"{(cfg.input_h, cfg.input_w, cfg.input_channels)}")
    cache = ForwardCache(cfg=cfg, seed=seed)
    x = img.transpose(2, 0, 1)
    for idx, blk in enumerate(cfg.blocks):
        cache.conv_inputs.append(x)
        w = params[f"conv{idx}.w"]
        b = params[f"conv{idx}.b"]
        patches = _im2col(x, blk.kernel)
        z = (w.reshape(blk.channels, -1) @ patches + b[:, None]).reshape(
            blk.channels, x.shape[1], x.shape[2])
        cache.preacts.append(z)
        a = np.maximum(z, 0.0)
        if blk.pool:
            cache.pool_shapes.append(a.shape)
            a, pidx = _maxpool(a)
            cache.pool_idx.append(pidx)
        else:
            cache.pool_shapes.append(None)
            cache.pool_idx.append(None)
        x = a
    if train_mode and cfg.dropout_rate > 0.0:
        rng = np.random.default_rng(seed)
        keep = rng.random(x.shape) >= cfg.dropout_rate
        mask = keep / (1.0 - cfg.dropout_rate)
        x = x * mask
        cache.dropout_mask = mask
    cache.head_input = x
    feat = x.reshape(x.shape[0], -1)
    cov_logit = params["cov.w"] @ feat + params["cov.b"][:, None]
    coverage = _sigmoid(cov_logit).reshape(cfg.grid_h, cfg.grid_w)
    cache.coverage = coverage
    bbox = (params["box.w"] @ feat + params["box.b"][:, None]).reshape(
        4, cfg.grid_h, cfg.grid_w).transpose(1, 2, 0)
    return coverage, bbox, cache


def backward(cache: ForwardCache, params: dict[str, np.ndarray],
             grad_coverage: np.ndarray, grad_bbox: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of any scalar with the given output partials.

    grad_coverage is d(scalar)/d(coverage) at the post-sigmoid output;
    grad_bbox is d(scalar)/d(bbox).  Returns arrays shaped like params.
    """
    cfg = cache.cfg
    _check_params(cfg, params)
    if (cache.head_input is None or cache.coverage is None
            or len(cache.conv_inputs) != len(cfg.blocks)):
        raise CacheMismatchError("cache does not belong to a completed forward pass")
    for idx, blk in enumerate(cfg.blocks):
        if cache.preacts[idx].shape[0] != blk.channels:
            raise CacheMismatchError(
                f"cache layer {idx} has {cache.preacts[idx].shape[0]} channels, "
                f"config wants {blk.channels}")
    if grad_coverage.shape != (cfg.grid_h, cfg.grid_w):
        raise ShapeMismatchError(f"grad_coverage shape {grad_coverage.shape}")
    if grad_bbox.shape != (cfg.grid_h, cfg.grid_w, 4):
        raise ShapeMismatchError(f"grad_bbox shape {grad_bbox.shape}")

    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    feat = cache.head_input.reshape(cache.head_input.shape[0], -1)

    cov = cache.coverage.reshape(1, -1)
    dcov_logit = grad_coverage.reshape(1, -1) * cov * (1.0 - cov)
    grads["cov.w"] = dcov_logit @ feat.T
    grads["cov.b"] = dcov_logit.sum(axis=1)

    dbox = grad_bbox.transpose(2, 0, 1).reshape(4, -1)
    grads["box.w"] = dbox @ feat.T
    grads["box.b"] = dbox.sum(axis=1)

    dfeat = params["cov.w"].T @ dcov_logit + params["box.w"].T @ dbox
    dx = dfeat.reshape(cache.head_input.shape)
    if cache.dropout_mask is not None:
        dx = dx * cache.dropout_mask

    for idx in reversed(range(len(cfg.blocks))):
        blk = cfg.blocks[idx]
        if blk.pool:
            dx = _maxpool_backward(dx, cache.pool_idx[idx], cache.pool_shapes[idx])
        dz = dx * (cache.preacts[idx] > 0.0)
        x_in = cache.conv_inputs[idx]
        patches = _im2col(x_in, blk.kernel)
        dz_flat = dz.reshape(blk.channels, -1)
        grads[f"conv{idx}.w"] = (dz_flat @ patches.T).reshape(params[f"conv{idx}.w"].shape)
        grads[f"conv{idx}.b"] = dz_flat.sum(axis=1)
        dpatches = params[f"conv{idx}.w"].reshape(blk.channels, -1).T @ dz_flat
        dx = _col2im(dpatches, x_in.shape, blk.kernel)
    return grads


def save_checkpoint(params: dict[str, np.ndarray], cfg: NetConfig) -> bytes:
    """Serialize parameters: magic, version, config digest, raw float64 LE."""
    _check_params(cfg, params)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), cfg.digest()]
    for name in param_shapes(cfg):
        chunks.append(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return b"".join(chunks)


def load_checkpoint(data: bytes, cfg: NetConfig) -> dict[str, np.ndarray]:
    """Inverse of save_checkpoint; validates magic, version, and digest."""
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if data[8:40] != cfg.digest():
        raise CheckpointError("checkpoint was written for a different network config")
    params: dict[str, np.ndarray] = {}
    offset = 40
    for name, shape in param_shapes(cfg).items():
        n = int(np.prod(shape))
        end = offset + 8 * n
        if end > len(data):
            raise CheckpointError("checkpoint payload is truncated")
        params[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes in checkpoint")
    return params
