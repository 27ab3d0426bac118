"""Saliency maps and the multiplied visual salient image (MVSI).

The detector never sees the raw photo: it sees the image multiplied,
pixel by pixel, by its saliency map scaled by a gain (0.8 by default).
Maps come either from the built-in frequency-tuned estimator or from an
externally computed grayscale file.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import raster
from .errors import BadConfigError, DimensionMismatchError, UnsupportedMagicError


@dataclass(frozen=True)
class ModulationCfg:
    """Gain applied to the saliency map before multiplication."""

    alpha: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise BadConfigError(f"alpha must be in (0, 1], got {self.alpha}")


def _minmax(values: np.ndarray) -> np.ndarray:
    """Stretch to [0, 1]; a zero-dynamic-range field maps to all zeros.

    The all-zeros convention encodes "nothing here is salient", which is
    the safe reading for a constant map.
    """
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def frequency_tuned_saliency(img: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Per-pixel color distance from the global image mean, on a blurred copy.

    Each pixel of the Gaussian-blurred image is compared (Euclidean
    distance over channels) against the per-channel mean of the original
    image; the distance field is then min-max normalized.  Uniform images
    produce an all-zero map.
    """
    raster.check_image(img)
    mean = img.mean(axis=(0, 1))
    blurred = raster.gaussian_blur(img, sigma)
    dist = np.sqrt(((blurred - mean) ** 2).sum(axis=2))
    return _minmax(dist)


def load_external_map(data: bytes, target_w: int, target_h: int) -> np.ndarray:
    """Load a P5 grayscale saliency map, resize it, and normalize to [0, 1]."""
    if not data.startswith(b"P5"):
        magic = data[:2].decode("ascii", errors="replace")
        raise UnsupportedMagicError(f"external saliency maps must be P5, got {magic!r}")
    img = raster.load_pnm(data)
    resized = raster.resize_bilinear(img, target_w, target_h)[:, :, 0]
    return _minmax(resized)


def modulate(img: np.ndarray, smap: np.ndarray, cfg: ModulationCfg = ModulationCfg()) -> np.ndarray:
    """Multiply an image by its saliency map scaled by cfg.alpha.

    Output values lie in [0, alpha].  No re-normalization is applied
    afterwards; the detector consumes the damped image as-is.
    """
    if smap.shape != img.shape[:2]:
        raise DimensionMismatchError(
            f"map shape {smap.shape} does not match image plane {img.shape[:2]}")
    return img * (cfg.alpha * smap)[:, :, None]
