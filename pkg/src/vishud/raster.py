"""Image carrier and pixel-level primitives.

An image is a ``float64`` array of shape ``(height, width, channels)`` with
``channels`` 1 (grayscale) or 3 (RGB) and values in [0, 1].  8-bit integers
appear only at the netpbm I/O boundary; everything in between stays
real-valued so losses and gradients behave.

Single-channel 2-D arrays (saliency maps, coverage maps) are deliberately a
different shape so they cannot be confused with images.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    AngleOutOfRangeError,
    BadHeaderError,
    TruncatedPayloadError,
    UnsupportedMagicError,
)

_WHITESPACE = b" \t\r\n\x0b\x0c"


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate the (h, w, c) layout and [0, 1] range; returns the input."""
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (h, w, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"empty image: shape {img.shape}")
    if img.dtype != np.float64:
        raise ValueError(f"expected float64 image, got {img.dtype}")
    lo, hi = float(img.min()), float(img.max())
    if not (0.0 <= lo and hi <= 1.0):
        raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
    return img


def image_size(img: np.ndarray) -> tuple[int, int]:
    """(width, height) of an image or a 2-D map."""
    return img.shape[1], img.shape[0]


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the first payload byte (one
    whitespace byte after the last token is consumed, per netpbm).
    """
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n:
            b = data[pos:pos + 1]
            if b in (b"#",):
                while pos < n and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif b and b in _WHITESPACE:
                pos += 1
            else:
                break
        start = pos
        while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        if pos == start:
            raise BadHeaderError("header ended before all fields were read")
        tokens.append(data[start:pos])
    if pos >= n or data[pos:pos + 1] not in _WHITESPACE:
        raise BadHeaderError("missing whitespace between header and payload")
    return tokens, pos + 1


def load_pnm(data: bytes) -> np.ndarray:
    """Decode a binary PGM (P5) or PPM (P6) byte string into an image.

    Values are divided by the header maxval, so the result lies in [0, 1].
    """
    if not (data.startswith(b"P5") or data.startswith(b"P6")):
        magic = data[:2].decode("ascii", errors="replace")
        raise UnsupportedMagicError(f"unsupported netpbm magic {magic!r} (want P5 or P6)")
    tokens, payload_at = _header_tokens(data, 4)
    channels = 1 if tokens[0] == b"P5" else 3
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise BadHeaderError(f"non-numeric header fields: {tokens[1:]!r}") from None
    if width < 1 or height < 1:
        raise BadHeaderError(f"bad dimensions {width}x{height}")
    if not (1 <= maxval <= 255):
        raise BadHeaderError(f"maxval {maxval} outside [1, 255]")
    need = width * height * channels
    raw = np.frombuffer(data, dtype=np.uint8, count=min(need, len(data) - payload_at),
                        offset=payload_at)
    if raw.size < need:
        raise TruncatedPayloadError(f"payload has {raw.size} bytes, header promises {need}")
    img = raw.astype(np.float64).reshape(height, width, channels) / float(maxval)
    return np.clip(img, 0.0, 1.0)


def save_pnm(img: np.ndarray) -> bytes:
    """Encode an image as binary P5 (1 channel) or P6 (3 channels), maxval 255.

    Quantization rounds half up so the byte stream is platform-independent.
    """
    check_image(img)
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    quantized = np.floor(img * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    return header + quantized.tobytes()


def _resample_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Linear resample along one axis, align-corners-false sampling."""
    in_len = arr.shape[axis]
    pos = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    lo = np.floor(pos).astype(np.intp)
    frac = pos - lo
    a0 = np.take(arr, np.clip(lo, 0, in_len - 1), axis=axis)
    a1 = np.take(arr, np.clip(lo + 1, 0, in_len - 1), axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    f = frac.reshape(shape)
    return a0 * (1.0 - f) + a1 * f


def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resample to width x height with bilinear interpolation.

    Output pixel (i, j) samples the source at ((j+0.5)*sx - 0.5,
    (i+0.5)*sy - 0.5) with edge clamping; channels are untouched.
    Works on (h, w, c) images and on 2-D maps alike.
    """
    if width < 1 or height < 1:
        raise ValueError(f"target size {width}x{height} must be at least 1x1")
    out = _resample_axis(img, height, axis=0)
    out = _resample_axis(out, width, axis=1)
    return np.clip(out, 0.0, 1.0)


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror left-right (column j becomes width-1-j)."""
    return np.ascontiguousarray(img[:, ::-1])


def rotate(img: np.ndarray, theta: float) -> np.ndarray:
    """Rotate by `theta` degrees about the image center.

    Inverse mapping with bilinear interpolation; samples falling outside
    the frame contribute 0 (black fill).  Output size equals input size.
    Angles beyond +-45 degrees are rejected: this primitive exists for
    small-angle training augmentation, not general warping.
    """
    if not abs(theta) <= 45.0:
        raise AngleOutOfRangeError(f"|theta| = {abs(theta)} exceeds 45 degrees")
    if theta == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    t = math.radians(theta)
    cos_t, sin_t = math.cos(t), math.sin(t)
    ys, xs = np.mgrid[0:h, 0:w]
    xr = xs - cx
    yr = ys - cy
    # inverse of q = R(p - c) + c, with R the (x right, y down) rotation
    src_x = cos_t * xr + sin_t * yr + cx
    src_y = -sin_t * xr + cos_t * yr + cy

    x0 = np.floor(src_x).astype(np.intp)
    y0 = np.floor(src_y).astype(np.intp)
    fx = src_x - x0
    fy = src_y - y0

    flat = img.reshape(h, w, -1)
    out = np.zeros_like(flat)
    corners = (
        (x0, y0, (1 - fx) * (1 - fy)),
        (x0 + 1, y0, fx * (1 - fy)),
        (x0, y0 + 1, (1 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    )
    for xi, yi, wgt in corners:
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xc = np.clip(xi, 0, w - 1)
        yc = np.clip(yi, 0, h - 1)
        out += (wgt * inside)[..., None] * flat[yc, xc]
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(img.shape)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _correlate_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pads = [(0, 0)] * arr.ndim
    pads[axis] = (radius, radius)
    padded = np.pad(arr, pads, mode="edge")
    out = np.zeros_like(arr)
    length = arr.shape[axis]
    index: list = [slice(None)] * arr.ndim
    for tap, weight in enumerate(kernel):
        index[axis] = slice(tap, tap + length)
        out += weight * padded[tuple(index)]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders.

    sigma = 0 is the identity.  The truncated kernel is renormalized to
    sum exactly 1, so constant regions pass through unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    kernel = gaussian_kernel(sigma)
    out = _correlate_axis(img, kernel, axis=0)
    out = _correlate_axis(out, kernel, axis=1)
    return np.clip(out, 0.0, 1.0)
