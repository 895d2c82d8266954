"""Raw image handling: validation, grayscale, and the reference resize kernel.

Images are plain numpy arrays of shape (H, W, C), dtype uint8, C in {1, 3}.
File decoding (PNG/JPEG) lives at the CLI boundary only; everything below
it operates on pixel arrays.

The bilinear kernel here is the engine's reference resize: half-pixel
centers, clamped edges, float64 accumulation, round-half-up back to uint8.
It is specified byte-exactly in docs/resize-kernel.md so independent
implementations can reproduce tile pixels bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def validate_image(pixels: np.ndarray) -> np.ndarray:
    """Check shape/dtype and return the array as (H, W, C) uint8.

    A 2-D array is promoted to (H, W, 1). Zero-sized dimensions are
    rejected as degenerate input.
    """
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise InputError(f"image must be uint8, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InputError(f"image must be HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise InputError(f"degenerate image dimensions {h}x{w}")
    if c not in (1, 3):
        raise InputError(f"image must have 1 or 3 channels, got {c}")
    return arr


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Mean-over-channels grayscale in [0, 1], shape (H, W), float64."""
    arr = validate_image(pixels)
    return arr.astype(np.float64).mean(axis=2) / 255.0


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with the reference bilinear kernel (see docs/resize-kernel.md).

    Source coordinates use half-pixel centers:
        sy = (i + 0.5) * H / out_h - 0.5, clamped to [0, H - 1]
    and the four neighbours are blended in float64. Output values are
    rounded half-up (floor(v + 0.5)) before the uint8 cast.
    """
    arr = validate_image(pixels)
    if out_h < 1 or out_w < 1:
        raise InputError(f"degenerate resize target {out_h}x{out_w}")
    h, w, _ = arr.shape
    if (out_h, out_w) == (h, w):
        return arr.copy()

    sy = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * h / out_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None, None]
    wx = (sx - x0)[None, :, None]

    src = arr.astype(np.float64)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def load_image(path: str) -> np.ndarray:
    """Decode a PNG/JPEG file into an (H, W, C) uint8 array (CLI shim)."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise InputError(f"image file not found: {path}") from None
    except Exception as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from None
    return validate_image(arr)
