"""Small image helpers: 8-bit RGB PNG I/O and deterministic resampling."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import DataError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 255.0


def save_png(img: np.ndarray, path) -> None:
    """Write a float [H, W, 3] image in [0, 1] as 8-bit RGB PNG."""
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG as float32 [H, W, 3] in [0, 1]."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise DataError(f"{path}: expected 8-bit RGB PNG, got mode {im.mode}")
        arr = np.asarray(im)
    return to_float(arr)


def resize_rows(img: np.ndarray, new_h: int) -> np.ndarray:
    """Linearly resample the row axis of [H, W, C] to new_h rows."""
    h = img.shape[0]
    if new_h == h:
        return img.copy()
    # sample positions of output row centers in input row coordinates
    pos = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    pos = np.clip(pos, 0, h - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, h - 1)
    frac = (pos - lo)[:, None, None]
    return img[lo] * (1.0 - frac) + img[hi] * frac


def block_blur(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Downsample by block averaging then upsample by pixel repetition."""
    h, w, c = img.shape
    hpad = (-h) % factor
    wpad = (-w) % factor
    padded = np.pad(img, ((0, hpad), (0, wpad), (0, 0)), mode="edge")
    ph, pw = padded.shape[:2]
    small = padded.reshape(ph // factor, factor, pw // factor, factor, c).mean(
        axis=(1, 3)
    )
    big = np.repeat(np.repeat(small, factor, axis=0), factor, axis=1)
    return big[:h, :w]
