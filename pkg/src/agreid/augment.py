"""Training-time augmentation on float [H, W, 3] images in [0, 1].

Applied in order: horizontal flip (p=0.5), pad-10-then-random-crop back to
the original size, random erasing (p=0.5, area fraction 2-33%, filled with
the per-channel image mean). Output is clamped to [0, 1].
"""

from __future__ import annotations

import numpy as np

PAD = 10
ERASE_AREA = (0.02, 0.33)
ERASE_ASPECT = (0.3, 3.3)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def pad_random_crop(img: np.ndarray, rng: np.random.Generator, pad: int = PAD) -> np.ndarray:
    h, w = img.shape[:2]
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="constant")
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    return padded[top : top + h, left : left + w]


def random_erase(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Blank one rectangle with the per-channel mean; area bounds are strict."""
    h, w = img.shape[:2]
    fill = img.mean(axis=(0, 1))
    for _ in range(20):
        area = rng.uniform(*ERASE_AREA) * h * w
        aspect = rng.uniform(*ERASE_ASPECT)
        eh = int(round(np.sqrt(area * aspect)))
        ew = int(round(np.sqrt(area / aspect)))
        if 0 < eh <= h and 0 < ew <= w and ERASE_AREA[0] <= eh * ew / (h * w) <= ERASE_AREA[1]:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out = img.copy()
            out[top : top + eh, left : left + ew] = fill
            return out
    return img


def augment(
    img: np.ndarray,
    rng: np.random.Generator,
    flip: bool = True,
    pad_crop: bool = True,
    erase: bool = True,
) -> np.ndarray:
    if flip and rng.random() < 0.5:
        img = hflip(img)
    if pad_crop:
        img = pad_random_crop(img, rng)
    if erase and rng.random() < 0.5:
        img = random_erase(img, rng)
    return np.clip(img, 0.0, 1.0)
