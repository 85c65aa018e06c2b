"""Loading manifests plus their images into memory tensors.

Desk datasets are small, so images are preloaded eagerly as one float32
array; the training loop augments per sample and stacks batches on demand.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import DataError
from .imaging import load_png
from .schema import AttributeSchema, PersonSample, ViewRegistry, load_manifest


@dataclass
class LoadedSplit:
    samples: list[PersonSample]
    images: np.ndarray          # [N, H, W, 3] float32 in [0, 1]
    identities: np.ndarray      # [N]
    view_ids: np.ndarray        # [N]
    camera_ids: np.ndarray      # [N]
    attributes: Optional[np.ndarray]  # [N, T] or None

    def __len__(self) -> int:
        return len(self.samples)


def load_split(
    manifest_path,
    root,
    schema: AttributeSchema,
    views: ViewRegistry,
    expected_size: tuple[int, int] | None = None,
    drop_attributes: bool = False,
) -> LoadedSplit:
    root = Path(root)
    samples = load_manifest(manifest_path, schema, views)
    if drop_attributes:
        samples = [s.without_attributes() for s in samples]
    images = []
    for s in samples:
        img = load_png(root / s.image_path)
        if expected_size is not None and img.shape[:2] != tuple(expected_size):
            raise DataError(
                f"{s.image_path}: image is {img.shape[:2]}, expected {expected_size}"
            )
        images.append(img)
    has_attrs = all(s.attributes is not None for s in samples)
    return LoadedSplit(
        samples=samples,
        images=np.stack(images).astype(np.float32),
        identities=np.array([s.identity for s in samples], dtype=np.int64),
        view_ids=np.array([s.view_id for s in samples], dtype=np.int64),
        camera_ids=np.array([s.camera_id for s in samples], dtype=np.int64),
        attributes=(
            np.array([s.attributes for s in samples], dtype=np.int64)
            if has_attrs and samples
            else None
        ),
    )


def to_batch_tensor(images: np.ndarray) -> torch.Tensor:
    """[N, H, W, 3] float array -> [N, 3, H, W] float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
