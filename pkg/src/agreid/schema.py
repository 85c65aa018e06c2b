"""Dataset-side domain types: attribute schema, view registry, samples, manifests.

A manifest is line-delimited JSON, one record per image:

    {"image_path": "images/0003_v1_2.png", "id": 3, "view": 1,
     "camera": 12, "attributes": [0, 2, 1, 4]}

``attributes`` may be ``null`` for datasets without attribute annotations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import (
    AttributeOutOfRangeError,
    DataError,
    MalformedRecordError,
    UnknownViewError,
)

MANIFEST_FIELDS = ("image_path", "id", "view", "camera", "attributes")


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute categories; subcategory order is the label encoding."""

    categories: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.categories]
        if len(self.categories) < 1:
            raise DataError("schema needs at least one category")
        if len(set(names)) != len(names):
            raise DataError("category names must be unique")
        for name, subs in self.categories:
            if len(subs) < 2:
                raise DataError(f"category {name!r} needs >= 2 subcategories")

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    def arity(self, t: int) -> int:
        return len(self.categories[t][1])

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(len(subs) for _, subs in self.categories)

    def category_name(self, t: int) -> str:
        return self.categories[t][0]

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"name": name, "subcategories": list(subs)}
                for name, subs in self.categories
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSchema":
        return cls(
            tuple(
                (c["name"], tuple(c["subcategories"])) for c in d["categories"]
            )
        )


@dataclass(frozen=True)
class ViewRegistry:
    """Capture platforms; ``word`` is the template token for each view."""

    views: tuple[tuple[int, str], ...]

    def __post_init__(self):
        ids = [v for v, _ in self.views]
        words = [w for _, w in self.views]
        if ids != list(range(len(ids))):
            raise DataError("view ids must be contiguous from 0")
        if len(set(words)) != len(words) or any(not w for w in words):
            raise DataError("view words must be unique and non-empty")

    def __len__(self) -> int:
        return len(self.views)

    def word(self, view_id: int) -> str:
        for vid, w in self.views:
            if vid == view_id:
                return w
        raise UnknownViewError(f"view id {view_id} not registered")

    def contains(self, view_id) -> bool:
        return isinstance(view_id, int) and 0 <= view_id < len(self.views)

    def to_dict(self) -> dict:
        return {"views": [[vid, w] for vid, w in self.views]}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewRegistry":
        return cls(tuple((int(v), str(w)) for v, w in d["views"]))


DEFAULT_VIEWS = ViewRegistry(((0, "CCTV"), (1, "UAV")))


@dataclass(frozen=True)
class PersonSample:
    """One dataset record. ``attributes`` is None for unannotated data."""

    image_path: str
    identity: int
    view_id: int
    camera_id: int
    attributes: Optional[tuple[int, ...]] = None

    def validate(self, schema: AttributeSchema, views: ViewRegistry) -> None:
        if not views.contains(self.view_id):
            raise UnknownViewError(f"view {self.view_id!r} not in registry")
        if self.identity < 0:
            raise DataError(f"identity must be >= 0, got {self.identity}")
        if self.attributes is not None:
            if len(self.attributes) != schema.num_categories:
                raise AttributeOutOfRangeError(
                    f"expected {schema.num_categories} attributes, "
                    f"got {len(self.attributes)}"
                )
            for t, a in enumerate(self.attributes):
                if not 0 <= a < schema.arity(t):
                    raise AttributeOutOfRangeError(
                        f"attribute {t} ({schema.category_name(t)}): "
                        f"label {a} out of range [0, {schema.arity(t)})"
                    )

    def without_attributes(self) -> "PersonSample":
        return replace(self, attributes=None)


def _record_to_sample(rec: dict) -> PersonSample:
    attrs = rec["attributes"]
    return PersonSample(
        image_path=str(rec["image_path"]),
        identity=int(rec["id"]),
        view_id=rec["view"],
        camera_id=int(rec["camera"]),
        attributes=None if attrs is None else tuple(int(a) for a in attrs),
    )


def load_manifest(
    path, schema: AttributeSchema, views: ViewRegistry
) -> list[PersonSample]:
    """Read and validate a JSONL manifest; order preserved, errors are fatal."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    samples = []
    with path.open() as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecordError(line_no, f"invalid JSON ({e.msg})")
            missing = [k for k in MANIFEST_FIELDS if k not in rec]
            if missing:
                raise MalformedRecordError(line_no, f"missing fields {missing}")
            try:
                sample = _record_to_sample(rec)
                sample.validate(schema, views)
            except (UnknownViewError, AttributeOutOfRangeError):
                raise
            except (TypeError, ValueError) as e:
                raise MalformedRecordError(line_no, str(e))
            samples.append(sample)
    return samples


def write_manifest(samples: Sequence[PersonSample], path) -> None:
    """Write JSONL with a fixed key order so round-trips are byte-stable."""
    path = Path(path)
    with path.open("w") as f:
        for s in samples:
            rec = {
                "image_path": s.image_path,
                "id": s.identity,
                "view": s.view_id,
                "camera": s.camera_id,
                "attributes": None if s.attributes is None else list(s.attributes),
            }
            f.write(json.dumps(rec, separators=(", ", ": ")) + "\n")
