"""Deterministic synthetic aerial-ground person dataset.

Each identity is a stack of attribute-coded color regions (hair band, torso,
legs, shoes, plus a coded edge strip for any further categories) overlaid
with an identity-specific procedural texture. Views reuse the same figure:

* ground ("CCTV"): full figure;
* aerial ("UAV"): enlarged head, vertical squash into the top 45% of the
  frame, then a 2x block blur — color regions survive, fine texture does not;
* wearable: upper 60% of the rows, rescaled back to full height.

Per-instance variation is an additive noise layer only (clipped at two
standard deviations), so images of one identity in one view differ by a
bounded noise field and nothing else.

All randomness flows from one seed through ``numpy.random.SeedSequence``
(dataset seed -> identity -> (identity, view, instance)), so any single
image can be regenerated without touching the rest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, TooManyIdentitiesError, UnknownViewError
from .imaging import block_blur, resize_rows, save_png
from .schema import (
    DEFAULT_VIEWS,
    AttributeSchema,
    PersonSample,
    ViewRegistry,
    write_manifest,
)

GROUND_WORDS = ("CCTV",)
AERIAL_WORDS = ("UAV",)
WEARABLE_WORDS = ("wearable",)

BACKGROUND = 0.5
TEXTURE_CONTRAST = 0.10

DESK_SCHEMA = AttributeSchema(
    (
        ("hair_color", ("black", "brown", "blond")),
        ("top_color", ("red", "green", "blue", "yellow", "white", "dark")),
        ("bottom_color", ("red", "green", "blue", "yellow", "white", "dark")),
        ("shoe_color", ("dark", "white", "brown")),
    )
)

# saturated palette; categories take disjoint slices (by cumulative arity) so
# a color seen anywhere in the figure identifies both category and label, and
# colors within a slice stay far apart under texture, blur and noise
_PALETTE = np.array(
    [
        [0.85, 0.10, 0.10],   # red
        [0.10, 0.75, 0.15],   # green
        [0.10, 0.20, 0.90],   # blue
        [0.95, 0.90, 0.10],   # yellow
        [0.05, 0.05, 0.08],   # black
        [0.95, 0.95, 0.95],   # white
        [0.95, 0.50, 0.05],   # orange
        [0.60, 0.10, 0.80],   # purple
        [0.05, 0.80, 0.85],   # cyan
        [0.90, 0.10, 0.90],   # magenta
        [0.05, 0.45, 0.10],   # dark green
        [0.55, 0.75, 0.98],   # light blue
        [0.60, 0.35, 0.10],   # brown
        [0.98, 0.60, 0.75],   # pink
        [0.05, 0.10, 0.40],   # navy
        [0.60, 0.95, 0.20],   # lime
        [0.55, 0.05, 0.15],   # maroon
        [0.10, 0.55, 0.60],   # teal
        [0.70, 0.70, 0.72],   # light gray
        [0.85, 0.70, 0.20],   # gold
    ]
)


def _category_offsets(schema: AttributeSchema) -> list[int]:
    offsets, total = [], 0
    for a in schema.arities:
        offsets.append(total)
        total += a
    return offsets


def subcategory_color(schema: AttributeSchema, category: int, sub: int) -> np.ndarray:
    offset = _category_offsets(schema)[category]
    return _PALETTE[(offset + sub) % len(_PALETTE)]


@dataclass(frozen=True)
class GenSpec:
    n_identities: int = 40
    images_per_id_per_view: int = 4
    schema: AttributeSchema = DESK_SCHEMA
    views: ViewRegistry = DEFAULT_VIEWS
    image_size: tuple[int, int] = (64, 32)
    noise_std: float = 0.02
    attrs_determine_identity: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_identities < 2:
            raise ConfigError("n_identities must be >= 2")
        if self.images_per_id_per_view < 1:
            raise ConfigError("images_per_id_per_view must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_identities": self.n_identities,
            "images_per_id_per_view": self.images_per_id_per_view,
            "schema": self.schema.to_dict(),
            "views": self.views.to_dict(),
            "image_size": list(self.image_size),
            "noise_std": self.noise_std,
            "attrs_determine_identity": self.attrs_determine_identity,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        if "schema" in d:
            d["schema"] = AttributeSchema.from_dict(d["schema"])
        if "views" in d:
            d["views"] = ViewRegistry.from_dict(d["views"])
        if "image_size" in d:
            d["image_size"] = tuple(d["image_size"])
        return cls(**d)


@dataclass(frozen=True)
class IdentitySpec:
    identity: int
    attributes: tuple[int, ...]
    texture_seed: int


def _attribute_capacity(schema: AttributeSchema) -> int:
    cap = 1
    for a in schema.arities:
        cap *= a
    return cap


def assign_identities(spec: GenSpec) -> list[IdentitySpec]:
    """Draw one attribute vector and texture seed per identity."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    arities = spec.schema.arities
    n = spec.n_identities

    if spec.attrs_determine_identity:
        capacity = _attribute_capacity(spec.schema)
        if n > capacity:
            raise TooManyIdentitiesError(
                f"{n} identities need distinct attribute vectors but the schema "
                f"only admits {capacity}"
            )
        if capacity <= 1 << 20:
            flat = rng.permutation(capacity)[:n]
        else:
            chosen: set[int] = set()
            while len(chosen) < n:
                chosen.add(int(rng.integers(capacity)))
            flat = np.array(sorted(chosen))
            flat = flat[rng.permutation(n)]
        vectors = np.stack(np.unravel_index(flat, arities), axis=1)
    else:
        vectors = np.stack([rng.integers(a, size=n) for a in arities], axis=1)

    seeds: set[int] = set()
    specs = []
    for i in range(n):
        ts = int(rng.integers(0, 2**63))
        while ts in seeds:
            ts = int(rng.integers(0, 2**63))
        seeds.add(ts)
        specs.append(
            IdentitySpec(
                identity=i,
                attributes=tuple(int(v) for v in vectors[i]),
                texture_seed=ts,
            )
        )
    return specs


def _view_style(views: ViewRegistry, view_id: int) -> str:
    word = views.word(view_id)
    if word in AERIAL_WORDS:
        return "aerial"
    if word in GROUND_WORDS:
        return "ground"
    if word in WEARABLE_WORDS:
        return "wearable"
    raise UnknownViewError(f"no render style for view word {word!r}")


def _base_figure(spec: GenSpec, id_spec: IdentitySpec) -> np.ndarray:
    """Ground-view figure: attribute-coded regions + identity texture."""
    h, w = spec.image_size
    img = np.full((h, w, 3), BACKGROUND)
    attrs = id_spec.attributes

    def rows(a, b):
        return slice(int(a * h), int(b * h))

    def cols(width):
        half = int(width * w / 2)
        c = w // 2
        return slice(max(c - half, 0), min(c + half, w))

    body = np.zeros((h, w), dtype=bool)
    # region layout (fractions of H): head band, torso, legs, shoes
    regions = [
        (rows(0.04, 0.22), cols(0.50)),
        (rows(0.22, 0.52), cols(0.80)),
        (rows(0.52, 0.78), cols(0.55)),
        (rows(0.78, 0.96), cols(0.65)),
    ]
    for t, (rs, cs) in enumerate(regions):
        if t >= len(attrs):
            break
        img[rs, cs] = subcategory_color(spec.schema, t, attrs[t])
        body[rs, cs] = True

    # categories beyond the four body regions: coded strip on the left edge
    extra = len(attrs) - len(regions)
    if extra > 0:
        strip = slice(0, max(w // 8, 2))
        for j in range(extra):
            t = len(regions) + j
            rs = rows(j / extra * 0.9 + 0.05, (j + 1) / extra * 0.9 + 0.05)
            img[rs, strip] = subcategory_color(spec.schema, t, attrs[t])

    # identity texture: coarse random grid over the body, high spatial frequency
    rng = np.random.default_rng(id_spec.texture_seed)
    th, tw = max(h // 4, 1), max(w // 4, 1)
    tiles = rng.uniform(-1.0, 1.0, size=(th, tw, 1))
    tex = np.repeat(np.repeat(tiles, 4, axis=0), 4, axis=1)[:h, :w]
    img = np.where(body[..., None], img + TEXTURE_CONTRAST * tex, img)
    return np.clip(img, 0.0, 1.0)


def _aerial_transform(img: np.ndarray) -> np.ndarray:
    h = img.shape[0]
    head_end = int(0.20 * h)
    enlarged_head = resize_rows(img[:head_end], min(2 * head_end, h - 1))
    rest = resize_rows(img[head_end:], h - enlarged_head.shape[0])
    figure = np.concatenate([enlarged_head, rest], axis=0)
    squash_h = int(0.45 * h)
    canvas = np.full_like(img, BACKGROUND)
    canvas[:squash_h] = resize_rows(figure, squash_h)
    return block_blur(canvas, 2)


def _wearable_transform(img: np.ndarray) -> np.ndarray:
    h = img.shape[0]
    return resize_rows(img[: int(0.60 * h)], h)


def render_person(
    spec: GenSpec, id_spec: IdentitySpec, view_id: int, instance_seed: int
) -> np.ndarray:
    """Render one [H, W, 3] image in [0, 1]; pure in all arguments."""
    style = _view_style(spec.views, view_id)
    img = _base_figure(spec, id_spec)
    if style == "aerial":
        img = _aerial_transform(img)
    elif style == "wearable":
        img = _wearable_transform(img)
    if spec.noise_std > 0:
        rng = np.random.default_rng(instance_seed)
        noise = rng.normal(0.0, spec.noise_std, size=img.shape)
        noise = np.clip(noise, -2 * spec.noise_std, 2 * spec.noise_std)
        img = img + noise
    return np.clip(img, 0.0, 1.0)


def instance_seed(spec: GenSpec, identity: int, view_id: int, instance: int) -> int:
    ss = np.random.SeedSequence(spec.seed, spawn_key=(1, identity, view_id, instance))
    return int(ss.generate_state(2, np.uint64)[0])


def _image_name(identity: int, view_id: int, instance: int) -> str:
    return f"images/{identity:04d}_v{view_id}_{instance}.png"


def generate_dataset(spec: GenSpec, out_dir) -> dict[str, Path]:
    """Render all images and write train/query/gallery manifests.

    Returns a mapping from manifest role to file path. The test identities are
    the second half of a seeded shuffle; query/gallery pairs follow the two
    heterogeneous protocols (aerial->ground and ground->aerial).
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ids = assign_identities(spec)

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(2,)))
    order = rng.permutation(spec.n_identities)
    n_train = spec.n_identities // 2
    train_ids = set(int(i) for i in order[:n_train])

    samples_by_id: dict[int, list[PersonSample]] = {}
    for id_spec in ids:
        samples = []
        for view_id, _ in spec.views.views:
            for j in range(spec.images_per_id_per_view):
                name = _image_name(id_spec.identity, view_id, j)
                img = render_person(
                    spec, id_spec, view_id, instance_seed(spec, id_spec.identity, view_id, j)
                )
                save_png(img, out / name)
                samples.append(
                    PersonSample(
                        image_path=name,
                        identity=id_spec.identity,
                        view_id=view_id,
                        camera_id=view_id * 10 + j % 2,
                        attributes=id_spec.attributes,
                    )
                )
        samples_by_id[id_spec.identity] = samples

    def view_ids_for(words):
        return {vid for vid, w in spec.views.views if w in words}

    aerial = view_ids_for(AERIAL_WORDS)
    ground = view_ids_for(GROUND_WORDS)

    train, test = [], []
    for identity, samples in samples_by_id.items():
        (train if identity in train_ids else test).extend(samples)

    manifests = {"train": train}
    manifests["query_A2G"] = [s for s in test if s.view_id in aerial]
    manifests["gallery_A2G"] = [s for s in test if s.view_id in ground]
    manifests["query_G2A"] = manifests["gallery_A2G"]
    manifests["gallery_G2A"] = manifests["query_A2G"]

    paths = {}
    for role, samples in manifests.items():
        p = out / f"{role}.jsonl"
        write_manifest(samples, p)
        paths[role] = p
    (out / "genspec-echo.json").write_text(json.dumps(spec.to_dict(), indent=2))
    return paths
