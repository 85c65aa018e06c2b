"""Model and training configuration, validation, JSON I/O and dotted overrides.

The on-disk config is a single JSON document with two sections whose keys
mirror the dataclass fields exactly:

    {"model": {"embed_dim": 64, ...}, "train": {"epochs": 30, ...}}

CLI flags override by dotted path, e.g. ``--model.shared_tokens 8``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

PROMPT_TUNE = "prompt_tune"
FULL_FT = "full_ft"
SUPERVISED = "supervised"
PSEUDO = "pseudo"

# [BOS] a <view> view photo of a [shared]*K [attr]*T person [EOS]
TEMPLATE_LITERALS = 6
TEMPLATE_CONTROLS = 2
TEMPLATE_FIXED_SLOTS = TEMPLATE_LITERALS + TEMPLATE_CONTROLS + 1  # + view slot


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple[int, int] = (64, 32)  # (H, W)
    patch_size: int = 8
    embed_dim: int = 64          # image token width
    feat_dim: int = 64           # text branch output width used for retrieval
    depth: int = 4               # image encoder layers
    heads: int = 4
    attr_prompts: int = 4        # one prompt per attribute category
    total_prompts: int = 8       # attribute prompts + extra tuning prompts
    shared_tokens: int = 8       # learnable register tokens in the template
    text_dim: int = 64
    text_depth: int = 2
    text_heads: int = 8
    context_len: int = 32
    mode: str = FULL_FT          # prompt_tune | full_ft
    attribute_mode: str = SUPERVISED  # supervised | pseudo
    label_smoothing: float = 0.1
    triplet_margin: float = 0.3
    id_loss_weight: float = 0.25
    triplet_loss_weight: float = 1.0
    distance: str = "cosine"     # cosine | euclidean
    use_attribute_heads: bool = True
    use_text_branch: bool = True
    use_view_token: bool = True
    gt_attributes: bool = False

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        """CLIP-Base-16-sized tower dimensions with prompt tuning."""
        return cls(
            image_size=(256, 128),
            patch_size=16,
            embed_dim=768,
            feat_dim=512,
            depth=12,
            heads=12,
            attr_prompts=15,
            total_prompts=19,
            shared_tokens=8,
            text_dim=512,
            text_depth=12,
            context_len=77,
            mode=PROMPT_TUNE,
        )

    @property
    def num_patches(self) -> int:
        h, w = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def sentence_len(self) -> int:
        fixed = TEMPLATE_FIXED_SLOTS - (0 if self.use_view_token else 1)
        return fixed + self.shared_tokens + self.attr_prompts

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "image_size" in d:
            d["image_size"] = tuple(d["image_size"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    base_lr: float = 3.5e-4
    backbone_lr: float = 5e-6     # full fine-tuning backbone group
    warmup_epochs: int = 10
    warmup_start_factor: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_identities: int = 16    # P
    batch_instances: int = 8      # instances per identity
    flip: bool = True
    pad_crop: bool = True
    random_erase: bool = True
    seed: int = 0
    preset: str = "C"             # ablation preset tag
    checkpoint_every: int = 0     # epochs between checkpoints; 0 = final only
    eval_rank: int = 10

    @property
    def batch_size(self) -> int:
        return self.batch_identities * self.batch_instances

    @classmethod
    def desk(cls, seed: int = 0, preset: str = "C") -> "TrainConfig":
        """Profile sized for the synthetic desk dataset on a laptop CPU."""
        return cls(
            epochs=30,
            base_lr=1.5e-3,
            backbone_lr=1.5e-3,
            warmup_epochs=3,
            batch_identities=8,
            batch_instances=4,
            seed=seed,
            preset=preset,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def validate_config(cfg: ModelConfig) -> list[str]:
    """Return every violated invariant (empty list means the config is valid)."""
    errors = []
    h, w = cfg.image_size
    if h <= 0 or w <= 0 or cfg.patch_size <= 0:
        errors.append("image_size and patch_size must be positive")
    else:
        if h % cfg.patch_size != 0:
            errors.append(f"H={h} not divisible by patch={cfg.patch_size}")
        if w % cfg.patch_size != 0:
            errors.append(f"W={w} not divisible by patch={cfg.patch_size}")
    if cfg.attr_prompts < 1:
        errors.append("attr_prompts must be >= 1")
    if cfg.total_prompts < cfg.attr_prompts:
        errors.append(
            f"total_prompts={cfg.total_prompts} < attr_prompts={cfg.attr_prompts}"
        )
    min_ctx = (
        TEMPLATE_LITERALS + 1 + cfg.shared_tokens + cfg.attr_prompts
        + TEMPLATE_CONTROLS
    )
    if cfg.context_len < min_ctx:
        errors.append(f"context_len={cfg.context_len} < {min_ctx} template slots")
    if cfg.id_loss_weight < 0 or cfg.triplet_loss_weight < 0:
        errors.append("loss weights must be >= 0")
    if not 0 <= cfg.label_smoothing < 1:
        errors.append("label_smoothing must be in [0, 1)")
    if cfg.heads < 1 or cfg.embed_dim % cfg.heads != 0:
        errors.append(
            f"embed_dim={cfg.embed_dim} not divisible by heads={cfg.heads}"
        )
    if cfg.text_heads < 1 or cfg.text_dim % cfg.text_heads != 0:
        errors.append(
            f"text_dim={cfg.text_dim} not divisible by text_heads={cfg.text_heads}"
        )
    if cfg.mode not in (PROMPT_TUNE, FULL_FT):
        errors.append(f"mode must be {PROMPT_TUNE!r} or {FULL_FT!r}")
    if cfg.attribute_mode not in (SUPERVISED, PSEUDO):
        errors.append(f"attribute_mode must be {SUPERVISED!r} or {PSEUDO!r}")
    if cfg.distance not in ("cosine", "euclidean"):
        errors.append("distance must be 'cosine' or 'euclidean'")
    if cfg.depth < 1 or cfg.text_depth < 1:
        errors.append("encoder depths must be >= 1")
    return errors


def require_valid(cfg: ModelConfig) -> ModelConfig:
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def config_hash(model_cfg: ModelConfig) -> str:
    payload = json.dumps(model_cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``section.field=value`` (or ``--section.field value``) overrides."""
    doc = json.loads(json.dumps(doc))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like model.field=value")
        path, value = item.split("=", 1)
        keys = path.strip().lstrip("-").split(".")
        if len(keys) < 2:
            raise ConfigError(f"override path {path!r} must be dotted (section.field)")
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} does not address a field")
        node[keys[-1]] = _parse_value(value.strip())
    return doc


def load_config_document(path=None, overrides: list[str] | None = None) -> dict:
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p}: invalid JSON ({e.msg})")
    else:
        doc = {}
    doc.setdefault("model", {})
    doc.setdefault("train", {})
    if overrides:
        doc = apply_overrides(doc, overrides)
    return doc


def configs_from_document(doc: dict) -> tuple[ModelConfig, TrainConfig]:
    model = ModelConfig.from_dict(doc.get("model", {}))
    train = TrainConfig.from_dict(doc.get("train", {}))
    require_valid(model)
    return model, train
