"""Composite retrieval model: image encoder + attribute group + text branch.

Every parameter carries one of five tags — backbone, prompt, head,
text_backbone, text_prompt — assigned structurally from the owning submodule.
Prompt tuning trains exactly {prompt, head, text_prompt}; full fine-tuning
trains everything, with backbone/text_backbone in a separate learning-rate
group. Optimizers and tests consume tags, never parameter names.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .attributes import AttributeClassifierGroup
from .config import FULL_FT, PROMPT_TUNE, PSEUDO, SUPERVISED, ModelConfig
from .encoder import EncodedImage, PromptedImageEncoder, check_finite
from .errors import ConfigError, LabelOutOfRangeError
from .schema import AttributeSchema, ViewRegistry
from .text import TextPromptEncoder, l2_normalize, retrieval_feature

TAGS = ("backbone", "prompt", "head", "text_backbone", "text_prompt")
PROMPT_TUNE_TAGS = frozenset({"prompt", "head", "text_prompt"})
BACKBONE_TAGS = frozenset({"backbone", "text_backbone"})


@dataclass
class ModelOutput:
    global_feat: torch.Tensor                 # [B, embed_dim]
    prompt_feats: torch.Tensor                # [B, T, embed_dim]
    attr_logits: Optional[list[torch.Tensor]]
    attr_tokens: Optional[torch.Tensor]       # [B, T, text_dim]
    text_feat: Optional[torch.Tensor]         # [B, feat_dim]
    retrieval: torch.Tensor                   # normalized retrieval feature


class ReidModel(nn.Module):
    def __init__(
        self,
        cfg: ModelConfig,
        views: ViewRegistry,
        schema: Optional[AttributeSchema] = None,
        num_identities: int = 1,
    ):
        super().__init__()
        self.cfg = cfg
        self.views = views
        self.schema = schema
        self.num_identities = num_identities

        supervised = cfg.attribute_mode == SUPERVISED
        if supervised and (cfg.use_attribute_heads or cfg.gt_attributes):
            if schema is None:
                raise ConfigError("supervised attribute mode needs a schema")
            if schema.num_categories != cfg.attr_prompts:
                raise ConfigError(
                    f"schema has {schema.num_categories} categories but config "
                    f"sets attr_prompts={cfg.attr_prompts}"
                )

        self.image_encoder = PromptedImageEncoder(cfg)
        self.attributes = (
            AttributeClassifierGroup(cfg, schema.arities)
            if supervised and cfg.use_attribute_heads
            else None
        )
        self.text = (
            TextPromptEncoder(cfg, views, schema if supervised else None)
            if cfg.use_text_branch
            else None
        )
        self.id_head_image = nn.Linear(cfg.embed_dim, num_identities)
        self.id_head_text = (
            nn.Linear(cfg.feat_dim, num_identities) if self.text is not None else None
        )
        if cfg.use_text_branch and supervised and not cfg.gt_attributes:
            if self.attributes is None:
                raise ConfigError(
                    "the text branch needs attribute tokens; enable attribute "
                    "heads, ground-truth attributes, or pseudo mode"
                )

    # ---- parameter bookkeeping -------------------------------------------

    def parameter_tags(self) -> dict[str, str]:
        tags = {}
        for name, _ in self.image_encoder.named_parameters():
            tags[f"image_encoder.{name}"] = (
                "prompt" if name == "prompts" else "backbone"
            )
        if self.attributes is not None:
            for name, _ in self.attributes.named_parameters():
                tags[f"attributes.{name}"] = "head"
        if self.text is not None:
            for name, _ in self.text.named_parameters():
                is_prompt = (
                    name == "shared_tokens"
                    or name.startswith("pseudo_proj.")
                    or name.startswith("label_embed.")
                )
                tags[f"text.{name}"] = "text_prompt" if is_prompt else "text_backbone"
        for name, _ in self.id_head_image.named_parameters():
            tags[f"id_head_image.{name}"] = "head"
        if self.id_head_text is not None:
            for name, _ in self.id_head_text.named_parameters():
                tags[f"id_head_text.{name}"] = "head"
        return tags

    def trainable_tags(self, mode: str) -> frozenset[str]:
        if mode == PROMPT_TUNE:
            return PROMPT_TUNE_TAGS
        if mode == FULL_FT:
            return frozenset(TAGS)
        raise ConfigError(f"unknown mode {mode!r}")

    def apply_mode(self, mode: str) -> None:
        """Set requires_grad per tag; the single source of trainability."""
        trainable = self.trainable_tags(mode)
        tags = self.parameter_tags()
        for name, p in self.named_parameters():
            p.requires_grad_(tags[name] in trainable)

    def parameter_groups(self, mode: str) -> list[dict]:
        """Optimizer groups: 'main' and, for full fine-tuning, 'backbone'."""
        tags = self.parameter_tags()
        trainable = self.trainable_tags(mode)
        groups = {"main": [], "backbone": []}
        names = {"main": [], "backbone": []}
        for name, p in self.named_parameters():
            tag = tags[name]
            if tag not in trainable:
                continue
            key = "backbone" if (mode == FULL_FT and tag in BACKBONE_TAGS) else "main"
            groups[key].append(p)
            names[key].append(name)
        out = [{"name": "main", "params": groups["main"], "param_names": names["main"]}]
        if groups["backbone"]:
            out.append(
                {
                    "name": "backbone",
                    "params": groups["backbone"],
                    "param_names": names["backbone"],
                }
            )
        return out

    def count_parameters(self) -> dict[str, int]:
        """Element counts per tag plus prompt-tune/full-ft trainable totals."""
        tags = self.parameter_tags()
        by_tag = {t: 0 for t in TAGS}
        for name, p in self.named_parameters():
            by_tag[tags[name]] += p.numel()
        total = sum(by_tag.values())
        return {
            **by_tag,
            "total": total,
            "trainable_prompt_tune": sum(by_tag[t] for t in PROMPT_TUNE_TAGS),
            "trainable_full_ft": total,
        }

    # ---- forward ----------------------------------------------------------

    def encode_images(self, images: torch.Tensor, collect_attn=False):
        return self.image_encoder(images, collect_attn=collect_attn)

    def text_feature(
        self,
        enc: EncodedImage,
        view_ids: torch.Tensor,
        attr_labels: Optional[torch.Tensor] = None,
        attr_tokens: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        cfg = self.cfg
        if cfg.gt_attributes:
            if attr_labels is None:
                raise LabelOutOfRangeError(
                    "ground-truth attribute mode needs attribute labels"
                )
            sentence = self.text.gt_attribute_sentence(view_ids, attr_labels)
        elif cfg.attribute_mode == PSEUDO:
            sentence = self.text.build_sentence(view_ids, enc.prompt_feats, pseudo=True)
        else:
            sentence = self.text.build_sentence(view_ids, attr_tokens)
        return self.text.encode(sentence)

    def forward(
        self,
        images: torch.Tensor,
        view_ids: Optional[torch.Tensor] = None,
        attr_labels: Optional[torch.Tensor] = None,
    ) -> ModelOutput:
        enc = self.encode_images(images)
        attr_logits = attr_tokens = text_feat = None
        if self.attributes is not None:
            attr_logits = self.attributes.all_logits(enc)
            attr_tokens = self.attributes.attribute_tokens(enc)
        if self.text is not None:
            if view_ids is None:
                raise ConfigError("the text branch needs per-sample view ids")
            text_feat = self.text_feature(enc, view_ids, attr_labels, attr_tokens)
            check_finite(text_feat, "text feature")
            retrieval = retrieval_feature(enc.global_feat, text_feat)
        else:
            retrieval = l2_normalize(enc.global_feat)
        return ModelOutput(
            global_feat=enc.global_feat,
            prompt_feats=enc.prompt_feats,
            attr_logits=attr_logits,
            attr_tokens=attr_tokens,
            text_feat=text_feat,
            retrieval=retrieval,
        )


def build_model(
    cfg: ModelConfig,
    views: ViewRegistry,
    schema: Optional[AttributeSchema],
    num_identities: int,
    seed: int,
) -> ReidModel:
    """Deterministic construction: same arguments, same initial weights."""
    torch.manual_seed(seed)
    model = ReidModel(cfg, views, schema, num_identities)
    model.apply_mode(cfg.mode)
    return model
