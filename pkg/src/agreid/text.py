"""Sentence template and text encoder.

The template couples view, shared and attribute tokens into one sequence:

    [BOS] a <view-word> view photo of a  M_1..M_K  A_1..A_T  person [EOS]

Literal and view slots come from a word-level embedding table; shared slots
are learnable register tokens; attribute slots are continuous vectors from
the attribute group (supervised), a linear map of the raw visual prompts
(pseudo mode), or a learned per-label table (ground-truth mode). A causal
transformer encodes the sequence and the output at the [EOS] slot is
projected to the retrieval width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .encoder import Block
from .errors import (
    AttributeOutOfRangeError,
    ContextOverflowError,
    ShapeMismatchError,
    UnknownViewError,
)
from .schema import AttributeSchema, ViewRegistry

BOS = "[BOS]"
EOS = "[EOS]"
LITERAL_WORDS = ("a", "view", "photo", "of", "person", ".")


def build_vocabulary(views: ViewRegistry) -> dict[str, int]:
    words = [BOS, EOS, *LITERAL_WORDS]
    for _, w in views.views:
        if w not in words:
            words.append(w)
    return {w: i for i, w in enumerate(words)}


def save_vocabulary(vocab: dict[str, int], path) -> None:
    with open(path, "w") as f:
        json.dump(vocab, f, indent=2, sort_keys=True)


@dataclass(frozen=True)
class Slot:
    kind: str            # literal | view | shared | attribute | control
    word: str | None = None   # for literal/control slots
    index: int | None = None  # shared/attribute slot index


def sentence_layout(num_shared: int, num_attrs: int, use_view_token=True) -> tuple[Slot, ...]:
    slots = [Slot("control", word=BOS), Slot("literal", word="a")]
    if use_view_token:
        slots.append(Slot("view"))
    slots += [
        Slot("literal", word="view"),
        Slot("literal", word="photo"),
        Slot("literal", word="of"),
        Slot("literal", word="a"),
    ]
    slots += [Slot("shared", index=i) for i in range(num_shared)]
    slots += [Slot("attribute", index=t) for t in range(num_attrs)]
    slots += [Slot("literal", word="person"), Slot("control", word=EOS)]
    return tuple(slots)


class TextPromptEncoder(nn.Module):
    def __init__(
        self,
        cfg: ModelConfig,
        views: ViewRegistry,
        schema: AttributeSchema | None = None,
    ):
        super().__init__()
        self.cfg = cfg
        self.views = views
        self.vocab = build_vocabulary(views)
        self.layout = sentence_layout(
            cfg.shared_tokens, cfg.attr_prompts, cfg.use_view_token
        )
        if len(self.layout) > cfg.context_len:
            raise ContextOverflowError(
                f"template needs {len(self.layout)} slots but context_len is "
                f"{cfg.context_len}"
            )

        self.token_embed = nn.Embedding(len(self.vocab), cfg.text_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.context_len, cfg.text_dim))
        self.blocks = nn.ModuleList(
            Block(cfg.text_dim, cfg.text_heads, causal=True, depth_scale=cfg.text_depth)
            for _ in range(cfg.text_depth)
        )
        self.norm = nn.LayerNorm(cfg.text_dim)
        self.out_proj = nn.Linear(cfg.text_dim, cfg.feat_dim, bias=False)

        self.shared_tokens = nn.Parameter(torch.zeros(cfg.shared_tokens, cfg.text_dim))
        self.pseudo_proj = nn.Linear(cfg.embed_dim, cfg.text_dim)
        if schema is not None:
            offsets, total = [], 0
            for a in schema.arities:
                offsets.append(total)
                total += a
            self.label_embed = nn.Embedding(total, cfg.text_dim)
            self.register_buffer(
                "label_offsets", torch.tensor(offsets, dtype=torch.long)
            )
            self._label_arities = schema.arities
            nn.init.normal_(self.label_embed.weight, std=0.02)
        else:
            self.label_embed = None
            self._label_arities = None

        nn.init.normal_(self.token_embed.weight, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.shared_tokens, std=0.02)

        slot_ids = [
            self.vocab[s.word] if s.word is not None else 0 for s in self.layout
        ]
        self.register_buffer("slot_ids", torch.tensor(slot_ids, dtype=torch.long))
        self.shared_pos = [i for i, s in enumerate(self.layout) if s.kind == "shared"]
        self.attr_pos = [i for i, s in enumerate(self.layout) if s.kind == "attribute"]
        self.view_pos = next(
            (i for i, s in enumerate(self.layout) if s.kind == "view"), None
        )
        self.eos_pos = len(self.layout) - 1

    @property
    def sentence_len(self) -> int:
        return len(self.layout)

    def _view_word_ids(self, view_ids: torch.Tensor) -> torch.Tensor:
        words = []
        for v in view_ids.tolist():
            if not self.views.contains(int(v)):
                raise UnknownViewError(f"view id {v} not in registry")
            words.append(self.vocab[self.views.word(int(v))])
        return torch.tensor(words, dtype=torch.long, device=view_ids.device)

    def _frame(self, view_ids: torch.Tensor) -> torch.Tensor:
        """Template embeddings [B, S, text_dim] with view + shared slots filled."""
        b = view_ids.shape[0]
        seq = self.token_embed(self.slot_ids).unsqueeze(0).repeat(b, 1, 1)
        if self.view_pos is not None:
            seq[:, self.view_pos] = self.token_embed(self._view_word_ids(view_ids))
        seq[:, self.shared_pos] = self.shared_tokens.unsqueeze(0).to(seq.dtype)
        return seq

    def build_sentence(
        self, view_ids: torch.Tensor, attrs: torch.Tensor, pseudo: bool = False
    ) -> torch.Tensor:
        """Fill the template with continuous attribute vectors.

        ``attrs`` is [B, T, text_dim] (supervised tokens) or, with
        ``pseudo=True``, [B, T, embed_dim] raw final-layer prompts.
        """
        t = self.cfg.attr_prompts
        want = self.cfg.embed_dim if pseudo else self.cfg.text_dim
        if attrs.ndim != 3 or attrs.shape[1] != t or attrs.shape[2] != want:
            raise ShapeMismatchError(
                f"expected attribute vectors [B, {t}, {want}], got {tuple(attrs.shape)}"
            )
        if pseudo:
            attrs = self.pseudo_proj(attrs)
        seq = self._frame(view_ids)
        seq[:, self.attr_pos] = attrs
        return seq

    def gt_attribute_sentence(
        self, view_ids: torch.Tensor, labels: torch.Tensor
    ) -> torch.Tensor:
        """Fill attribute slots from the learned per-label table."""
        if self.label_embed is None:
            raise AttributeOutOfRangeError("model built without an attribute schema")
        if labels.ndim != 2 or labels.shape[1] != self.cfg.attr_prompts:
            raise ShapeMismatchError(
                f"expected labels [B, {self.cfg.attr_prompts}], got {tuple(labels.shape)}"
            )
        for t, arity in enumerate(self._label_arities):
            col = labels[:, t]
            if ((col < 0) | (col >= arity)).any():
                raise AttributeOutOfRangeError(
                    f"attribute {t}: label out of range [0, {arity})"
                )
        seq = self._frame(view_ids)
        seq[:, self.attr_pos] = self.label_embed(labels + self.label_offsets)
        return seq

    def encode(self, sentence: torch.Tensor, return_hidden: bool = False):
        """Causal encoding; returns the projected [EOS] feature [B, feat_dim]."""
        b, s, d = sentence.shape
        if s > self.cfg.context_len:
            raise ContextOverflowError(
                f"sequence length {s} exceeds context_len {self.cfg.context_len}"
            )
        x = sentence + self.pos_embed[:, :s]
        for block in self.blocks:
            x, _ = block(x)
        hidden = self.norm(x)
        feat = self.out_proj(hidden[:, s - 1])
        if return_hidden:
            return feat, hidden
        return feat


def l2_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def retrieval_feature(global_feat: torch.Tensor, text_feat: torch.Tensor) -> torch.Tensor:
    """Concatenate the two branch features, normalized per half then jointly."""
    joint = torch.cat([l2_normalize(global_feat), l2_normalize(text_feat)], dim=-1)
    return l2_normalize(joint)
