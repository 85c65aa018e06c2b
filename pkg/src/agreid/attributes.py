"""Attribute classifier group operating on the encoded image.

For category t the classifier sees the attribute feature — the concatenation
of the global feature with transformed prompt t — plus a context vector
obtained by cross-attending the remaining prompts (queries) over the global
feature (a single key/value). With one key the softmax is exactly 1, so the
attended value reduces to a projection of the global feature regardless of
the query contents; this degeneracy is intentional and covered by tests.

One shared two-layer MLP turns each attribute feature into a continuous
text token for the sentence template.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .config import ModelConfig
from .encoder import EncodedImage
from .errors import DegenerateAttributeSetError


class ResidualFFN(nn.Module):
    """x + W2(gelu(W1 x)); hidden width equals the input width."""

    def __init__(self, dim):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, x):
        return x + self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class AttributeClassifierGroup(nn.Module):
    def __init__(self, cfg: ModelConfig, arities: tuple[int, ...]):
        super().__init__()
        if len(arities) != cfg.attr_prompts:
            raise ValueError(
                f"{len(arities)} schema categories but {cfg.attr_prompts} "
                f"attribute prompts configured"
            )
        d = cfg.embed_dim
        self.cfg = cfg
        self.arities = tuple(arities)
        self.heads = cfg.heads
        self.head_dim = d // cfg.heads
        # cross-attention projections, shared across categories
        self.w_q = nn.Linear(d, d)
        self.w_k = nn.Linear(d, d)
        self.w_v = nn.Linear(d, d)
        self.w_o = nn.Linear(d, d)
        self.project_up = nn.Linear(d, 2 * d)
        self.ffn = nn.ModuleList(ResidualFFN(2 * d) for _ in arities)
        self.classifier = nn.ModuleList(nn.Linear(2 * d, a) for a in arities)
        # shared token MLP: 2d -> 2d -> text_dim
        self.token_mlp = nn.Sequential(
            nn.Linear(2 * d, 2 * d), nn.GELU(), nn.Linear(2 * d, cfg.text_dim)
        )

    @property
    def num_categories(self) -> int:
        return len(self.arities)

    def attribute_feature(self, enc: EncodedImage, t: int) -> torch.Tensor:
        """[global_feat, prompt_t] concatenation, shape [B, 2*embed_dim]."""
        if not 0 <= t < self.num_categories:
            raise IndexError(f"attribute index {t} out of range [0, {self.num_categories})")
        return torch.cat([enc.global_feat, enc.prompt_feats[:, t]], dim=-1)

    def cross_attend(self, global_feat: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """Attend ``context`` queries [B, M, D] over the single global key.

        Returns the mean over queries of the attended outputs, shape [B, D].
        """
        b, m, d = context.shape
        if m == 0:
            raise DegenerateAttributeSetError("cross-attention needs >= 1 context prompt")
        q = self.w_q(context)
        k = self.w_k(global_feat).unsqueeze(1)   # [B, 1, D]
        v = self.w_v(global_feat).unsqueeze(1)

        def split(t_, s):
            return t_.view(b, s, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q, m), split(k, 1), split(v, 1)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(d)
        attn = scores.softmax(dim=-1)            # single key: exactly 1
        out = (attn @ v).transpose(1, 2).reshape(b, m, d)
        return self.w_o(out).mean(dim=1)

    def _context_without(self, enc: EncodedImage, t: int) -> torch.Tensor:
        idx = [s for s in range(self.num_categories) if s != t]
        return enc.prompt_feats[:, idx]

    def classify(self, enc: EncodedImage, t: int) -> torch.Tensor:
        """Logits for category t, shape [B, arities[t]]."""
        f_attr = self.attribute_feature(enc, t)
        if self.num_categories == 1:
            context_up = torch.zeros_like(f_attr)
        else:
            attended = self.cross_attend(enc.global_feat, self._context_without(enc, t))
            context_up = self.project_up(attended)
        feat = self.ffn[t](context_up + f_attr)
        return self.classifier[t](feat)

    def all_logits(self, enc: EncodedImage) -> list[torch.Tensor]:
        return [self.classify(enc, t) for t in range(self.num_categories)]

    def attribute_tokens(self, enc: EncodedImage) -> torch.Tensor:
        """Continuous text tokens, shape [B, T, text_dim]."""
        feats = torch.stack(
            [self.attribute_feature(enc, t) for t in range(self.num_categories)],
            dim=1,
        )
        return self.token_mlp(feats)

    def forward(self, enc: EncodedImage):
        return self.all_logits(enc), self.attribute_tokens(enc)
