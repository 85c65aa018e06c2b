"""Prompted image encoder.

A pre-norm patch transformer carrying learnable per-layer prompts. Each layer
consumes the image tokens of the previous layer concatenated with that
layer's own fresh prompts (deep-prompt semantics); transformed prompts are
discarded except at the final layer, where the first ``attr_prompts`` of them
come out as attribute-specific features alongside the class token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import NonFiniteActivationError, ShapeMismatchError


@dataclass
class EncodedImage:
    """Final-layer class feature and transformed attribute prompts."""

    global_feat: torch.Tensor   # [B, embed_dim]
    prompt_feats: torch.Tensor  # [B, attr_prompts, embed_dim]


class SelfAttention(nn.Module):
    def __init__(self, dim, heads, causal=False):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.causal = causal
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, collect_attn=False):
        b, s, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def split(t):
            return t.view(b, s, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if self.causal:
            mask = torch.full((s, s), float("-inf"), dtype=x.dtype, device=x.device)
            scores = scores + torch.triu(mask, diagonal=1)
        attn = scores.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        out = self.proj(out)
        return (out, attn) if collect_attn else (out, None)


class Block(nn.Module):
    """Pre-norm transformer block: attention + MLP with residuals.

    Residual-branch output projections are scaled down by 1/sqrt(2 * depth)
    at init so deep stacks start near the identity and train stably from
    scratch.
    """

    def __init__(self, dim, heads, mlp_ratio=4, causal=False, depth_scale=1):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, causal=causal)
        self.norm2 = nn.LayerNorm(dim)
        hidden = dim * mlp_ratio
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim)
        )
        scale = 1.0 / math.sqrt(2 * max(depth_scale, 1))
        with torch.no_grad():
            self.attn.proj.weight.mul_(scale)
            self.mlp[2].weight.mul_(scale)

    def forward(self, x, collect_attn=False):
        a, attn = self.attn(self.norm1(x), collect_attn=collect_attn)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x, attn


def check_finite(t: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteActivationError(f"non-finite values in {where}")
    return t


class PromptedImageEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h, w = cfg.image_size
        self.num_patches = cfg.num_patches
        self.patch_proj = nn.Conv2d(
            3, cfg.embed_dim, kernel_size=cfg.patch_size, stride=cfg.patch_size
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.pos_embed = nn.Parameter(
            torch.zeros(1, self.num_patches + 1, cfg.embed_dim)
        )
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.heads, depth_scale=cfg.depth)
            for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        # per-layer prompts; rows [0, attr_prompts) are the attribute prompts
        self.prompts = nn.Parameter(
            torch.zeros(cfg.depth, cfg.total_prompts, cfg.embed_dim)
        )
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.prompts, std=0.02)

    def embed_patches(self, images: torch.Tensor) -> torch.Tensor:
        """[B, 3, H, W] -> [B, N+1, D] with class token and position added."""
        h, w = self.cfg.image_size
        if images.ndim != 4 or images.shape[1:] != (3, h, w):
            raise ShapeMismatchError(
                f"expected images [B, 3, {h}, {w}], got {tuple(images.shape)}"
            )
        x = self.patch_proj(images)          # [B, D, H/p, W/p]
        x = x.flatten(2).transpose(1, 2)     # [B, N, D]
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1)
        return x + self.pos_embed

    def forward(self, images: torch.Tensor, collect_attn=False):
        x = self.embed_patches(images)
        b = x.shape[0]
        n_img = x.shape[1]
        attn_maps = []
        prompt_out = None
        for i, block in enumerate(self.blocks):
            layer_prompts = self.prompts[i].unsqueeze(0).expand(b, -1, -1)
            seq = torch.cat([x, layer_prompts], dim=1)
            seq, attn = block(seq, collect_attn=collect_attn)
            if collect_attn:
                attn_maps.append(attn)
            x = seq[:, :n_img]
            if i == len(self.blocks) - 1:
                prompt_out = seq[:, n_img:]
        final = self.norm(torch.cat([x, prompt_out], dim=1))
        check_finite(final, "image encoder output")
        enc = EncodedImage(
            global_feat=final[:, 0],
            prompt_feats=final[:, n_img : n_img + self.cfg.attr_prompts],
        )
        if collect_attn:
            return enc, attn_maps
        return enc
