"""Warmup-plus-cosine learning-rate schedule.

Linear warmup from ``warmup_start_factor * base_lr`` at step 0 up to
``base_lr`` at the end of the warmup epochs, then cosine decay back down to
``warmup_start_factor * base_lr`` at the final training step. The backbone
group (full fine-tuning) follows the same shape scaled by
``backbone_lr / base_lr``.
"""

from __future__ import annotations

import math

from .config import TrainConfig


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    floor = cfg.warmup_start_factor * cfg.base_lr
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    total_steps = cfg.epochs * steps_per_epoch
    if warmup_steps > 0 and step <= warmup_steps:
        frac = step / warmup_steps
        return floor + (cfg.base_lr - floor) * frac
    last = max(total_steps - 1, warmup_steps + 1)
    progress = min(max((step - warmup_steps) / (last - warmup_steps), 0.0), 1.0)
    return floor + (cfg.base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def group_lrs(step: int, cfg: TrainConfig, steps_per_epoch: int) -> dict[str, float]:
    base = lr_at(step, cfg, steps_per_epoch)
    return {
        "main": base,
        "backbone": base * (cfg.backbone_lr / cfg.base_lr),
    }
