"""Training objectives: smoothed identity CE, batch-hard triplet, composition.

The total objective is

    total = w_id * (id_image + id_text) + w_tri * (tri_image + tri_text)
            + sum_t attr[t]

with absent branches contributing zero and the attribute sum dropped in
pseudo mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .config import PSEUDO
from .errors import ConfigError, DegenerateBatchError, LabelOutOfRangeError

# keeps sqrt differentiable at zero distance without moving values at the
# scales the tests pin (sqrt(x^2 + 1e-24) == x to double precision for x >= 1e-9)
_DIST_EPS = 1e-24


def smoothed_cross_entropy(
    logits: torch.Tensor, labels: torch.Tensor, smoothing: float
) -> torch.Tensor:
    """Label-smoothing cross-entropy, mean over the batch.

    The target puts 1 - smoothing on the true class and spreads the rest
    uniformly over the other classes.
    """
    n = logits.shape[-1]
    if ((labels < 0) | (labels >= n)).any():
        raise LabelOutOfRangeError(f"labels must lie in [0, {n})")
    logp = F.log_softmax(logits, dim=-1)
    true_logp = logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    if n == 1:
        return -true_logp.mean()
    off = smoothing / (n - 1)
    loss = -((1.0 - smoothing) * true_logp + off * (logp.sum(dim=-1) - true_logp))
    return loss.mean()


def id_loss(logits, labels, smoothing):
    return smoothed_cross_entropy(logits, labels, smoothing)


def attribute_losses(
    logits_per_category: Sequence[torch.Tensor],
    labels: torch.Tensor,
    smoothing: float,
    attribute_mode: str,
) -> list[torch.Tensor]:
    """One smoothed-CE term per category; labels is [B, T]."""
    if attribute_mode == PSEUDO:
        raise ConfigError("attribute losses are undefined in pseudo mode")
    return [
        smoothed_cross_entropy(logits, labels[:, t], smoothing)
        for t, logits in enumerate(logits_per_category)
    ]


def pairwise_euclidean(x: torch.Tensor) -> torch.Tensor:
    sq = (x * x).sum(dim=1)
    d2 = sq.unsqueeze(1) + sq.unsqueeze(0) - 2.0 * (x @ x.t())
    return torch.sqrt(d2.clamp_min(0.0) + _DIST_EPS)


def batch_hard_triplet(
    features: torch.Tensor, labels: torch.Tensor, margin: float
) -> torch.Tensor:
    """Per-anchor hinge on hardest positive minus hardest negative.

    The hardest positive is the maximum same-identity distance (the anchor
    itself included, at distance zero); every anchor must have at least one
    negative or the batch is degenerate.
    """
    dist = pairwise_euclidean(features)
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    if (~same).sum(dim=1).eq(0).any():
        raise DegenerateBatchError("some anchor has no negative in the batch")
    neg_inf = torch.finfo(dist.dtype).max
    d_pos = dist.masked_fill(~same, 0.0).max(dim=1).values
    d_neg = dist.masked_fill(same, neg_inf).min(dim=1).values
    return F.relu(d_pos - d_neg + margin).mean()


@dataclass
class LossBreakdown:
    id_image: float
    tri_image: float
    id_text: float
    tri_text: float
    attr: tuple
    total: object  # tensor during training, float in logs

    def to_log(self) -> dict:
        def f(x):
            return float(x.detach()) if torch.is_tensor(x) else float(x)

        return {
            "id_image": f(self.id_image),
            "tri_image": f(self.tri_image),
            "id_text": f(self.id_text),
            "tri_text": f(self.tri_text),
            "attr": [f(a) for a in self.attr],
            "total": f(self.total),
        }


def compose_total(id_image, tri_image, id_text, tri_text, attr, w_id, w_tri):
    total = w_id * (id_image + id_text) + w_tri * (tri_image + tri_text)
    for a in attr:
        total = total + a
    return total


def total_loss(
    *,
    id_image,
    tri_image,
    id_text=None,
    tri_text=None,
    attr: Sequence = (),
    w_id: float,
    w_tri: float,
) -> LossBreakdown:
    """Compose the weighted objective; absent text terms count as zero."""
    zero = id_image * 0.0
    id_text = zero if id_text is None else id_text
    tri_text = zero if tri_text is None else tri_text
    total = compose_total(id_image, tri_image, id_text, tri_text, attr, w_id, w_tri)
    return LossBreakdown(
        id_image=id_image,
        tri_image=tri_image,
        id_text=id_text,
        tri_text=tri_text,
        attr=tuple(attr),
        total=total,
    )
