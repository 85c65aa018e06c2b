"""Retrieval evaluation: pairwise distances, mAP, CMC, attribute scoring.

Rankings are deterministic: sorting is by ascending distance with ties broken
by gallery index. The optional exclusion rule drops gallery entries sharing
both identity and camera with the query (used by view-homogeneous protocols);
queries left without any valid match are skipped and counted.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeMismatchError

log = logging.getLogger(__name__)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


def pairwise_distance(query: np.ndarray, gallery: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """[Nq, D] x [Ng, D] -> [Nq, Ng] distance matrix.

    Cosine distance is 1 - <q, g> on row-normalized inputs; zero rows are
    reported and pushed to the maximum distance (2.0).
    """
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise ShapeMismatchError(
            f"incompatible feature shapes {query.shape} vs {gallery.shape}"
        )
    if metric == "euclidean":
        diff = query[:, None, :] - gallery[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    if metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}")
    qz = np.linalg.norm(query, axis=1) == 0
    gz = np.linalg.norm(gallery, axis=1) == 0
    dist = 1.0 - l2_normalize_rows(query) @ l2_normalize_rows(gallery).T
    if qz.any() or gz.any():
        log.warning(
            "cosine distance over zero vectors (%d query, %d gallery rows); "
            "treated as maximally distant",
            int(qz.sum()),
            int(gz.sum()),
        )
        dist[qz, :] = 2.0
        dist[:, gz] = 2.0
    return dist


@dataclass
class RankingProblem:
    query: np.ndarray
    gallery: np.ndarray
    query_ids: np.ndarray
    gallery_ids: np.ndarray
    query_cams: Optional[np.ndarray] = None
    gallery_cams: Optional[np.ndarray] = None
    query_views: Optional[np.ndarray] = None
    gallery_views: Optional[np.ndarray] = None
    exclude_same_camera: bool = False
    metric: str = "cosine"

    def __post_init__(self):
        if self.query.shape[1] != self.gallery.shape[1]:
            raise ShapeMismatchError("query/gallery feature widths differ")
        if self.exclude_same_camera and (
            self.query_cams is None or self.gallery_cams is None
        ):
            raise ValueError("camera ids required when the exclusion rule is on")


@dataclass
class MetricsReport:
    protocol: str
    mean_ap: float
    cmc: list[float]
    n_queries_evaluated: int
    n_queries_skipped: int
    attribute_accuracy: Optional[list[float]] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "protocol": self.protocol,
            "mAP": self.mean_ap,
            "cmc": self.cmc,
            "n_queries_evaluated": self.n_queries_evaluated,
            "n_queries_skipped": self.n_queries_skipped,
        }
        if self.attribute_accuracy is not None:
            d["attribute_accuracy"] = self.attribute_accuracy
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _per_query_rankings(problem: RankingProblem):
    """Yield (match_flags in ranked order) per query; None when no valid match."""
    dist = pairwise_distance(problem.query, problem.gallery, problem.metric)
    for qi in range(dist.shape[0]):
        order = np.argsort(dist[qi], kind="stable")  # ties -> lower gallery index
        keep = np.ones(len(order), dtype=bool)
        if problem.exclude_same_camera:
            same_id = problem.gallery_ids[order] == problem.query_ids[qi]
            same_cam = problem.gallery_cams[order] == problem.query_cams[qi]
            keep = ~(same_id & same_cam)
        matches = problem.gallery_ids[order][keep] == problem.query_ids[qi]
        if not matches.any():
            yield None
        else:
            yield matches


def evaluate_ranking(problem: RankingProblem, max_rank: int = 10, protocol: str = "") -> MetricsReport:
    """mAP and CMC over all queries with at least one valid match."""
    max_rank = min(max_rank, problem.gallery.shape[0])
    aps = []
    first_match_ranks = []
    skipped = 0
    for matches in _per_query_rankings(problem):
        if matches is None:
            skipped += 1
            continue
        pos = np.flatnonzero(matches)
        ranks = pos + 1
        precision_at_hits = np.arange(1, len(pos) + 1) / ranks
        aps.append(precision_at_hits.mean())
        first_match_ranks.append(ranks[0])
    n_eval = len(aps)
    cmc = []
    fm = np.array(first_match_ranks)
    for k in range(1, max_rank + 1):
        cmc.append(float((fm <= k).mean()) if n_eval else 0.0)
    return MetricsReport(
        protocol=protocol,
        mean_ap=float(np.mean(aps)) if n_eval else 0.0,
        cmc=cmc,
        n_queries_evaluated=n_eval,
        n_queries_skipped=skipped,
    )


def compute_map(problem: RankingProblem) -> float:
    return evaluate_ranking(problem, max_rank=1).mean_ap


def compute_cmc(problem: RankingProblem, max_rank: int) -> list[float]:
    if max_rank > problem.gallery.shape[0]:
        raise ValueError("max_rank exceeds gallery size")
    return evaluate_ranking(problem, max_rank=max_rank).cmc


def attribute_accuracy(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-category accuracy over [N, T] predicted and true label arrays."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeMismatchError(f"label shapes differ: {pred.shape} vs {gt.shape}")
    return (pred == gt).mean(axis=0)


def predict_attribute_labels(logits_per_category) -> np.ndarray:
    """Argmax per category (ties resolve to the lower index), -> [N, T]."""
    cols = [np.asarray(lg).argmax(axis=1) for lg in logits_per_category]
    return np.stack(cols, axis=1)


def attribute_query_retrieval(query_token: np.ndarray, gallery_tokens: np.ndarray):
    """Rank gallery attribute tokens by cosine distance to one query token."""
    dist = pairwise_distance(query_token[None, :], gallery_tokens)[0]
    order = np.argsort(dist, kind="stable")
    return order, dist[order]
