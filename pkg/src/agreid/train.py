"""Training loop, evaluation, and ablation presets.

One training run: PK-sampled batches -> augmentation -> image encoding ->
attribute heads -> sentence encoding -> weighted losses -> Adam step on the
mode's trainable parameters, with warmup+cosine learning rates. Every step
appends a loss-breakdown line to ``train_log.jsonl``; checkpoints are
self-describing archives. Runs are deterministic in the seed on one thread.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .augment import augment
from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .config import (
    FULL_FT,
    PSEUDO,
    SUPERVISED,
    ModelConfig,
    TrainConfig,
    config_hash,
    require_valid,
)
from .data import LoadedSplit, load_split, to_batch_tensor
from .errors import (
    ConfigError,
    DataError,
    NonFiniteActivationError,
    UnknownPresetError,
)
from .losses import attribute_losses, batch_hard_triplet, id_loss, total_loss
from .metrics import (
    MetricsReport,
    RankingProblem,
    attribute_accuracy,
    evaluate_ranking,
    predict_attribute_labels,
)
from .model import ReidModel, build_model
from .sampler import pk_sample
from .schedule import group_lrs
from .schema import AttributeSchema, ViewRegistry
from .synthetic import GenSpec
from .text import save_vocabulary

log = logging.getLogger(__name__)

PRESETS = {
    "A": {"use_attribute_heads": False, "use_text_branch": False},
    "B": {"use_text_branch": False},
    "C": {},
    "no_view_token": {"use_view_token": False},
    "gt_attributes": {"gt_attributes": True},
    "pseudo_attr": {"attribute_mode": PSEUDO},
}

PROTOCOLS = ("A2G", "G2A")


def ablation_preset(tag: str) -> dict:
    """Model-config field deltas for one ablation preset tag."""
    if tag not in PRESETS:
        raise UnknownPresetError(
            f"unknown preset {tag!r}; choose from {sorted(PRESETS)}"
        )
    return dict(PRESETS[tag])


def apply_preset(cfg: ModelConfig, tag: str) -> ModelConfig:
    return dataclasses.replace(cfg, **ablation_preset(tag))


def load_dataset_info(data_dir) -> tuple[AttributeSchema, ViewRegistry, GenSpec]:
    echo = Path(data_dir) / "genspec-echo.json"
    if not echo.exists():
        raise DataError(
            f"{echo} not found; the data directory must describe its schema "
            f"and views (emitted by generate-data)"
        )
    spec = GenSpec.from_dict(json.loads(echo.read_text()))
    return spec.schema, spec.views, spec


def _identity_map(identities: np.ndarray) -> dict[int, int]:
    return {int(identity): i for i, identity in enumerate(sorted(set(identities.tolist())))}


class TrainRun:
    """Holds the mutable pieces of one training run."""

    def __init__(
        self,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        data_dir,
        out_dir,
        drop_attributes: bool = False,
    ):
        require_valid(model_cfg)
        if train_cfg.warmup_epochs >= train_cfg.epochs:
            raise ConfigError("warmup_epochs must be < epochs")
        if train_cfg.batch_identities < 2:
            raise ConfigError("need >= 2 identities per batch for triplets")
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.data_dir = Path(data_dir)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        self.schema, self.views, _ = load_dataset_info(data_dir)
        self.split = load_split(
            self.data_dir / "train.jsonl",
            self.data_dir,
            self.schema,
            self.views,
            expected_size=model_cfg.image_size,
            drop_attributes=drop_attributes or model_cfg.attribute_mode == PSEUDO,
        )
        supervised = model_cfg.attribute_mode == SUPERVISED
        needs_labels = supervised and (
            model_cfg.use_attribute_heads or model_cfg.gt_attributes
        )
        if needs_labels and self.split.attributes is None:
            raise DataError(
                "supervised attribute mode needs attribute labels in the manifest"
            )
        self.identity_map = _identity_map(self.split.identities)
        self.labels = np.array(
            [self.identity_map[int(i)] for i in self.split.identities], dtype=np.int64
        )
        self.model = build_model(
            model_cfg,
            self.views,
            self.schema if supervised else None,
            num_identities=len(self.identity_map),
            seed=train_cfg.seed,
        )
        self.steps_per_epoch = len(
            pk_sample(
                self.labels,
                train_cfg.batch_identities,
                train_cfg.batch_instances,
                train_cfg.seed,
                0,
            )
        )
        self.groups = self.model.parameter_groups(model_cfg.mode)
        self.opt_param_names = [n for g in self.groups for n in g["param_names"]]
        self.optimizer = torch.optim.Adam(
            [{"params": g["params"], "lr": train_cfg.base_lr} for g in self.groups],
            betas=train_cfg.betas,
            eps=train_cfg.eps,
            weight_decay=train_cfg.weight_decay,
        )
        self.start_epoch = 0
        self.step = 0

    # -- checkpoint plumbing -------------------------------------------------

    def restore(self, checkpoint_path) -> None:
        ckpt = load_checkpoint(checkpoint_path)
        if ckpt.meta["config_hash"] != config_hash(self.model_cfg):
            raise ConfigError(
                "cannot resume: checkpoint was trained with a different model config"
            )
        self.model.load_state_dict(ckpt.model.state_dict())
        name_to_param = dict(self.model.named_parameters())
        for pname in self.opt_param_names:
            fields = ckpt.opt_state.get(pname)
            if not fields:
                continue
            self.optimizer.state[name_to_param[pname]] = {
                k: torch.from_numpy(v.copy()) for k, v in fields.items()
            }
        self.start_epoch = ckpt.epoch + 1
        self.step = ckpt.step

    def save(self, path, epoch: int, metrics: dict | None = None) -> None:
        save_checkpoint(
            path,
            self.model,
            model_cfg=self.model_cfg,
            train_cfg=self.train_cfg,
            views=self.views,
            schema=self.schema,
            identity_map=self.identity_map,
            epoch=epoch,
            step=self.step,
            metrics=metrics,
            optimizer=self.optimizer,
            opt_param_names=self.opt_param_names,
        )
        if self.model.text is not None:
            save_vocabulary(self.model.text.vocab, Path(path).parent / "vocab.json")

    # -- one training step ----------------------------------------------------

    def _batch_tensors(self, idxs: list[int], epoch: int, step: int):
        cfg = self.train_cfg
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(4, epoch, step))
        )
        imgs = np.stack(
            [
                augment(
                    self.split.images[i],
                    rng,
                    flip=cfg.flip,
                    pad_crop=cfg.pad_crop,
                    erase=cfg.random_erase,
                )
                for i in idxs
            ]
        )
        x = to_batch_tensor(imgs)
        y = torch.from_numpy(self.labels[idxs])
        views = torch.from_numpy(self.split.view_ids[idxs])
        attrs = (
            torch.from_numpy(self.split.attributes[idxs])
            if self.split.attributes is not None
            else None
        )
        return x, y, views, attrs

    def _step_losses(self, x, y, views, attrs):
        cfg = self.model_cfg
        out = self.model(
            x, view_ids=views, attr_labels=attrs if cfg.gt_attributes else None
        )
        id_img = id_loss(self.model.id_head_image(out.global_feat), y, cfg.label_smoothing)
        tri_img = batch_hard_triplet(out.global_feat, y, cfg.triplet_margin)
        id_txt = tri_txt = None
        if out.text_feat is not None:
            id_txt = id_loss(self.model.id_head_text(out.text_feat), y, cfg.label_smoothing)
            tri_txt = batch_hard_triplet(out.text_feat, y, cfg.triplet_margin)
        attr_terms = ()
        if out.attr_logits is not None and attrs is not None:
            attr_terms = attribute_losses(
                out.attr_logits, attrs, cfg.label_smoothing, cfg.attribute_mode
            )
        return total_loss(
            id_image=id_img,
            tri_image=tri_img,
            id_text=id_txt,
            tri_text=tri_txt,
            attr=attr_terms,
            w_id=cfg.id_loss_weight,
            w_tri=cfg.triplet_loss_weight,
        )

    # -- the loop --------------------------------------------------------------

    def run(self) -> Path:
        cfg = self.train_cfg
        self.model.train()
        counts = self.model.count_parameters()
        log.info(
            "trainable parameters: prompt_tune=%d full_ft=%d (mode=%s)",
            counts["trainable_prompt_tune"],
            counts["trainable_full_ft"],
            self.model_cfg.mode,
        )
        log_path = self.out_dir / "train_log.jsonl"
        ckpt_path = self.out_dir / "checkpoint.npz"
        mode = "a" if self.start_epoch > 0 else "w"
        with log_path.open(mode) as logf:
            if self.start_epoch == 0:
                logf.write(
                    json.dumps(
                        {
                            "event": "start",
                            "parameter_counts": counts,
                            "mode": self.model_cfg.mode,
                            "preset": cfg.preset,
                            "config_hash": config_hash(self.model_cfg),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            for epoch in range(self.start_epoch, cfg.epochs):
                batches = pk_sample(
                    self.labels,
                    cfg.batch_identities,
                    cfg.batch_instances,
                    cfg.seed,
                    epoch,
                )
                for b, idxs in enumerate(batches):
                    lrs = group_lrs(self.step, cfg, self.steps_per_epoch)
                    for group_cfg, group in zip(self.groups, self.optimizer.param_groups):
                        group["lr"] = lrs["backbone" if group_cfg["name"] == "backbone" else "main"]
                    x, y, views, attrs = self._batch_tensors(idxs, epoch, b)
                    try:
                        breakdown = self._step_losses(x, y, views, attrs)
                        if not torch.isfinite(breakdown.total):
                            raise NonFiniteActivationError("non-finite total loss")
                    except NonFiniteActivationError:
                        log.error(
                            "aborting at epoch %d step %d; last checkpoint kept",
                            epoch,
                            self.step,
                        )
                        raise
                    self.optimizer.zero_grad()
                    breakdown.total.backward()
                    self.optimizer.step()
                    entry = {"step": self.step, "epoch": epoch, "lr": lrs["main"]}
                    entry.update(breakdown.to_log())
                    logf.write(json.dumps(entry, sort_keys=True) + "\n")
                    self.step += 1
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / f"checkpoint_epoch{epoch + 1:04d}.npz", epoch)
            self.save(ckpt_path, cfg.epochs - 1)
        return ckpt_path


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    data_dir,
    out_dir,
    resume: Optional[str] = None,
    drop_attributes: bool = False,
) -> Path:
    run = TrainRun(model_cfg, train_cfg, data_dir, out_dir, drop_attributes)
    if resume is not None:
        run.restore(resume)
    return run.run()


# -- evaluation ---------------------------------------------------------------


@torch.no_grad()
def encode_split(model: ReidModel, split: LoadedSplit, batch_size: int = 64) -> dict:
    """Deterministic (augmentation-free) features for every sample."""
    model.eval()
    feats: dict[str, list] = {"retrieval": [], "global": [], "text": [], "tokens": []}
    logits: list[list[np.ndarray]] = []
    needs_labels = model.cfg.gt_attributes
    for start in range(0, len(split), batch_size):
        sl = slice(start, start + batch_size)
        x = to_batch_tensor(split.images[sl])
        views = torch.from_numpy(split.view_ids[sl])
        attrs = None
        if needs_labels:
            if split.attributes is None:
                raise DataError("ground-truth attribute mode needs labeled data")
            attrs = torch.from_numpy(split.attributes[sl])
        out = model(x, view_ids=views, attr_labels=attrs)
        feats["retrieval"].append(out.retrieval.numpy())
        feats["global"].append(out.global_feat.numpy())
        if out.text_feat is not None:
            feats["text"].append(out.text_feat.numpy())
        if out.attr_tokens is not None:
            feats["tokens"].append(out.attr_tokens.numpy())
        if out.attr_logits is not None:
            logits.append([lg.numpy() for lg in out.attr_logits])
    result = {
        "retrieval": np.concatenate(feats["retrieval"]),
        "global": np.concatenate(feats["global"]),
        "text": np.concatenate(feats["text"]) if feats["text"] else None,
        "tokens": np.concatenate(feats["tokens"]) if feats["tokens"] else None,
        "attr_logits": None,
    }
    if logits:
        result["attr_logits"] = [
            np.concatenate([chunk[t] for chunk in logits])
            for t in range(len(logits[0]))
        ]
    return result


def load_protocol_splits(
    ckpt: LoadedCheckpoint, data_dir, protocol: str, drop_attributes: bool = False
) -> tuple[LoadedSplit, LoadedSplit]:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"protocol must be one of {PROTOCOLS}")
    data_dir = Path(data_dir)
    query = load_split(
        data_dir / f"query_{protocol}.jsonl",
        data_dir,
        ckpt.schema,
        ckpt.views,
        expected_size=ckpt.model_cfg.image_size,
        drop_attributes=drop_attributes,
    )
    gallery = load_split(
        data_dir / f"gallery_{protocol}.jsonl",
        data_dir,
        ckpt.schema,
        ckpt.views,
        expected_size=ckpt.model_cfg.image_size,
        drop_attributes=drop_attributes,
    )
    return query, gallery


def evaluate(
    ckpt: LoadedCheckpoint,
    data_dir,
    protocol: str,
    max_rank: int = 10,
    drop_attributes: bool = False,
) -> MetricsReport:
    """Encode one protocol's query/gallery splits and score the ranking."""
    query, gallery = load_protocol_splits(ckpt, data_dir, protocol, drop_attributes)
    qf = encode_split(ckpt.model, query)
    gf = encode_split(ckpt.model, gallery)
    problem = RankingProblem(
        query=qf["retrieval"],
        gallery=gf["retrieval"],
        query_ids=query.identities,
        gallery_ids=gallery.identities,
        query_cams=query.camera_ids,
        gallery_cams=gallery.camera_ids,
        query_views=query.view_ids,
        gallery_views=gallery.view_ids,
        exclude_same_camera=False,
        metric=ckpt.model_cfg.distance,
    )
    report = evaluate_ranking(problem, max_rank=max_rank, protocol=protocol)
    if qf["attr_logits"] is not None and query.attributes is not None:
        pred = predict_attribute_labels(qf["attr_logits"])
        gt_pred = predict_attribute_labels(gf["attr_logits"])
        acc = attribute_accuracy(
            np.concatenate([pred, gt_pred]),
            np.concatenate([query.attributes, gallery.attributes]),
        )
        report.attribute_accuracy = [float(a) for a in acc]
    report.extra["config_hash"] = ckpt.meta["config_hash"]
    report.extra["seed"] = ckpt.meta["seed"]
    report.extra["preset"] = ckpt.train_cfg.preset
    return report


def rank_list_rows(ckpt: LoadedCheckpoint, data_dir, protocol: str, top_k: int = 10):
    """CSV rows (query_id, rank, gallery_id, distance, is_match) per query."""
    from .metrics import pairwise_distance

    query, gallery = load_protocol_splits(ckpt, data_dir, protocol)
    qf = encode_split(ckpt.model, query)
    gf = encode_split(ckpt.model, gallery)
    dist = pairwise_distance(qf["retrieval"], gf["retrieval"], ckpt.model_cfg.distance)
    rows = []
    for qi in range(dist.shape[0]):
        order = np.argsort(dist[qi], kind="stable")[:top_k]
        for rank, gi in enumerate(order, start=1):
            rows.append(
                (
                    int(query.identities[qi]),
                    rank,
                    int(gallery.identities[gi]),
                    float(dist[qi, gi]),
                    bool(query.identities[qi] == gallery.identities[gi]),
                )
            )
    return rows
