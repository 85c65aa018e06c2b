"""Self-describing checkpoint archive.

A checkpoint is a single ``.npz`` holding every named parameter array (keys
``param::<name>``), optimizer moment arrays (``opt::<field>::<name>``), and a
JSON metadata header under ``_meta`` with the configs, schema, views,
vocabulary, tags, identity map, step counter and a metrics snapshot. See
``checkpoint.md`` in the repository root for the format notes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, config_hash
from .errors import ConfigError, DataError
from .model import ReidModel, build_model
from .schema import AttributeSchema, ViewRegistry

PARAM = "param::"
OPT = "opt::"


@dataclass
class ParameterStore:
    """Named arrays + tags + metadata; the serialized form of a model."""

    arrays: dict[str, np.ndarray]
    tags: dict[str, str]
    meta: dict

    @classmethod
    def from_model(cls, model: ReidModel, meta: dict) -> "ParameterStore":
        arrays = {
            name: p.detach().cpu().numpy().copy()
            for name, p in model.named_parameters()
        }
        return cls(arrays=arrays, tags=model.parameter_tags(), meta=meta)


def save_checkpoint(
    path,
    model: ReidModel,
    *,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    views: ViewRegistry,
    schema: AttributeSchema | None,
    identity_map: dict[int, int],
    epoch: int,
    step: int,
    metrics: dict | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    opt_param_names: list[str] | None = None,
) -> None:
    store = ParameterStore.from_model(
        model,
        meta={
            "model_config": model_cfg.to_dict(),
            "train_config": train_cfg.to_dict(),
            "config_hash": config_hash(model_cfg),
            "views": views.to_dict(),
            "schema": schema.to_dict() if schema is not None else None,
            "vocabulary": model.text.vocab if model.text is not None else None,
            "identity_map": {str(k): v for k, v in identity_map.items()},
            "tags": model.parameter_tags(),
            "epoch": epoch,
            "step": step,
            "seed": train_cfg.seed,
            "metrics": metrics or {},
        },
    )
    payload = {PARAM + k: v for k, v in store.arrays.items()}
    if optimizer is not None:
        if opt_param_names is None:
            raise ValueError("optimizer state needs the parameter name order")
        name_of = {}
        i = 0
        for group in optimizer.param_groups:
            for p in group["params"]:
                name_of[id(p)] = opt_param_names[i]
                i += 1
        for p, state in optimizer.state.items():
            pname = name_of[id(p)]
            for field, value in state.items():
                payload[f"{OPT}{field}::{pname}"] = (
                    value.detach().cpu().numpy()
                    if torch.is_tensor(value)
                    else np.asarray(value)
                )
    payload["_meta"] = np.frombuffer(
        json.dumps(store.meta, sort_keys=True).encode(), dtype=np.uint8
    )
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **payload)
    tmp.replace(path)


@dataclass
class LoadedCheckpoint:
    model: ReidModel
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    views: ViewRegistry
    schema: AttributeSchema | None
    identity_map: dict[int, int]
    epoch: int
    step: int
    meta: dict
    opt_state: dict[str, dict[str, np.ndarray]]


def load_checkpoint(path) -> LoadedCheckpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["_meta"]).decode())
        arrays = {}
        opt_state: dict[str, dict[str, np.ndarray]] = {}
        for key in z.files:
            if key.startswith(PARAM):
                arrays[key[len(PARAM):]] = z[key]
            elif key.startswith(OPT):
                _, field, pname = key.split("::", 2)
                opt_state.setdefault(pname, {})[field] = z[key]

    model_cfg = ModelConfig.from_dict(meta["model_config"])
    train_cfg = TrainConfig.from_dict(meta["train_config"])
    if meta["config_hash"] != config_hash(model_cfg):
        raise ConfigError("checkpoint config hash mismatch")
    views = ViewRegistry.from_dict(meta["views"])
    schema = (
        AttributeSchema.from_dict(meta["schema"]) if meta["schema"] is not None else None
    )
    identity_map = {int(k): v for k, v in meta["identity_map"].items()}
    model = build_model(
        model_cfg, views, schema, max(len(identity_map), 1), seed=meta["seed"]
    )
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    missing = [k for k, _ in model.named_parameters() if k not in state]
    if missing:
        raise DataError(f"checkpoint missing arrays: {missing[:5]}")
    model.load_state_dict(state, strict=False)
    return LoadedCheckpoint(
        model=model,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        views=views,
        schema=schema,
        identity_map=identity_map,
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        meta=meta,
        opt_state=opt_state,
    )


def load_pretrained_arrays(model: ReidModel, path) -> int:
    """Copy arrays from an optional pretrained archive; see pretrained_map.md.

    A missing archive is not an error (returns 0). Arrays are matched by the
    documented canonical names; shape mismatches abort.
    """
    path = Path(path)
    if not path.exists():
        return 0
    loaded = 0
    params = dict(model.named_parameters())
    with np.load(path) as z:
        for key in z.files:
            if key not in params:
                continue
            tensor = torch.from_numpy(z[key].copy())
            if tensor.shape != params[key].shape:
                raise DataError(
                    f"pretrained array {key}: shape {tuple(tensor.shape)} != "
                    f"{tuple(params[key].shape)}"
                )
            with torch.no_grad():
                params[key].copy_(tensor)
            loaded += 1
    return loaded
