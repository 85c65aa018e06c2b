"""Attribute-aware prompt learning for aerial-ground person re-identification."""

from .config import ModelConfig, TrainConfig, validate_config
from .schema import AttributeSchema, PersonSample, ViewRegistry
from .synthetic import GenSpec, generate_dataset
from .model import ReidModel, build_model
from .train import ablation_preset, evaluate, train

__all__ = [
    "AttributeSchema",
    "GenSpec",
    "ModelConfig",
    "PersonSample",
    "ReidModel",
    "TrainConfig",
    "ViewRegistry",
    "ablation_preset",
    "build_model",
    "evaluate",
    "generate_dataset",
    "train",
    "validate_config",
]
