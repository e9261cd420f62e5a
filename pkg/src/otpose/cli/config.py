"""Structured run configuration with strict key checking.

A run config is JSON with up to five sections (scene, data, model, train,
ablation); every key must name a known field, and unknown keys fail fast
naming the offender.  Section objects convert into the dataclasses the
library modules consume.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from ..posenet import DILATIONS, ModelConfig
from ..synthvideo import SceneConfig
from ..training import TrainConfig


class ConfigKeyError(ValueError):
    pass


@dataclass
class DataSection:
    train_sequences: int = 16
    test_sequences: int = 4
    n_frames: int = 40
    label_stride: int = 4


@dataclass
class ModelSection:
    te_layers: int = 8
    oe_layers: int = 8
    te_heads: int = 2
    oe_heads: int = 1
    mlp_ratio: float = 2.0
    refine_width: int = 24
    scale_full_d: bool = False
    use_pos_embed: bool = True
    dtype: str = "f64"


@dataclass
class AblationSection:
    one_branch: bool = False
    no_oe: bool = False
    pseudo_from_flow: bool = False
    pseudo_label_norm: str = "max"


@dataclass
class TrainSection:
    lr: float = 1e-5
    lr_scale: float = 500.0
    warmup_epochs: int = 3
    total_epochs: int = 12
    batch_size: int = 4
    weight_decay: float = 0.01
    seed: int = 7
    flip_augment: bool = True


_SECTIONS = {
    "scene": SceneConfig,
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "ablation": AblationSection,
}


def _build_section(cls, section: str, values: dict):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigKeyError(f"unknown config key: {section}.{key}")
        if known[key].name == "occl_shift":
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigKeyError("config root must be an object")
        sections = {}
        for key, val in doc.items():
            if key not in _SECTIONS:
                raise ConfigKeyError(f"unknown config key: {key}")
            if not isinstance(val, dict):
                raise ConfigKeyError(f"config section {key} must be an object")
            sections[key] = _build_section(_SECTIONS[key], key, val)
        return RunConfig(**sections)

    @staticmethod
    def from_file(path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return RunConfig.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name))
                for name in _SECTIONS}

    def model_config(self) -> ModelConfig:
        m, a = self.model, self.ablation
        return ModelConfig(
            n_joints=self.scene.n_joints, H=self.scene.H, W=self.scene.W,
            te_layers=m.te_layers, oe_layers=m.oe_layers,
            te_heads=m.te_heads, oe_heads=m.oe_heads, mlp_ratio=m.mlp_ratio,
            refine_width=m.refine_width, dilations=DILATIONS,
            scale_full_d=m.scale_full_d, use_pos_embed=m.use_pos_embed,
            one_branch=a.one_branch, no_oe=a.no_oe,
            pseudo_from_flow=a.pseudo_from_flow,
            pseudo_label_norm=a.pseudo_label_norm, dtype=m.dtype)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(lr=t.lr, lr_scale=t.lr_scale,
                           warmup_epochs=t.warmup_epochs,
                           total_epochs=t.total_epochs,
                           batch_size=t.batch_size,
                           weight_decay=t.weight_decay, seed=t.seed,
                           flip_augment=t.flip_augment)

    def apply_ablation(self, spec: str) -> None:
        """Switch on ablations from a CLI spec like ``one_branch+no_oe``."""
        for name in spec.replace(",", "+").split("+"):
            name = name.strip()
            if not name:
                continue
            if name == "full":
                continue
            if not hasattr(self.ablation, name):
                raise ConfigKeyError(f"unknown ablation: {name}")
            if name == "pseudo_label_norm":
                raise ConfigKeyError("set pseudo_label_norm in the config file")
            setattr(self.ablation, name, True)
