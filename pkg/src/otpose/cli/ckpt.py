"""Checkpoint save/load: a named-tensor container plus a JSON sidecar
holding the full run configuration so evaluation can rebuild the model."""

from __future__ import annotations

import json

import numpy as np

from ..posenet import PoseModel
from . import tensorfile
from .config import RunConfig


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: PoseModel, run_cfg: RunConfig) -> None:
    named = {p.name: p.value for p in model.parameters()}
    tensorfile.save_container(path, named)
    with open(f"{path}.json", "w", encoding="utf-8") as f:
        json.dump(run_cfg.to_dict(), f, sort_keys=True, indent=1)


def load_checkpoint(path) -> tuple[PoseModel, RunConfig]:
    with open(f"{path}.json", "r", encoding="utf-8") as f:
        run_cfg = RunConfig.from_dict(json.load(f))
    model = PoseModel(run_cfg.model_config(), seed=0)
    named = tensorfile.load_container(path)
    for p in model.parameters():
        if p.name not in named:
            raise CheckpointError(f"checkpoint is missing tensor {p.name}")
        arr = named.pop(p.name)
        if arr.shape != p.value.shape:
            raise CheckpointError(
                f"tensor {p.name}: checkpoint shape {arr.shape} does not "
                f"match configured shape {p.value.shape}")
        p.value[...] = arr.astype(p.value.dtype)
    if named:
        raise CheckpointError(
            f"checkpoint holds unknown tensors: {sorted(named)[:3]}")
    return model, run_cfg
