"""Loss terms, learning-rate schedule, AdamW, and the training loop.

Supervision is sparse: only labeled windows are trained on.  Both loss terms
are visibility-gated sums of squared error over heatmap channels, averaged
over joints; the prediction term carries an extra factor equal to the
temporal feature count (8), matching the loss definition of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import posenet
from .synthvideo import FrameWindow, flip_window
from .tensorlab import Parameter, Tensor
from .tensorlab import ops

PRED_WEIGHT = 8.0  # N_f of the temporal branches


@dataclass
class TrainConfig:
    lr: float = 1e-5
    lr_scale: float = 500.0  # desk-scale multiplier on the base rate
    warmup_epochs: int = 3
    total_epochs: int = 12
    batch_size: int = 4
    weight_decay: float = 0.01
    seed: int = 7
    flip_augment: bool = True
    micro_batch: Optional[int] = None  # accumulate gradients in chunks
    steps_per_epoch: Optional[int] = None  # filled in by train()

    def __post_init__(self):
        if self.warmup_epochs >= self.total_epochs:
            raise ValueError("warmup_epochs must be smaller than total_epochs")

    @property
    def effective_lr(self) -> float:
        return self.lr * self.lr_scale


@dataclass
class LossReport:
    l_occ: float
    l_pred: float
    total: float
    per_joint: list = field(default_factory=list)

    def __post_init__(self):
        assert self.total == self.l_occ + self.l_pred


def _gate_weights(visibility: np.ndarray, shape, dtype,
                  factor: float = 1.0) -> np.ndarray:
    """Per-sample weight map v_j * factor / (N_j * B), broadcast over pixels."""
    vis = np.asarray(visibility, dtype=dtype)
    if vis.ndim == 1:
        vis = vis[None]
    b, nj = vis.shape
    if shape[-4] != b or shape[-3] != nj:
        raise ValueError(f"visibility {vis.shape} does not match maps {shape}")
    return (vis * (factor / (nj * b)))[:, :, None, None]


def _batched(t: Tensor) -> Tensor:
    return t if t.data.ndim == 4 else ops.reshape(t, (1,) + t.data.shape)


def loss_occ(psi: Tensor, pseudo_label: np.ndarray,
             visibility: np.ndarray) -> Tensor:
    """(1/N_j) sum_j v_j ||pseudo_j - psi_j||^2, averaged over the batch."""
    psi = _batched(psi)
    target = np.asarray(pseudo_label, dtype=psi.data.dtype)
    if target.ndim == 3:
        target = target[None]
    diff = ops.sub(psi, Tensor(target))
    w = _gate_weights(visibility, psi.data.shape, psi.data.dtype)
    return ops.weighted_sum(ops.mul(diff, diff), w)


def loss_pred(p: Tensor, gt: np.ndarray, visibility: np.ndarray,
              n_feats: float = PRED_WEIGHT) -> Tensor:
    """(N_f/N_j) sum_j v_j ||G_j - P_j||^2, averaged over the batch."""
    p = _batched(p)
    target = np.asarray(gt, dtype=p.data.dtype)
    if target.ndim == 3:
        target = target[None]
    diff = ops.sub(p, Tensor(target))
    w = _gate_weights(visibility, p.data.shape, p.data.dtype, factor=n_feats)
    return ops.weighted_sum(ops.mul(diff, diff), w)


def loss_report(psi: np.ndarray, pseudo: np.ndarray, p: np.ndarray,
                gt: np.ndarray, visibility: np.ndarray) -> LossReport:
    """Scalar loss values plus per-joint squared errors (batch means)."""
    vis = np.asarray(visibility, dtype=np.float64)
    if vis.ndim == 1:
        vis, psi, pseudo, p, gt = (a[None] for a in (vis, psi, pseudo, p, gt))
    b, nj = vis.shape
    sq_occ = ((pseudo - psi) ** 2).sum(axis=(-2, -1)) * vis
    sq_pred = ((gt - p) ** 2).sum(axis=(-2, -1)) * vis
    l_occ = float(sq_occ.sum() / (nj * b))
    l_pred = float(PRED_WEIGHT * sq_pred.sum() / (nj * b))
    per_joint = list((sq_occ + PRED_WEIGHT * sq_pred).mean(axis=0))
    return LossReport(l_occ=l_occ, l_pred=l_pred, total=l_occ + l_pred,
                      per_joint=per_joint)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over the warmup epochs, then cosine decay to zero.

    ``step`` counts optimizer updates (the first update is step 1); the
    schedule is continuous at the warmup/cosine boundary and reaches zero
    exactly at the final step.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    spe = cfg.steps_per_epoch or 1
    warm = cfg.warmup_epochs * spe
    total = cfg.total_epochs * spe
    lr = cfg.effective_lr
    if step <= warm:
        return lr * step / max(warm, 1)
    if step >= total:
        return 0.0
    progress = (step - warm) / (total - warm)
    return lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled-weight-decay Adam, beta = (0.9, 0.999), eps = 1e-8.

    Parameters flagged ``no_decay`` (the residual scales) skip the decay
    term.  State lives per parameter in construction order, so two equally
    seeded runs update identically.
    """

    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if weight_decay and not p.no_decay:
                p.value -= lr * weight_decay * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def optimizer_step(params: Sequence[Parameter], state: AdamW, lr: float,
                   weight_decay: float = 0.0) -> None:
    """Functional form of :meth:`AdamW.step`; gradients are read from
    ``param.grad``."""
    assert state.params == list(params)
    state.step(lr, weight_decay)


def _stack_batch(wins: Sequence[FrameWindow], dtype):
    hm = np.stack([w.heatmaps for w in wins]).astype(dtype)
    gt = np.stack([w.gt_heatmaps for w in wins]).astype(dtype)
    vis = np.stack([w.visibility for w in wins])
    return hm, gt, vis


def train(dataset: Sequence[FrameWindow], model_cfg: posenet.ModelConfig,
          train_cfg: TrainConfig, *, log=None):
    """Iterate the labeled windows of ``dataset`` for the configured epochs.

    Returns ``(model, history)`` where history holds one record per step:
    ``{"step", "epoch", "lr", "l_occ", "l_pred"}``.  Everything is a pure
    function of the two configs and the dataset, so equal seeds give
    bit-identical parameters.
    """
    labeled = [w for w in dataset if w.labeled]
    if not labeled:
        raise ValueError("training needs at least one labeled window")
    spe = math.ceil(len(labeled) / train_cfg.batch_size)
    train_cfg.steps_per_epoch = spe

    model = posenet.PoseModel(model_cfg, seed=train_cfg.seed)
    opt = AdamW(list(model.parameters()))
    rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, 0xF11)))
    dtype = model_cfg.np_dtype
    history = []
    step = 0
    for epoch in range(train_cfg.total_epochs):
        order = rng.permutation(len(labeled))
        for start in range(0, len(order), train_cfg.batch_size):
            chunk = order[start:start + train_cfg.batch_size]
            wins = []
            for i in chunk:
                w = labeled[int(i)]
                if train_cfg.flip_augment and rng.random() < 0.5:
                    w = flip_window(w, model_cfg.W)
                wins.append(w)
            hm, gt, vis = _stack_batch(wins, dtype)
            for p in model.parameters():
                p.zero_grad()
            # gradients accumulate over micro-batches; each chunk's losses
            # are scaled by its share so the sum equals the full-batch mean
            micro = train_cfg.micro_batch or len(wins)
            l_occ_acc = l_pred_acc = 0.0
            for lo in range(0, len(wins), micro):
                hi = min(lo + micro, len(wins))
                share = (hi - lo) / len(wins)
                res = posenet.forward_batch(model, hm[lo:hi], gt[lo:hi])
                l_occ_t = loss_occ(res.psi, res.pseudo_label, vis[lo:hi])
                l_pred_t = loss_pred(res.p, gt[lo:hi], vis[lo:hi])
                ops.scale(ops.add(l_occ_t, l_pred_t), share).backward()
                l_occ_acc += share * float(l_occ_t.data)
                l_pred_acc += share * float(l_pred_t.data)
            step += 1
            lr = lr_at(step, train_cfg)
            opt.step(lr, train_cfg.weight_decay)
            rec = {"step": step, "epoch": epoch, "lr": lr,
                   "l_occ": l_occ_acc, "l_pred": l_pred_acc}
            history.append(rec)
            if log is not None:
                log(rec)
    return model, history
