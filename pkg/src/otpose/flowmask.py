"""Keypoint flows, occlusion attention masks and the pseudo label.

A flow aggregates the five window heatmaps into a per-joint track: past and
future frames are penalized by their distance from the center frame (1/2 at
distance 1, 1/3 at distance 2), except for the ``total`` type which sums all
five frames unpenalized.  Masks multiply each flow elementwise with the
joint-summed total flow, amplifying pixels where several joint tracks overlap.
The pseudo label blends the total mask with ground truth to supervise the
occlusion encoder on labeled frames.

All functions here are pure array transforms (no gradients flow through
them); they accept a single window ``(5, N_j, H, W)`` or any batched leading
shape ``(..., 5, N_j, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLOW_KEYS = ("prev", "sub", "close", "far", "total")

_NORM_FLOOR = 1e-6


@dataclass
class KeypointFlowSet:
    """The five normalized flows, each ``(..., N_j, H, W)`` in [0, 1]."""

    flows: dict

    def __post_init__(self):
        missing = set(FLOW_KEYS) - set(self.flows)
        if missing:
            raise ValueError(f"missing flow types: {sorted(missing)}")

    def __getitem__(self, key: str) -> np.ndarray:
        return self.flows[key]


@dataclass
class OcclusionMaskSet:
    """Masks per flow type plus the pseudo label for the occlusion encoder."""

    masks: dict
    pseudo_label: np.ndarray = None


def penalize(h: np.ndarray, d: int) -> np.ndarray:
    """Scale a heatmap from temporal distance ``d`` by 1/(d+1)."""
    if d not in (1, 2):
        raise ValueError(f"frame distance must be 1 or 2, got {d}")
    return h / (d + 1.0)


def channel_norm(x: np.ndarray, floor: float = _NORM_FLOOR) -> np.ndarray:
    """Divide each (H, W) channel by max(channel max, floor)."""
    m = x.max(axis=(-2, -1), keepdims=True)
    return x / np.maximum(m, floor)


def flow_components(heatmaps: np.ndarray) -> dict:
    """Pre-normalization flow sums; exposed so the arithmetic is testable.

    ``heatmaps`` holds frames t-2..t+2 along axis -4.
    """
    if heatmaps.shape[-4] != 5:
        raise ValueError(f"expected 5 frames, got {heatmaps.shape[-4]}")
    hm = np.moveaxis(heatmaps, -4, 0)
    h_m2, h_m1, h_0, h_p1, h_p2 = hm
    p_m1, p_m2 = penalize(h_m1, 1), penalize(h_m2, 2)
    p_p1, p_p2 = penalize(h_p1, 1), penalize(h_p2, 2)
    return {
        "prev": h_0 + p_m1 + p_m2,
        "sub": h_0 + p_p1 + p_p2,
        "close": h_0 + p_m1 + p_p1,
        "far": h_0 + p_m2 + p_p2,
        "total": h_m2 + h_m1 + h_0 + h_p1 + h_p2,
    }


def build_flows(heatmaps: np.ndarray) -> KeypointFlowSet:
    """Aggregate a 5-frame window into the five flow types, each channel
    max-normalized into [0, 1]."""
    sums = flow_components(np.asarray(heatmaps, dtype=np.float64)
                           if heatmaps.dtype not in (np.float32, np.float64)
                           else heatmaps)
    return KeypointFlowSet({k: channel_norm(v) for k, v in sums.items()})


def build_masks(flows: KeypointFlowSet) -> dict:
    """Occlusion attention masks: each flow times the joint-summed total flow,
    rescaled per channel to peak 1 (zero channels stay zero)."""
    s = flows["total"].sum(axis=-3, keepdims=True)
    return {k: channel_norm(flows[k] * s) for k in FLOW_KEYS}


def build_pseudo_label(m_total: np.ndarray, gt: np.ndarray,
                       mode: str = "max") -> np.ndarray:
    """Blend the total mask with ground truth into the occlusion target.

    ``mode="max"`` (default) renormalizes each channel to peak 1, keeping the
    background at 0.  ``mode="logistic"`` applies the logistic function
    instead, which maps empty background to 0.5; kept as a configuration
    alternative.
    """
    if m_total.shape != gt.shape:
        raise ValueError(f"shape mismatch: mask {m_total.shape} vs gt {gt.shape}")
    raw = m_total + gt
    if mode == "max":
        return channel_norm(raw)
    if mode == "logistic":
        return 1.0 / (1.0 + np.exp(-raw))
    raise ValueError(f"unknown pseudo-label normalization: {mode}")
