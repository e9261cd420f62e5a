"""Keypoint decoding and scoring: PCK, per-joint average precision, jitter.

Decoding takes the per-channel argmax (row-major ties break to the lowest
linear index, i.e. the first maximum numpy reports).  PCK normalizes
distances by a scale length: the synthetic skeleton's torso (neck to pelvis)
by default, or a head-bbox diagonal when scoring parsed annotations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class DecodedPose:
    positions: np.ndarray    # (N_j, 2) as (x, y)
    confidences: np.ndarray  # (N_j,) peak values


def decode(heatmap: np.ndarray) -> DecodedPose:
    """Per-channel argmax position and peak value."""
    hm = np.asarray(heatmap)
    nj, hh, ww = hm.shape
    flat = hm.reshape(nj, hh * ww)
    idx = flat.argmax(axis=-1)
    conf = flat[np.arange(nj), idx]
    pos = np.stack([idx % ww, idx // ww], axis=-1).astype(np.float64)
    return DecodedPose(positions=pos, confidences=conf)


def head_bbox_diagonal(bbox: Sequence[float]) -> float:
    x0, y0, x1, y1 = bbox
    return float(np.hypot(x1 - x0, y1 - y0))


def pck(pred: DecodedPose, gt_positions: np.ndarray, visibility: np.ndarray,
        r: float, norm: float) -> Optional[float]:
    """Fraction of visible joints within ``r * norm`` of ground truth.

    Returns None (absent, not zero) when no joint is visible.
    """
    if norm <= 0:
        raise ValueError("normalization length must be positive")
    vis = np.asarray(visibility, dtype=bool)
    if not vis.any():
        return None
    d = np.linalg.norm(pred.positions - np.asarray(gt_positions), axis=-1)
    return float((d[vis] <= r * norm).mean())


def pck_curve_point(dists: np.ndarray, thresholds: np.ndarray) -> float:
    """Helper for monotonicity checks: PCK of precomputed normalized
    distances at each threshold."""
    return np.array([(dists <= t).mean() for t in thresholds])


def ap_from_matches(confidences: np.ndarray, correct: np.ndarray,
                    n_gt: int) -> Optional[float]:
    """Average precision of a ranked detection list.

    Detections are sorted by descending confidence (stable, so equal scores
    keep input order); AP is the area under the precision-recall step curve,
    summing precision at each true positive times the recall increment.
    Undefined (None) when there is no ground truth.
    """
    if n_gt == 0:
        return None
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=bool)
    order = np.argsort(-conf, kind="stable")
    corr = corr[order]
    tp = np.cumsum(corr)
    fp = np.cumsum(~corr)
    precision = tp / np.maximum(tp + fp, 1)
    ap = precision[corr].sum() / n_gt
    return float(ap)


def average_precision(detections: Sequence[dict], r: float = 0.1) -> dict:
    """Per-joint AP over a dataset of single-person detections.

    Each record holds ``pred`` (DecodedPose), ``gt`` (N_j, 2), ``visibility``
    (N_j,) and ``norm``; a detection is correct when it lands within
    ``r * norm`` of a visible ground-truth joint.  Joints without any visible
    ground truth get AP None.
    """
    if not detections:
        return {"per_joint": [], "mean": None}
    nj = detections[0]["gt"].shape[0]
    per_joint = []
    for j in range(nj):
        conf, corr, n_gt = [], [], 0
        for det in detections:
            if not det["visibility"][j]:
                continue
            n_gt += 1
            d = np.linalg.norm(det["pred"].positions[j] - det["gt"][j])
            conf.append(det["pred"].confidences[j])
            corr.append(d <= r * det["norm"])
        per_joint.append(ap_from_matches(np.array(conf), np.array(corr), n_gt))
    defined = [a for a in per_joint if a is not None]
    mean = float(np.mean(defined)) if defined else None
    return {"per_joint": per_joint, "mean": mean}


def jitter(poses: Sequence[DecodedPose],
           visibility: Optional[Sequence[np.ndarray]] = None) -> float:
    """Mean second-difference magnitude of joint trajectories.

    Zero for static and constant-velocity motion; a joint contributes at
    frame t only when visible at t-1, t, and t+1.
    """
    if len(poses) < 3:
        raise ValueError("jitter needs at least 3 frames")
    pos = np.stack([p.positions for p in poses])  # (T, N_j, 2)
    if visibility is None:
        vis = np.ones(pos.shape[:2], dtype=bool)
    else:
        vis = np.stack([np.asarray(v, dtype=bool) for v in visibility])
    second = pos[2:] - 2.0 * pos[1:-1] + pos[:-2]
    mag = np.linalg.norm(second, axis=-1)
    ok = vis[2:] & vis[1:-1] & vis[:-2]
    if not ok.any():
        return 0.0
    return float(mag[ok].mean())
