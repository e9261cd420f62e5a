"""Evaluation: decode model and detector-baseline poses over a dataset split
and score PCK / AP / jitter, split by occluded versus visible target joints.

Every window is scored (labels are irrelevant at evaluation time because the
synthetic truth exists for all frames).  The detector baseline decodes the
center frame of the window directly, which is exactly what the refinement is
supposed to beat on occluded joints.
"""

from __future__ import annotations

import numpy as np

from .. import metrics as mx
from .. import posenet
from ..synthvideo import JOINT_NAMES, torso_length
from ..tensorlab import no_grad
from .dataset import DatasetBundle, sequence_windows

PCK_RADIUS = 0.1


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_split(model: posenet.PoseModel, bundle: DatasetBundle,
                   split: str = "test", batch_size: int = 4,
                   r: float = PCK_RADIUS) -> dict:
    nj = bundle.scene.n_joints
    names = JOINT_NAMES[:nj]
    records = []      # one per window: dists, vis, norms, confidences
    jit_model, jit_base = [], []

    for seq in bundle.split(split):
        wins = sequence_windows(seq, bundle.scene, bundle.data.label_stride)
        poses_m, poses_b, vis_seq = [], [], []
        for start in range(0, len(wins), batch_size):
            chunk = wins[start:start + batch_size]
            hm = np.stack([w.heatmaps for w in chunk])
            with no_grad():
                res = posenet.forward_batch(model, hm)
            for k, w in enumerate(chunk):
                pose_m = mx.decode(res.p.data[k])
                pose_b = mx.decode(w.heatmaps[2])
                truth = seq.positions[w.t, w.person_id]
                vis = seq.visibility[w.t, w.person_id]
                norm = torso_length(truth, bundle.scene.H)
                records.append({"pred": pose_m, "base": pose_b, "gt": truth,
                                "visibility": vis, "norm": norm})
                poses_m.append(pose_m)
                poses_b.append(pose_b)
                vis_seq.append(vis)
        if len(poses_m) >= 3:
            jit_model.append(mx.jitter(poses_m, vis_seq))
            jit_base.append(mx.jitter(poses_b, vis_seq))

    def pck_table(kind: str, mask_fn) -> dict:
        per_joint = []
        for j in range(nj):
            within, count = 0, 0
            for rec in records:
                if not mask_fn(rec["visibility"][j]):
                    continue
                d = np.linalg.norm(rec[kind].positions[j] - rec["gt"][j])
                within += d <= r * rec["norm"]
                count += 1
            per_joint.append(within / count if count else None)
        return {"per_joint": per_joint, "mean": _mean_or_none(per_joint)}

    def ap_table(kind: str) -> dict:
        dets = [{"pred": rec[kind], "gt": rec["gt"],
                 "visibility": rec["visibility"], "norm": rec["norm"]}
                for rec in records]
        return mx.average_precision(dets, r=r)

    def side(kind: str) -> dict:
        return {
            "pck_all": pck_table(kind, lambda v: True),
            "pck_visible": pck_table(kind, lambda v: v),
            "pck_occluded": pck_table(kind, lambda v: not v),
            "ap_visible": ap_table(kind),
            "jitter": _mean_or_none(jit_model if kind == "pred" else jit_base),
        }

    report = {
        "split": split,
        "radius": r,
        "columns": names + ["Mean"],
        "n_windows": len(records),
        "n_occluded_joints": int(sum((~rec["visibility"]).sum()
                                     for rec in records)),
        "model": side("pred"),
        "baseline": side("base"),
    }
    return report


def format_report(report: dict) -> str:
    cols = report["columns"]
    lines = [f"split={report['split']} windows={report['n_windows']} "
             f"occluded_joints={report['n_occluded_joints']} "
             f"r={report['radius']}"]
    width = max(len(c) for c in cols) + 1
    for side in ("model", "baseline"):
        for metric in ("pck_all", "pck_visible", "pck_occluded", "ap_visible"):
            tab = report[side][metric]
            vals = tab["per_joint"] + [tab["mean"]]
            cells = " ".join(
                f"{'-' if v is None else f'{100 * v:5.1f}':>{width}}"
                for v in vals)
            lines.append(f"{side:<9} {metric:<13} {cells}")
        lines.append(f"{side:<9} {'jitter':<13} {report[side]['jitter']:.3f}")
    return "\n".join(lines)
