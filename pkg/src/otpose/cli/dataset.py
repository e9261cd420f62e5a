"""Dataset generation and loading for the command-line pipeline.

A generated dataset directory holds one detector-heatmap tensor file per
sequence, a PoseTrack-style ``annotations.json`` with the full synthetic
truth for every frame, and a ``manifest.json`` tying them together.  Window
construction for training and evaluation reads these files back rather than
re-simulating, so a dataset on disk is the single source of truth.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import synthvideo as sv
from ..synthvideo import FrameWindow, SceneConfig
from . import tensorfile
from .config import DataSection, RunConfig

_SPLIT_SALT = {"train": 0x7A, "test": 0x7E}


def max_threads() -> int:
    """Worker cap for per-sequence parallelism, from ``OTPOSE_THREADS``."""
    env = os.environ.get("OTPOSE_THREADS", "")
    try:
        cap = int(env) if env else 1
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def sequence_seed(base_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence((base_seed, _SPLIT_SALT[split], index))
    return int(ss.generate_state(1)[0])


def generate_dataset(cfg: RunConfig, out_dir) -> dict:
    """Write sequences, annotations, and the manifest; returns the manifest.

    Deterministic in the scene seed: per-sequence seeds derive from
    (seed, split, index), and files are written in a fixed order.
    """
    os.makedirs(out_dir, exist_ok=True)
    scene, data = cfg.scene, cfg.data
    specs = [("train", i) for i in range(data.train_sequences)] + \
            [("test", i) for i in range(data.test_sequences)]

    def build(spec):
        split, i = spec
        seq_cfg = dataclasses.replace(
            scene, seed=sequence_seed(scene.seed, split, i))
        return sv.build_sequence(seq_cfg, data.n_frames)

    workers = max_threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sequences = list(pool.map(build, specs))
    else:
        sequences = [build(s) for s in specs]

    entries = []
    annotations = []
    for (split, i), seq in zip(specs, sequences):
        vid = f"{split}_{i:02d}"
        fname = f"{vid}.ott"
        tensorfile.save_tensor(os.path.join(out_dir, fname), seq.detector)
        annotations.extend(sv.annotations_from_sequence(seq, vid))
        entries.append({"video_id": vid, "split": split,
                        "n_frames": data.n_frames,
                        "n_persons": scene.n_persons,
                        "seed": seq.cfg.seed, "heatmaps": fname})
    sv.write_posetrack_json(os.path.join(out_dir, "annotations.json"),
                            annotations)
    manifest = {"format": 1, "scene": dataclasses.asdict(scene),
                "data": dataclasses.asdict(data), "sequences": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
    return manifest


@dataclass
class SequenceData:
    video_id: str
    split: str
    detector: np.ndarray        # (F, P, N_j, H, W)
    positions: np.ndarray       # (F, P, N_j, 2)
    visibility: np.ndarray      # (F, P, N_j) bool


@dataclass
class DatasetBundle:
    scene: SceneConfig
    data: DataSection
    sequences: list

    def split(self, name: str) -> list:
        return [s for s in self.sequences if s.split == name]


def load_dataset(path) -> DatasetBundle:
    with open(os.path.join(path, "manifest.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    scene_doc = dict(manifest["scene"])
    scene_doc["occl_shift"] = tuple(scene_doc["occl_shift"])
    scene = SceneConfig(**scene_doc)
    data = DataSection(**manifest["data"])
    anns = sv.parse_posetrack_json(os.path.join(path, "annotations.json"))
    by_vid: dict[str, list] = {}
    for a in anns:
        by_vid.setdefault(a.video_id, []).append(a)

    sequences = []
    for entry in manifest["sequences"]:
        vid = entry["video_id"]
        det = tensorfile.load_tensor(os.path.join(path, entry["heatmaps"]))
        f, p, nj = entry["n_frames"], entry["n_persons"], scene.n_joints
        pos = np.zeros((f, p, nj, 2))
        vis = np.zeros((f, p, nj), dtype=bool)
        for a in by_vid.get(vid, ()):
            kp = np.array(a.keypoints)
            pos[a.frame_index, a.person_id] = kp[:, :2]
            vis[a.frame_index, a.person_id] = kp[:, 2] > 0
        sequences.append(SequenceData(video_id=vid, split=entry["split"],
                                      detector=det, positions=pos,
                                      visibility=vis))
    return DatasetBundle(scene=scene, data=data, sequences=sequences)


def sequence_windows(seq: SequenceData, scene: SceneConfig, label_stride: int,
                     labeled_only: bool = False) -> list[FrameWindow]:
    """Rebuild windows from stored heatmaps and annotations."""
    n_frames = seq.detector.shape[0]
    out = []
    for t in range(2, n_frames - 2):
        labeled = (t % label_stride) == 0
        if labeled_only and not labeled:
            continue
        for p in range(seq.detector.shape[1]):
            win = FrameWindow(heatmaps=seq.detector[t - 2:t + 3, p],
                              labeled=labeled, video_id=seq.video_id,
                              person_id=p, t=t)
            if labeled:
                win.gt_positions = seq.positions[t, p]
                win.visibility = seq.visibility[t, p]
                win.gt_heatmaps = sv.render_gt_heatmap(
                    win.gt_positions, win.visibility, scene.gaussian_sigma,
                    scene.H, scene.W)
            out.append(win)
    return out


def training_windows(bundle: DatasetBundle) -> list[FrameWindow]:
    wins = []
    for seq in bundle.split("train"):
        wins.extend(sequence_windows(seq, bundle.scene,
                                     bundle.data.label_stride,
                                     labeled_only=True))
    if not wins:
        raise ValueError("dataset has no labeled training windows")
    return wins
