"""Synthetic sparsely-labeled heatmap videos with occlusion and motion blur.

A scene holds one or more stick-figure persons whose 15 joints follow bounded
random walks around an articulated template.  Per frame, ground truth is a
stack of unit-peak Gaussians; a detector stub degrades them the way a real
backbone would fail: occluded joints are attenuated and displaced, fast joints
are smeared along their velocity, and everything gets a little clipped noise.

Also home to the annotation-format parser (a PoseTrack-style JSON schema,
documented in the README) used to round-trip generated annotations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

JOINT_NAMES = [
    "head_top", "neck",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "pelvis", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
]

NECK, PELVIS = 1, 8

# (x, y) offsets from the person anchor, in pixels for a 64-row canvas
_TEMPLATE_64 = np.array([
    (0.0, -22.0), (0.0, -14.0),
    (-5.0, -12.0), (5.0, -12.0), (-7.0, -5.0), (7.0, -5.0),
    (-8.0, 2.0), (8.0, 2.0),
    (0.0, 4.0), (-3.0, 4.0), (3.0, 4.0),
    (-3.5, 13.0), (3.5, 13.0), (-4.0, 21.0), (4.0, 21.0),
])

# left/right channel swap used by horizontal flip augmentation
FLIP_PERM = np.array([0, 1, 3, 2, 5, 4, 7, 6, 8, 10, 9, 12, 11, 14, 13])

SKELETON_EDGES = [
    (0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7),
    (1, 8), (8, 9), (8, 10), (9, 11), (10, 12), (11, 13), (12, 14),
]

OCCLUSION_ATTENUATION = 0.3  # peak scale for occluded joints
_BLUR_SPEED_THRESHOLD = 1.0  # px/frame above which smearing kicks in
_MEAN_OCCLUSION_SPAN = 2.0


@dataclass
class SceneConfig:
    """Controls for synthetic scene generation and detector degradation."""

    n_persons: int = 1
    n_joints: int = 15
    H: int = 64
    W: int = 48
    occlusion_rate: float = 0.3
    blur_len: float = 4.0
    gaussian_sigma: float = 1.75
    seed: int = 7
    speed: float = 1.1
    joint_jitter: float = 0.3
    noise_sigma: float = 0.02
    occl_shift: tuple[float, float] = (2.0, 3.0)

    def __post_init__(self):
        if self.n_joints < 1 or self.n_joints > len(JOINT_NAMES):
            raise ValueError(f"n_joints must be in [1, {len(JOINT_NAMES)}]")
        if self.H < 8 or self.W < 8:
            raise ValueError("canvas must be at least 8x8")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ValueError("occlusion_rate must be in [0, 1]")


@dataclass
class JointState:
    position: tuple[float, float]  # (x, y), inside the canvas
    velocity: tuple[float, float]  # px/frame
    visible: bool


@dataclass
class FrameWindow:
    """Five consecutive detector heatmap crops centered on frame ``t``.

    Ground-truth fields are populated only when the window is labeled; the
    evaluation path reconstructs truth from the sequence instead.
    """

    heatmaps: np.ndarray                     # (5, N_j, H, W)
    labeled: bool
    gt_heatmaps: Optional[np.ndarray] = None  # (N_j, H, W)
    gt_positions: Optional[np.ndarray] = None  # (N_j, 2) as (x, y)
    visibility: Optional[np.ndarray] = None    # (N_j,) bool
    video_id: str = ""
    person_id: int = 0
    t: int = 0


@dataclass
class SimulatedSequence:
    cfg: SceneConfig
    n_frames: int
    states: list  # [frame][person] -> list[JointState]
    detector: np.ndarray = field(default=None, repr=False)  # (F, P, N_j, H, W)

    def positions(self, t: int, person: int) -> np.ndarray:
        return np.array([s.position for s in self.states[t][person]])

    def visible(self, t: int, person: int) -> np.ndarray:
        return np.array([s.visible for s in self.states[t][person]], dtype=bool)


def template_offsets(cfg: SceneConfig) -> np.ndarray:
    scale = cfg.H / 64.0
    return _TEMPLATE_64[:cfg.n_joints] * scale


def torso_length(positions: np.ndarray, H: int = 64) -> float:
    """Normalization length: neck-to-pelvis distance of the synthetic skeleton."""
    if len(positions) > PELVIS:
        return float(np.linalg.norm(positions[NECK] - positions[PELVIS]))
    return H / 3.5


def render_gt_heatmap(positions: np.ndarray, visibility: np.ndarray,
                      sigma: float, H: int, W: int) -> np.ndarray:
    """Unit-peak Gaussian per visible joint; invisible channels stay zero."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pos = np.asarray(positions, dtype=np.float64)
    vis = np.asarray(visibility, dtype=bool)
    ys = np.arange(H, dtype=np.float64)[None, :, None]
    xs = np.arange(W, dtype=np.float64)[None, None, :]
    dx = xs - pos[:, 0, None, None]
    dy = ys - pos[:, 1, None, None]
    hm = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    hm[~vis] = 0.0
    return hm


def _occlusion_start_prob(rate: float) -> float:
    if rate >= 0.999:
        return 1.0
    if rate <= 0.0:
        return 0.0
    return min(1.0, rate / (_MEAN_OCCLUSION_SPAN * (1.0 - rate)))


def simulate_sequence(cfg: SceneConfig, n_frames: int) -> list:
    """Generate per-frame joint states: [frame][person] -> list[JointState].

    Deterministic in ``cfg.seed``.  Persons follow bounded random walks whose
    trajectories may cross; occlusion flips visibility over contiguous spans
    whose stationary frequency tracks ``occlusion_rate``.
    """
    if n_frames < 5:
        raise ValueError("need at least 5 frames")
    rng = np.random.default_rng(cfg.seed)
    offsets = template_offsets(cfg)
    nj = cfg.n_joints
    margin_x = np.abs(offsets[:, 0]).max() + 2.0
    margin_top = -offsets[:, 1].min() + 2.0
    margin_bot = offsets[:, 1].max() + 2.0
    lo = np.array([margin_x, margin_top])
    hi = np.array([cfg.W - 1 - margin_x, cfg.H - 1 - margin_bot])

    p_start = _occlusion_start_prob(cfg.occlusion_rate)
    frames = [[None] * cfg.n_persons for _ in range(n_frames)]
    for person in range(cfg.n_persons):
        anchor = rng.uniform(lo, hi)
        vel = rng.uniform(-cfg.speed, cfg.speed, size=2)
        jitter = np.zeros((nj, 2))
        occluded = np.zeros(nj, dtype=bool)
        span_left = np.zeros(nj, dtype=int)
        prev_pos = None
        for t in range(n_frames):
            vel = 0.9 * vel + rng.normal(0.0, 0.35 * cfg.speed, size=2)
            vel = np.clip(vel, -cfg.speed, cfg.speed)
            anchor = anchor + vel
            for ax in range(2):
                if anchor[ax] < lo[ax]:
                    anchor[ax] = lo[ax]
                    vel[ax] = abs(vel[ax])
                elif anchor[ax] > hi[ax]:
                    anchor[ax] = hi[ax]
                    vel[ax] = -abs(vel[ax])
            jitter = 0.85 * jitter + rng.normal(0.0, cfg.joint_jitter, size=(nj, 2))
            pos = anchor[None, :] + offsets + jitter
            pos[:, 0] = np.clip(pos[:, 0], 1.0, cfg.W - 2.0)
            pos[:, 1] = np.clip(pos[:, 1], 1.0, cfg.H - 2.0)

            starting = (~occluded) & (rng.random(nj) < p_start)
            span_left = np.where(starting, rng.integers(1, 4, size=nj), span_left)
            occluded = occluded | starting
            if cfg.occlusion_rate >= 0.999:
                occluded[:] = True
                span_left = np.maximum(span_left, 1)
            frame_occluded = occluded.copy()
            span_left = np.where(occluded, span_left - 1, 0)
            occluded = occluded & (span_left > 0)

            joint_vel = (pos - prev_pos) if prev_pos is not None else np.zeros((nj, 2))
            frames[t][person] = [
                JointState(position=(float(pos[j, 0]), float(pos[j, 1])),
                           velocity=(float(joint_vel[j, 0]), float(joint_vel[j, 1])),
                           visible=not bool(frame_occluded[j]))
                for j in range(nj)
            ]
            if prev_pos is not None:
                # first-frame velocities copy the first step
                if t == 1:
                    for j in range(nj):
                        frames[0][person][j].velocity = frames[1][person][j].velocity
            prev_pos = pos
    return frames


def detector_stub(gt: np.ndarray, state: list, cfg: SceneConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Degrade a ground-truth heatmap the way a noisy backbone would.

    Occluded joints get their peak attenuated to 0.3x and displaced by a few
    pixels; joints moving faster than 1 px/frame are smeared along their
    velocity over ``cfg.blur_len`` pixels; clipped Gaussian noise is added and
    the result is clamped to [0, 1].
    """
    nj, hh, ww = gt.shape
    out = np.empty_like(gt)
    sigma = cfg.gaussian_sigma
    for j in range(nj):
        st = state[j]
        pos = np.array(st.position)
        speed = float(np.hypot(*st.velocity))
        if not st.visible:
            ang = rng.uniform(0.0, 2.0 * np.pi)
            mag = rng.uniform(*cfg.occl_shift)
            shifted = pos + mag * np.array([np.cos(ang), np.sin(ang)])
            ch = render_gt_heatmap(shifted[None], np.array([True]), sigma, hh, ww)[0]
            out[j] = OCCLUSION_ATTENUATION * ch
        elif speed > _BLUR_SPEED_THRESHOLD and cfg.blur_len > 0:
            unit = np.array(st.velocity) / speed
            taps = np.linspace(-0.5, 0.5, 7) * cfg.blur_len
            centers = pos[None, :] + taps[:, None] * unit[None, :]
            chans = render_gt_heatmap(centers, np.ones(len(taps), dtype=bool),
                                      sigma, hh, ww)
            out[j] = chans.mean(axis=0)
        else:
            out[j] = gt[j]
    if cfg.noise_sigma > 0:
        noise = rng.normal(0.0, cfg.noise_sigma, size=out.shape)
        np.clip(noise, -3.0 * cfg.noise_sigma, 3.0 * cfg.noise_sigma, out=noise)
        out = out + noise
    return np.clip(out, 0.0, 1.0)


def build_sequence(cfg: SceneConfig, n_frames: int) -> SimulatedSequence:
    """Simulate states and run the detector stub over every frame/person."""
    states = simulate_sequence(cfg, n_frames)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xD5)))
    det = np.empty((n_frames, cfg.n_persons, cfg.n_joints, cfg.H, cfg.W),
                   dtype=np.float32)
    for t in range(n_frames):
        for p in range(cfg.n_persons):
            pos = np.array([s.position for s in states[t][p]])
            vis = np.array([s.visible for s in states[t][p]], dtype=bool)
            gt = render_gt_heatmap(pos, vis, cfg.gaussian_sigma, cfg.H, cfg.W)
            det[t, p] = detector_stub(gt, states[t][p], cfg, rng).astype(np.float32)
    return SimulatedSequence(cfg=cfg, n_frames=n_frames, states=states, detector=det)


def make_windows(sequence: SimulatedSequence, cfg: SceneConfig,
                 label_stride: int = 4, video_id: str = "") -> list[FrameWindow]:
    """One window per frame t in [2, n_frames-3] per person.

    ``labeled`` is true iff ``t % label_stride == 0``; only labeled windows
    carry ground truth, mirroring sparse annotation.
    """
    if label_stride < 1:
        raise ValueError("label_stride must be >= 1")
    if sequence.n_frames < 5:
        raise ValueError("sequence shorter than 5 frames")
    windows = []
    for t in range(2, sequence.n_frames - 2):
        for p in range(cfg.n_persons):
            labeled = (t % label_stride) == 0
            win = FrameWindow(
                heatmaps=sequence.detector[t - 2:t + 3, p],
                labeled=labeled, video_id=video_id, person_id=p, t=t)
            if labeled:
                pos = sequence.positions(t, p)
                vis = sequence.visible(t, p)
                win.gt_positions = pos
                win.visibility = vis
                win.gt_heatmaps = render_gt_heatmap(
                    pos, vis, cfg.gaussian_sigma, cfg.H, cfg.W)
            windows.append(win)
    return windows


def flip_perm(n_joints: int) -> np.ndarray:
    """Left/right swap for the first ``n_joints`` template joints; joints
    whose mirror partner is truncated away map to themselves."""
    perm = FLIP_PERM[:n_joints]
    return np.where(perm < n_joints, perm, np.arange(n_joints))


def flip_window(window: FrameWindow, W: int) -> FrameWindow:
    """Horizontal flip: mirror the x axis and swap left/right joint channels."""
    perm = flip_perm(window.heatmaps.shape[1])
    flipped = FrameWindow(
        heatmaps=window.heatmaps[:, perm, :, ::-1].copy(),
        labeled=window.labeled, video_id=window.video_id,
        person_id=window.person_id, t=window.t)
    if window.labeled:
        flipped.gt_heatmaps = window.gt_heatmaps[perm, :, ::-1].copy()
        pos = window.gt_positions[perm].copy()
        pos[:, 0] = (W - 1) - pos[:, 0]
        flipped.gt_positions = pos
        flipped.visibility = window.visibility[perm].copy()
    return flipped


# ---------------------------------------------------------------------------
# PoseTrack-style annotation JSON
# ---------------------------------------------------------------------------

class PoseTrackParseError(ValueError):
    """Malformed JSON; carries the byte offset of the failure."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class PoseTrackSchemaError(ValueError):
    """Structurally valid JSON that violates the annotation schema."""


@dataclass
class PoseTrackAnnotation:
    video_id: str
    frame_index: int
    person_id: int
    keypoints: list  # [(x, y, v)] with v in {0, 1}
    head_bbox: tuple  # (x0, y0, x1, y1)


_REQUIRED = ("video_id", "frame_index", "person_id", "keypoints", "head_bbox")


def parse_posetrack_json(path) -> list[PoseTrackAnnotation]:
    """Parse annotations; unknown fields are ignored, visibility is coerced
    to {0, 1}, and the keypoint count must be constant within a video."""
    with open(path, "rb") as f:
        raw = f.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise PoseTrackParseError(e.msg, e.pos) from e
    if not isinstance(doc, dict) or "annotations" not in doc:
        raise PoseTrackSchemaError("missing required field: annotations")
    records = doc["annotations"]
    if not isinstance(records, list):
        raise PoseTrackSchemaError("field annotations must be an array")

    out: list[PoseTrackAnnotation] = []
    counts: dict[str, int] = {}
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise PoseTrackSchemaError(f"annotation #{i} is not an object")
        for name in _REQUIRED:
            if name not in rec:
                raise PoseTrackSchemaError(
                    f"annotation #{i}: missing required field: {name}")
        kps = rec["keypoints"]
        if not isinstance(kps, list) or len(kps) % 3 != 0 or not kps:
            raise PoseTrackSchemaError(
                f"annotation #{i}: keypoints must be a flat [x, y, v] * N array")
        vid = str(rec["video_id"])
        nj = len(kps) // 3
        if counts.setdefault(vid, nj) != nj:
            raise PoseTrackSchemaError(
                f"annotation #{i}: keypoint count {nj} differs from "
                f"{counts[vid]} earlier in video {vid}")
        bbox = rec["head_bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise PoseTrackSchemaError(
                f"annotation #{i}: head_bbox must have 4 numbers")
        triples = [(float(kps[3 * j]), float(kps[3 * j + 1]),
                    1 if kps[3 * j + 2] else 0) for j in range(nj)]
        out.append(PoseTrackAnnotation(
            video_id=vid, frame_index=int(rec["frame_index"]),
            person_id=int(rec["person_id"]), keypoints=triples,
            head_bbox=tuple(float(v) for v in bbox)))
    return out


def write_posetrack_json(path, annotations: list[PoseTrackAnnotation]) -> None:
    doc = {"annotations": [
        {
            "video_id": a.video_id,
            "frame_index": a.frame_index,
            "person_id": a.person_id,
            "keypoints": [v for kp in a.keypoints for v in kp],
            "head_bbox": list(a.head_bbox),
        }
        for a in annotations
    ]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def annotations_from_sequence(seq: SimulatedSequence,
                              video_id: str) -> list[PoseTrackAnnotation]:
    """Full-truth annotations for every frame/person of a synthetic sequence."""
    out = []
    for t in range(seq.n_frames):
        for p in range(seq.cfg.n_persons):
            pos = seq.positions(t, p)
            vis = seq.visible(t, p)
            kps = [(float(pos[j, 0]), float(pos[j, 1]), int(vis[j]))
                   for j in range(seq.cfg.n_joints)]
            if seq.cfg.n_joints > NECK:
                hx, hy = pos[0]
                nx, ny = pos[NECK]
                bbox = (min(hx, nx) - 2.0, min(hy, ny) - 2.0,
                        max(hx, nx) + 2.0, max(hy, ny) + 2.0)
            else:
                hx, hy = pos[0]
                bbox = (hx - 2.0, hy - 2.0, hx + 2.0, hy + 2.0)
            out.append(PoseTrackAnnotation(
                video_id=video_id, frame_index=t, person_id=p,
                keypoints=kps, head_bbox=bbox))
    return out
