"""Paired-dataset synthesis: procedural skeletal motions, joint-group box
proxies at several abstraction levels, and training-time augmentations.

Convention: character faces +X, left side is +Z, up is +Y, ground at y=0.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats, quat
from .errors import EmptyDataset, InvariantError, UnknownLevel
from .geometry import EXTENT_FLOOR, fit_obb
from .types import (
    BoxMotionSequence,
    BoxPose,
    LabelVocabulary,
    SkeletonDef,
    SkeletonMotion,
)

DEFAULT_PADDING = 0.05

# fmt: off
_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)
_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)
_UPPER = (3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21)
_LOWER = (0, 1, 2, 4, 5, 7, 8, 10, 11)
_GROUPINGS = {
    1: (tuple(range(22)),),
    2: (_UPPER, _LOWER),
    4: ((3, 6, 9, 12, 13, 14, 15), _LOWER, (16, 18, 20), (17, 19, 21)),
    6: (
        (12, 15),             # head
        (0, 3, 6, 9),         # torso
        (13, 16, 18, 20),     # left upper limb
        (14, 17, 19, 21),     # right upper limb
        (1, 4, 7, 10),        # left lower limb
        (2, 5, 8, 11),        # right lower limb
    ),
}
_REST = np.array([
    [0.00, 0.90,  0.00],   # pelvis
    [0.00, 0.85,  0.10],   # left_hip
    [0.00, 0.85, -0.10],   # right_hip
    [0.00, 1.00,  0.00],   # spine1
    [0.00, 0.48,  0.11],   # left_knee
    [0.00, 0.48, -0.11],   # right_knee
    [0.00, 1.10,  0.00],   # spine2
    [0.00, 0.08,  0.12],   # left_ankle
    [0.00, 0.08, -0.12],   # right_ankle
    [0.00, 1.22,  0.00],   # spine3
    [0.12, 0.00,  0.12],   # left_foot
    [0.12, 0.00, -0.12],   # right_foot
    [0.00, 1.38,  0.00],   # neck
    [0.00, 1.34,  0.08],   # left_collar
    [0.00, 1.34, -0.08],   # right_collar
    [0.00, 1.58,  0.00],   # head
    [0.00, 1.38,  0.18],   # left_shoulder
    [0.00, 1.38, -0.18],   # right_shoulder
    [0.00, 1.38,  0.45],   # left_elbow
    [0.00, 1.38, -0.45],   # right_elbow
    [0.00, 1.38,  0.72],   # left_wrist
    [0.00, 1.38, -0.72],   # right_wrist
])
# fmt: on

HUMANOID22 = SkeletonDef(_JOINT_NAMES, _PARENTS, _GROUPINGS)
HUMANOID22_NAME = "humanoid22"


def rest_pose() -> np.ndarray:
    return _REST.copy()


@dataclass(frozen=True)
class AugmentConfig:
    p_drop_label: float = 0.1
    p_drop_box: float = 0.1
    p_jitter: float = 0.3
    jitter_angle_max: float = 0.35
    jitter_trans_max: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("p_drop_label", "p_drop_box", "p_jitter"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvariantError(f"{name} must lie in [0, 1]")
        if self.jitter_angle_max < 0 or self.jitter_trans_max < 0:
            raise InvariantError("jitter maxima must be >= 0")


@dataclass(frozen=True)
class ProceduralConfig:
    num_sequences: int = 1
    frames: int = 60
    fps: float = 20.0
    skeleton: SkeletonDef = HUMANOID22
    seed: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise InvariantError("frames must be >= 2")
        if self.num_sequences < 1:
            raise InvariantError("num_sequences must be >= 1")


def part_grouping(skeleton: SkeletonDef, level: int):
    if level not in skeleton.groupings:
        raise UnknownLevel(
            f"level {level} not supported; have {sorted(skeleton.groupings)}"
        )
    return skeleton.groupings[level]


def skeleton_to_boxes(
    motion: SkeletonMotion, grouping, padding: float = DEFAULT_PADDING
) -> BoxMotionSequence:
    """Per-frame OBB fit of each joint group, inflated by `padding`."""
    grouping = tuple(tuple(int(i) for i in part) for part in grouping)
    covered = sorted(i for part in grouping for i in part)
    if covered != list(range(motion.num_joints)):
        raise InvariantError("grouping does not partition the motion's joints")
    frames = []
    for f in range(motion.num_frames):
        row = []
        for part in grouping:
            box = fit_obb(motion.joints[f, list(part)], min_points=2)
            row.append(BoxPose(box.center, box.rotation, box.half_extents + padding))
        frames.append(row)
    return BoxMotionSequence(motion.fps, frames)


def _jittered(box: BoxPose, rng: np.random.Generator, cfg: AugmentConfig) -> BoxPose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, cfg.jitter_angle_max)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = direction * rng.uniform(0.0, cfg.jitter_trans_max)
    return BoxPose(
        box.center + shift,
        quat.normalize(quat.multiply(quat.from_axis_angle(axis, angle), box.rotation)),
        box.half_extents,
    )


def augment_sequence(pair, cfg: AugmentConfig):
    """Label drop, box drop (never all), and single-frame pose jitter.

    Dropping a box removes its slot entirely, shrinking num_boxes; the
    random draw order is fixed, so a given seed always yields one result.
    """
    seq, label = pair
    rng = np.random.default_rng(cfg.seed)

    if rng.random() < cfg.p_drop_label:
        label = None

    keep = rng.random(seq.num_boxes) >= cfg.p_drop_box
    if not keep.any():
        keep[rng.integers(seq.num_boxes)] = True
    kept = [i for i in range(seq.num_boxes) if keep[i]]
    frames = [[row[i] for i in kept] for row in seq.frames]

    if rng.random() < cfg.p_jitter:
        frame = int(rng.integers(len(frames)))
        count = int(rng.integers(1, min(2, len(kept)) + 1))
        chosen = rng.choice(len(kept), size=count, replace=False)
        for b in chosen:
            if frames[frame][b] is not None:
                frames[frame][b] = _jittered(frames[frame][b], rng, cfg)

    return BoxMotionSequence(seq.fps, frames), label


# ---------------------------------------------------------------- motions


def _yaw_about(points: np.ndarray, pivot_xz, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = points.copy()
    x = points[:, 0] - pivot_xz[0]
    z = points[:, 2] - pivot_xz[1]
    out[:, 0] = c * x + s * z + pivot_xz[0]
    out[:, 2] = -s * x + c * z + pivot_xz[1]
    return out


def gen_procedural_motion(
    label: str,
    cfg: ProceduralConfig,
    index: int,
    amplitude=None,
    vocab: LabelVocabulary = LabelVocabulary(),
) -> SkeletonMotion:
    """Deterministic label-characteristic motion keyed by (seed, label, index)."""
    label_idx = vocab.index(label)
    rng = np.random.default_rng([cfg.seed, label_idx, index])
    F = cfg.frames
    a = rng.uniform(0.7, 1.3) if amplitude is None else float(amplitude)
    freq = rng.uniform(0.8, 1.4)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    sway_dir = rng.normal(size=(22, 3))
    sway_dir /= np.linalg.norm(sway_dir, axis=1, keepdims=True)
    sway_phase = rng.uniform(0.0, 2.0 * np.pi, size=22)

    t = np.arange(F) / cfg.fps
    s = np.arange(F) / (F - 1)
    joints = np.tile(_REST, (F, 1, 1))

    def sway(scale):
        osc = np.sin(2.0 * np.pi * freq * t[:, None] + sway_phase[None, :])
        joints[:] += scale * a * osc[:, :, None] * sway_dir[None, :, :]

    if label == "idle":
        sway(0.008)
    elif label == "walk":
        swing = np.sin(2.0 * np.pi * freq * t + phase)
        joints[:, :, 0] += (0.6 * a * t)[:, None]
        for left, side in (((4, 7, 10), 1.0), ((5, 8, 11), -1.0)):
            joints[:, left, 0] += (0.15 * a * side * swing)[:, None]
            lift = 0.03 * a * np.maximum(0.0, side * swing)
            joints[:, left[1:], 1] += lift[:, None]
        for arm, side in (((16, 18, 20), -1.0), ((17, 19, 21), 1.0)):
            joints[:, arm, 0] += (0.12 * a * side * swing)[:, None]
        joints[:, :, 1] += (0.02 * a * np.abs(swing))[:, None]
    elif label == "jump":
        height = 0.25 * a * 4.0 * s * (1.0 - s)
        joints[:, :, 1] += height[:, None]
        raise_amt = 0.35 * a * np.sin(np.pi * s)
        joints[:, (18, 19), 1] += raise_amt[:, None] * 0.6
        joints[:, (20, 21), 1] += raise_amt[:, None]
    elif label == "wave":
        sway(0.004)
        ramp = np.minimum(1.0, 3.0 * s)
        osc = np.sin(2.0 * np.pi * freq * t + phase) * ramp
        joints[:, 19, 1] += 0.25 * a * ramp
        joints[:, 21, 1] += 0.45 * a * ramp
        joints[:, 19, 0] += 0.10 * a * osc
        joints[:, 21, 0] += 0.22 * a * osc
    elif label == "crouch":
        drop = 0.3 * a * np.minimum(1.0, 2.0 * s)
        upper = [i for i in range(22) if i not in (4, 5, 7, 8, 10, 11)]
        joints[:, upper, 1] -= drop[:, None]
        joints[:, (4, 5), 1] -= 0.35 * drop[:, None]
        joints[:, (4, 5), 0] += 0.12 * a * np.minimum(1.0, 2.0 * s)[:, None]
    elif label == "spin":
        angles = 2.0 * np.pi * a * s
        for f in range(F):
            joints[f] = _yaw_about(joints[f], (0.0, 0.0), angles[f])
    else:
        # vocab.index above already rejects labels outside the vocabulary
        raise AssertionError(f"no recipe for label {label!r}")

    return SkeletonMotion(fps=cfg.fps, joints=joints, label=label, skeleton=HUMANOID22_NAME)


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def build_dataset(cfg: ProceduralConfig, levels, aug: AugmentConfig):
    """All (label, index, level) triples: one motion per (label, index), a
    box proxy per level, independently augmented with derived seeds."""
    levels = sorted(set(int(v) for v in levels))
    if not levels:
        raise InvariantError("levels must be nonempty")
    vocab = LabelVocabulary()
    groupings = {level: part_grouping(cfg.skeleton, level) for level in levels}
    items = []
    for label_idx, label in enumerate(vocab.labels):
        for i in range(cfg.num_sequences):
            motion = gen_procedural_motion(label, cfg, i, vocab=vocab)
            for level in levels:
                boxes = skeleton_to_boxes(motion, groupings[level])
                item_aug = dataclasses.replace(
                    aug, seed=_derived_seed(aug.seed, label_idx, i, level)
                )
                aug_boxes, aug_label = augment_sequence((boxes, label), item_aug)
                items.append((aug_boxes, motion, aug_label))
    return items


# ---------------------------------------------------------------- manifest


def write_dataset(items, out_dir, cfg: ProceduralConfig, levels, aug: AugmentConfig) -> Path:
    """Write per-item box/motion files plus a dataset.json manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (boxes, motion, label) in enumerate(items):
        boxes_path = f"boxes_{i:05d}.json"
        motion_path = f"motion_{i:05d}.json"
        (out_dir / boxes_path).write_text(formats.serialize_boxes(boxes))
        (out_dir / motion_path).write_text(formats.serialize_motion(motion))
        records.append({"boxes": boxes_path, "motion": motion_path, "label": label})
    manifest = {
        "version": 1,
        "records": records,
        "config": {
            "procedural": {
                "num_sequences": cfg.num_sequences,
                "frames": cfg.frames,
                "fps": cfg.fps,
                "skeleton": HUMANOID22_NAME,
                "seed": cfg.seed,
            },
            "levels": sorted(set(int(v) for v in levels)),
            "augment": {
                "p_drop_label": aug.p_drop_label,
                "p_drop_box": aug.p_drop_box,
                "p_jitter": aug.p_jitter,
                "jitter_angle_max": aug.jitter_angle_max,
                "jitter_trans_max": aug.jitter_trans_max,
                "seed": aug.seed,
            },
        },
    }
    manifest_path = out_dir / "dataset.json"
    manifest_path.write_text(json.dumps(manifest, separators=(",", ":")) + "\n")
    return manifest_path


def load_dataset(manifest_path):
    """Read a dataset.json manifest (or its directory) back into (boxes, motion, label) triples."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "dataset.json"
    doc = json.loads(manifest_path.read_text())
    records = doc.get("records")
    if not records:
        raise EmptyDataset(f"no records in {manifest_path}")
    base = manifest_path.parent
    items = []
    for rec in records:
        boxes = formats.parse_boxes((base / rec["boxes"]).read_text())
        motion = formats.parse_motion((base / rec["motion"]).read_text())
        items.append((boxes, motion, rec["label"]))
    return items
