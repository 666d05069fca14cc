"""Shared domain types.

All types are immutable after construction (arrays are marked read-only)
and validate their invariants eagerly, raising InvariantError on bad input.
Scene convention: Y-up, ground plane at y=0, units roughly meters.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import quat
from .errors import InvariantError

QUAT_NORM_TOL = 1e-9
GROUND_TOL = -0.05
MAX_BOXES = 6


def _frozen(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise InvariantError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: rotation as unit quaternion (w,x,y,z) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation)
        if r.shape != (4,) or t.shape != (3,):
            raise InvariantError("rigid transform needs a 4-quaternion and a 3-translation")
        _check_finite(r, "rotation")
        _check_finite(t, "translation")
        if abs(np.linalg.norm(r) - 1.0) > QUAT_NORM_TOL:
            raise InvariantError("quaternion is not unit length")
        if np.linalg.det(quat.to_matrix(r)) <= 0:
            raise InvariantError("rotation is not proper (det must be +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return quat.to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return RigidTransform(
            quat.normalize(quat.multiply(self.rotation, other.rotation)),
            self.apply(other.translation),
        )

    def inverse(self) -> "RigidTransform":
        r_inv = quat.conjugate(self.rotation)
        return RigidTransform(r_inv, -quat.rotate(r_inv, self.translation))


@dataclass(frozen=True)
class BoxPose:
    """Oriented bounding box: center, rotation (w,x,y,z), positive half extents.

    Half extents are kept sorted descending; this is the canonical axis order
    that makes fitted boxes comparable.
    """

    center: np.ndarray
    rotation: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = _frozen(self.center)
        r = _frozen(self.rotation)
        e = _frozen(self.half_extents)
        if c.shape != (3,) or r.shape != (4,) or e.shape != (3,):
            raise InvariantError("box pose needs 3-center, 4-quaternion, 3-extents")
        for a, name in ((c, "center"), (r, "rotation"), (e, "half_extents")):
            _check_finite(a, name)
        if abs(np.linalg.norm(r) - 1.0) > QUAT_NORM_TOL:
            raise InvariantError("quaternion is not unit length")
        if not np.all(e > 0):
            raise InvariantError("half extents must be positive")
        if not (e[0] >= e[1] >= e[2]):
            raise InvariantError("half extents must be sorted descending")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "half_extents", e)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat.to_matrix(self.rotation)

    def corners(self) -> np.ndarray:
        """The 8 corner vertices, fixed sign order (-,-,-),(-,-,+),...,(+,+,+)."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]
        )
        # reorder so the all-minus corner comes first, matching the docstring
        signs = signs[np.lexsort((signs[:, 2], signs[:, 1], signs[:, 0]))]
        return self.center + (signs * self.half_extents) @ self.rotation_matrix.T

    def transformed(self, rt: RigidTransform) -> "BoxPose":
        return BoxPose(
            rt.apply(self.center),
            quat.normalize(quat.multiply(rt.rotation, self.rotation)),
            self.half_extents,
        )

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Boolean mask: point inside the box inflated by margin (per component)."""
        local = (np.atleast_2d(points) - self.center) @ self.rotation_matrix
        return np.all(np.abs(local) <= self.half_extents + margin, axis=1)


class BoxMotionSequence:
    """F frames of B optional oriented boxes; frame 0 defines the box set."""

    def __init__(self, fps: float, frames: Sequence[Sequence[Optional[BoxPose]]]):
        if fps <= 0:
            raise InvariantError("fps must be positive")
        if len(frames) == 0:
            raise InvariantError("sequence needs at least one frame")
        num_boxes = len(frames[0])
        if not (1 <= num_boxes <= MAX_BOXES):
            raise InvariantError(f"num_boxes must be in [1, {MAX_BOXES}], got {num_boxes}")
        rows = []
        for f, row in enumerate(frames):
            if len(row) != num_boxes:
                raise InvariantError(f"frame {f} has {len(row)} slots, expected {num_boxes}")
            for b, box in enumerate(row):
                if box is not None and not isinstance(box, BoxPose):
                    raise InvariantError(f"slot ({f},{b}) is not a BoxPose")
                if f == 0 and box is None:
                    raise InvariantError("frame 0 must have every box present")
            rows.append(tuple(row))
        self.fps = float(fps)
        self.frames = tuple(rows)
        self.num_boxes = num_boxes

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def present(self) -> np.ndarray:
        """(F, B) boolean mask of present boxes."""
        return np.array([[box is not None for box in row] for row in self.frames])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoxMotionSequence):
            return NotImplemented
        if self.fps != other.fps or self.num_boxes != other.num_boxes:
            return False
        if self.num_frames != other.num_frames:
            return False
        for ra, rb in zip(self.frames, other.frames):
            for a, b in zip(ra, rb):
                if (a is None) != (b is None):
                    return False
                if a is not None and not (
                    np.array_equal(a.center, b.center)
                    and np.array_equal(a.rotation, b.rotation)
                    and np.array_equal(a.half_extents, b.half_extents)
                ):
                    return False
        return True


@dataclass(frozen=True)
class SkeletonDef:
    """Joint names, parent tree, and part groupings at supported levels."""

    joint_names: tuple
    parents: tuple
    groupings: dict

    def __post_init__(self):
        names = tuple(self.joint_names)
        parents = tuple(int(p) for p in self.parents)
        if len(names) != len(parents):
            raise InvariantError("joint_names and parents length mismatch")
        j = len(names)
        roots = [i for i, p in enumerate(parents) if p == -1]
        if len(roots) != 1:
            raise InvariantError("skeleton must have exactly one root")
        for i, p in enumerate(parents):
            if p != -1 and not (0 <= p < j):
                raise InvariantError(f"joint {i} has invalid parent {p}")
            # walk to root to catch cycles
            seen, cur = set(), i
            while parents[cur] != -1:
                if cur in seen:
                    raise InvariantError("parent pointers contain a cycle")
                seen.add(cur)
                cur = parents[cur]
        groupings = {}
        for level, parts in self.groupings.items():
            parts = tuple(tuple(int(i) for i in part) for part in parts)
            if len(parts) != level:
                raise InvariantError(f"level {level} grouping has {len(parts)} parts")
            covered = [i for part in parts for i in part]
            if any(len(part) == 0 for part in parts):
                raise InvariantError(f"level {level} grouping has an empty part")
            if sorted(covered) != list(range(j)):
                raise InvariantError(f"level {level} grouping is not a partition of joints")
            groupings[int(level)] = parts
        object.__setattr__(self, "joint_names", names)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "groupings", groupings)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)


@dataclass(frozen=True)
class SkeletonMotion:
    """F x J x 3 joint positions in canonical units (Y-up, ground at y=0)."""

    fps: float
    joints: np.ndarray
    label: Optional[str] = None
    skeleton: str = "humanoid22"

    def __post_init__(self):
        j = _frozen(self.joints)
        if j.ndim != 3 or j.shape[2] != 3:
            raise InvariantError("joints must have shape (F, J, 3)")
        _check_finite(j, "joints")
        if float(j[..., 1].min()) < GROUND_TOL:
            raise InvariantError(f"joints plunge below ground: min y {j[..., 1].min():.4f}")
        if self.fps <= 0:
            raise InvariantError("fps must be positive")
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "joints", j)

    @property
    def num_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]


@dataclass(frozen=True)
class Track:
    """One point track: per-frame optional 3D position with visibility flags."""

    track_id: int
    segment_id: int
    positions: np.ndarray  # (F, 3), NaN rows where invisible
    visibility: np.ndarray  # (F,) bool

    def __post_init__(self):
        pos = _frozen(self.positions)
        vis = _frozen(self.visibility, dtype=bool)
        if pos.ndim != 2 or pos.shape[1] != 3 or vis.shape != (pos.shape[0],):
            raise InvariantError("track positions (F,3) and visibility (F,) must align")
        has_pos = ~np.any(np.isnan(pos), axis=1)
        if not np.array_equal(has_pos, vis):
            raise InvariantError("track position exists iff the visibility flag is true")
        if np.any(np.isinf(pos)):
            raise InvariantError("track positions contain infinities")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visibility", vis)


class CaptureSession:
    """Per-frame segmented points plus cross-frame tracks (interchange format).

    Each frame is an (N, 5) array of rows [x, y, z, confidence, segment_id].
    """

    def __init__(
        self,
        fps: float,
        frames: Sequence[np.ndarray],
        tracks: Sequence[Track],
        ground_segment_id: int,
    ):
        if fps <= 0:
            raise InvariantError("fps must be positive")
        if len(frames) == 0:
            raise InvariantError("session needs at least one frame")
        frozen_frames = []
        for f, pts in enumerate(frames):
            arr = _frozen(pts)
            if arr.ndim != 2 or arr.shape[1] != 5:
                raise InvariantError(f"frame {f} points must be (N, 5)")
            _check_finite(arr, f"frame {f} points")
            if arr.shape[0] and (arr[:, 3].min() < 0 or arr[:, 3].max() > 1):
                raise InvariantError(f"frame {f} confidences must lie in [0, 1]")
            frozen_frames.append(arr)
        num_frames = len(frozen_frames)
        frame0_segments = set(int(s) for s in frozen_frames[0][:, 4]) if len(frozen_frames[0]) else set()
        for tr in tracks:
            if not isinstance(tr, Track):
                raise InvariantError("tracks must be Track instances")
            if tr.positions.shape[0] != num_frames:
                raise InvariantError(f"track {tr.track_id} length != frame count")
            if tr.segment_id not in frame0_segments:
                raise InvariantError(
                    f"track {tr.track_id} cites segment {tr.segment_id} absent from frame 0"
                )
        self.fps = float(fps)
        self.frames = tuple(frozen_frames)
        self.tracks = tuple(tracks)
        self.ground_segment_id = int(ground_segment_id)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def frame_points(self, frame: int, segment_id: int) -> np.ndarray:
        """Positions + confidences ((N,3),(N,)) of one segment in one frame."""
        pts = self.frames[frame]
        mask = pts[:, 4].astype(int) == segment_id
        return pts[mask, :3], pts[mask, 3]

    def segment_ids(self, frame: int = 0) -> list:
        """Sorted segment ids present in a frame."""
        return sorted(set(int(s) for s in self.frames[frame][:, 4]))


DEFAULT_LABELS = ("idle", "walk", "jump", "wave", "crouch", "spin")


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered action labels; embedding index 0 is reserved for the null label."""

    labels: tuple = DEFAULT_LABELS

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        if len(set(labels)) != len(labels):
            raise InvariantError("labels must be unique")
        object.__setattr__(self, "labels", labels)

    def index(self, label: Optional[str]) -> int:
        """Embedding index: 0 for null, 1..V for vocabulary labels."""
        if label is None:
            return 0
        from .errors import UnknownLabel

        if label not in self.labels:
            raise UnknownLabel(f"label {label!r} not in vocabulary")
        return self.labels.index(label) + 1

    def label_for(self, index: int) -> Optional[str]:
        if index == 0:
            return None
        return self.labels[index - 1]

    def __len__(self) -> int:
        return len(self.labels)
