"""Capture geometry: point filtering, OBB fitting, rigid registration,
ground calibration, box propagation, and SE(3) keyframe interpolation.

Everything here is pure float64 numpy. Proxy scale is normalized so the
frame-0 box union has a fixed height; see NormalizeConfig.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import quat
from .errors import (
    DegenerateCloud,
    DegenerateCorrespondences,
    EmptyAfterFilter,
    ExtentMismatch,
    GroundNotPlanar,
    InsufficientPoints,
    InvariantError,
    MissingKeyBox,
    NoValidParts,
)
from .types import BoxMotionSequence, BoxPose, CaptureSession, RigidTransform

EXTENT_FLOOR = 0.01
# eigenvalue gaps below this fraction of the largest eigenvalue are treated
# as degenerate; PCA directions are meaningless inside such a subspace
DEGENERACY_TOL = 1e-6


@dataclass(frozen=True)
class FilterConfig:
    confidence_min: float = 0.5
    knn_k: int = 8
    knn_sigma: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.confidence_min <= 1.0:
            raise InvariantError("confidence_min must lie in [0, 1]")
        if self.knn_k < 1:
            raise InvariantError("knn_k must be >= 1")
        if self.knn_sigma <= 0:
            raise InvariantError("knn_sigma must be positive")


@dataclass(frozen=True)
class NormalizeConfig:
    target_height: float = 1.6
    smoothing: float = 0.0  # EMA coefficient, 0 disables

    def __post_init__(self):
        if self.target_height <= 0:
            raise InvariantError("target_height must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise InvariantError("smoothing must lie in [0, 1)")


def filter_points(
    positions: np.ndarray, confidences: np.ndarray, cfg: FilterConfig = FilterConfig()
) -> np.ndarray:
    """Confidence gate, then kNN mean-distance outlier rejection."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    kept = positions[confidences >= cfg.confidence_min]
    if len(kept) == 0:
        raise EmptyAfterFilter("no point passes the confidence threshold")
    if len(kept) == 1:
        return kept
    k = min(cfg.knn_k, len(kept) - 1)
    dists, _ = cKDTree(kept).query(kept, k=k + 1)  # first neighbor is self
    mean_dist = dists[:, 1:].mean(axis=1)
    cutoff = mean_dist.mean() + cfg.knn_sigma * mean_dist.std()
    survivors = kept[mean_dist <= cutoff]
    if len(survivors) == 0:
        raise EmptyAfterFilter("every point flagged as outlier")
    return survivors


# ---------------------------------------------------------------- OBB


def _any_perp(n: np.ndarray) -> np.ndarray:
    pick = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, pick)
    return u / np.linalg.norm(u)


def _min_area_rect(p2: np.ndarray):
    """Rotating calipers over hull edges: (2x2 axis columns, extents, center)."""
    spread = p2.max(axis=0) - p2.min(axis=0) if len(p2) else np.zeros(2)
    if len(p2) < 3 or max(spread) < 1e-12:
        center = p2.mean(axis=0) if len(p2) else np.zeros(2)
        return np.eye(2), np.zeros(2), center
    try:
        hp = p2[ConvexHull(p2).vertices]
    except QhullError:
        # collinear: principal direction of the 2D spread
        c = p2 - p2.mean(axis=0)
        _, vecs = np.linalg.eigh(c.T @ c)
        d = vecs[:, 1]
        rot = np.array([[d[0], d[1]], [-d[1], d[0]]])
        proj = p2 @ rot.T
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        return rot.T, (hi - lo) / 2.0, (lo + hi) / 2.0 @ rot
    best = None
    for i in range(len(hp)):
        edge = hp[(i + 1) % len(hp)] - hp[i]
        norm = np.linalg.norm(edge)
        if norm < 1e-15:
            continue
        d = edge / norm
        rot = np.array([[d[0], d[1]], [-d[1], d[0]]])
        proj = hp @ rot.T
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        area = (hi[0] - lo[0]) * (hi[1] - lo[1])
        if best is None or area < best[0] - 1e-15:
            best = (area, rot, lo, hi)
    _, rot, lo, hi = best
    return rot.T, (hi - lo) / 2.0, (lo + hi) / 2.0 @ rot


def _box_in_plane(centered: np.ndarray, normal: np.ndarray):
    """Best box with one axis pinned to `normal`: ((3,3) axis columns, raw extents, offset)."""
    u = _any_perp(normal)
    v = np.cross(normal, u)
    basis = np.column_stack([u, v])
    axes2, ext2, c2 = _min_area_rect(centered @ basis)
    a0 = basis @ axes2[:, 0]
    a1 = basis @ axes2[:, 1]
    w = centered @ normal
    lo, hi = w.min(), w.max()
    axes = np.column_stack([a0, a1, normal])
    extents = np.array([ext2[0], ext2[1], (hi - lo) / 2.0])
    offset = basis @ c2 + normal * (lo + hi) / 2.0
    return axes, extents, offset


def _canonical_box(center: np.ndarray, axes: np.ndarray, extents: np.ndarray) -> BoxPose:
    extents = np.maximum(extents, EXTENT_FLOOR)
    order = np.argsort(-extents, kind="stable")
    extents = extents[order]
    axes = axes[:, order]
    for col in range(2):
        nz = np.nonzero(np.abs(axes[:, col]) > 1e-9)[0]
        if len(nz) and axes[nz[0], col] < 0:
            axes[:, col] = -axes[:, col]
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return BoxPose(center, quat.from_matrix(axes), extents)


def fit_obb(points: np.ndarray, min_points: int = 4) -> BoxPose:
    """PCA-based oriented bounding box with canonical axis order.

    Near-equal covariance eigenvalues leave PCA directions undetermined, so
    degenerate subspaces fall back to an exact minimum-area/volume search
    over convex-hull directions (rotating calipers).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < min_points:
        raise InsufficientPoints(f"need at least {min_points} points, got {len(points)}")
    if np.all(points.max(axis=0) - points.min(axis=0) < 1e-12):
        raise DegenerateCloud("all points coincide")
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    scale = max(evals[2], 1e-300)
    low_pair = (evals[1] - evals[0]) / scale < DEGENERACY_TOL
    high_pair = (evals[2] - evals[1]) / scale < DEGENERACY_TOL

    if low_pair and high_pair:
        # isotropic: search hull facet normals for the minimum-volume box
        try:
            hull = ConvexHull(points)
            best = None
            for eq in hull.equations:
                axes, extents, offset = _box_in_plane(centered, eq[:3])
                volume = float(np.prod(extents))
                if best is None or volume < best[0] - 1e-15:
                    best = (volume, axes, extents, offset)
            _, axes, extents, offset = best
        except QhullError:
            axes, extents, offset = evecs, None, None
    elif low_pair or high_pair:
        # one distinct axis, rectangle search in the degenerate plane
        distinct = evecs[:, 2] if low_pair else evecs[:, 0]
        axes, extents, offset = _box_in_plane(centered, distinct)
    else:
        axes, extents, offset = evecs, None, None

    if extents is None:
        proj = centered @ axes
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        extents = (hi - lo) / 2.0
        offset = axes @ ((lo + hi) / 2.0)
    return _canonical_box(centroid + offset, axes, extents)


def boxes_equivalent(a: BoxPose, b: BoxPose, tol: float = 1e-6) -> bool:
    """Same geometric box: centers, extents, and corner sets all match.

    Corner-set comparison absorbs the axis permutation/sign ambiguity of a
    box's symmetry group.
    """
    if np.max(np.abs(a.center - b.center)) > tol:
        return False
    if np.max(np.abs(a.half_extents - b.half_extents)) > tol:
        return False
    ca, cb = a.corners(), b.corners()
    d = np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=2)
    return bool(d.min(axis=1).max() <= tol and d.min(axis=0).max() <= tol)


# ---------------------------------------------------------------- registration


def estimate_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares proper rigid transform via Kabsch SVD (scale fixed at 1)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst):
        raise DegenerateCorrespondences("src and dst lengths differ")
    if len(src) < 3:
        raise DegenerateCorrespondences(f"need at least 3 correspondences, got {len(src)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[1] <= max(sv[0] * 1e-9, 1e-12):
        raise DegenerateCorrespondences("source points are collinear")
    u, _, vt = np.linalg.svd(xs.T @ xd)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(quat.from_matrix(rot), mu_d - rot @ mu_s)


def _quat_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation carrying unit vector a onto unit vector b."""
    d = float(np.dot(a, b))
    if d > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if d < -1.0 + 1e-12:
        axis = _any_perp(a)
        return np.array([0.0, axis[0], axis[1], axis[2]])
    axis = np.cross(a, b)
    return quat.normalize(np.array([1.0 + d, axis[0], axis[1], axis[2]]))


def calibrate_up(session: CaptureSession) -> RigidTransform:
    """Rotation taking the ground-plane normal to +Y, ground centroid to y=0."""
    ground, _ = session.frame_points(0, session.ground_segment_id)
    if len(ground) < 10:
        raise InsufficientPoints(f"ground segment has {len(ground)} points, need >= 10")
    centroid = ground.mean(axis=0)
    centered = ground - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / len(ground))
    if evals[2] <= 0 or evals[0] > 0.05 * evals[2]:
        raise GroundNotPlanar(
            f"ground spread off-plane: {evals[0]:.3g} vs in-plane {evals[2]:.3g}"
        )
    normal = evecs[:, 0]
    frame0 = session.frames[0]
    rest = frame0[frame0[:, 4].astype(int) != session.ground_segment_id, :3]
    if len(rest):
        if float(np.dot(rest.mean(axis=0) - centroid, normal)) < 0:
            normal = -normal
    elif normal[1] < 0:
        normal = -normal
    rot = _quat_between(normal, np.array([0.0, 1.0, 0.0]))
    lifted = quat.rotate(rot, centroid)
    return RigidTransform(rot, np.array([0.0, -lifted[1], 0.0]))


# ---------------------------------------------------------------- propagation


def _union_height(boxes) -> float:
    ys = np.concatenate([box.corners()[:, 1] for box in boxes])
    return float(ys.max() - ys.min())


def _scaled_box(box: BoxPose, scale: float) -> BoxPose:
    return BoxPose(box.center * scale, box.rotation, box.half_extents * scale)


def _ema_smooth(frames, num_boxes: int, alpha: float):
    """EMA over centers and sign-aligned quaternions, per box, skipping gaps."""
    out = [list(row) for row in frames]
    for b in range(num_boxes):
        state: Optional[tuple] = None
        for f in range(len(out)):
            box = out[f][b]
            if box is None:
                continue
            if state is None:
                state = (box.center, box.rotation)
                continue
            c = alpha * state[0] + (1.0 - alpha) * box.center
            q = box.rotation if np.dot(state[1], box.rotation) >= 0 else -box.rotation
            q = quat.normalize(alpha * state[1] + (1.0 - alpha) * q)
            state = (c, q)
            out[f][b] = BoxPose(c, q, box.half_extents)
    return out


def propagate_boxes(
    session: CaptureSession,
    filter_cfg: FilterConfig = FilterConfig(),
    norm_cfg: NormalizeConfig = NormalizeConfig(),
) -> BoxMotionSequence:
    """Fit frame-0 boxes per segment, carry them through track-anchored rigid
    transforms, calibrate up, and normalize scale.

    A frame's box is present only when >= 3 of its segment's tracks are
    visible both there and in frame 0 and are non-collinear.
    """
    segments = [s for s in session.segment_ids(0) if s != session.ground_segment_id]
    if not segments:
        raise NoValidParts("session has no non-ground segments in frame 0")

    up = calibrate_up(session)
    base_boxes = []
    for seg in segments:
        pts, conf = session.frame_points(0, seg)
        base_boxes.append(fit_obb(filter_points(pts, conf, filter_cfg)).transformed(up))

    tracks_by_segment = {seg: [] for seg in segments}
    for tr in session.tracks:
        if tr.segment_id in tracks_by_segment:
            tracks_by_segment[tr.segment_id].append(tr)

    frames = [list(base_boxes)]
    for f in range(1, session.num_frames):
        row = []
        for seg, base in zip(segments, base_boxes):
            anchored = [
                tr for tr in tracks_by_segment[seg] if tr.visibility[0] and tr.visibility[f]
            ]
            if len(anchored) < 3:
                row.append(None)
                continue
            src = np.array([tr.positions[0] for tr in anchored])
            dst = np.array([tr.positions[f] for tr in anchored])
            try:
                motion = estimate_rigid(src, dst)
            except DegenerateCorrespondences:
                row.append(None)
                continue
            # conjugate the raw-frame motion into the calibrated frame
            row.append(base.transformed(up.compose(motion).compose(up.inverse())))
        frames.append(row)

    scale = norm_cfg.target_height / _union_height(base_boxes)
    frames = [[None if b is None else _scaled_box(b, scale) for b in row] for row in frames]
    if norm_cfg.smoothing > 0:
        frames = _ema_smooth(frames, len(segments), norm_cfg.smoothing)
    return BoxMotionSequence(session.fps, frames)


# ---------------------------------------------------------------- keyframes


def interpolate_pose(a: BoxPose, b: BoxPose, t: float) -> BoxPose:
    """SE(3) geodesic between two poses of the same part (slerp + lerp)."""
    if not np.array_equal(a.half_extents, b.half_extents):
        raise ExtentMismatch("keyframe boxes have different extents")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return BoxPose(
        a.center + t * (b.center - a.center),
        quat.slerp(a.rotation, b.rotation, t),
        a.half_extents,
    )


def expand_keyframes(keys: BoxMotionSequence, frames_between) -> BoxMotionSequence:
    """Insert interpolated frames between consecutive keys; keys pass through."""
    frames_between = [int(n) for n in frames_between]
    if keys.num_frames < 2:
        raise InvariantError("need at least 2 key frames")
    if len(frames_between) != keys.num_frames - 1:
        raise InvariantError(
            f"frames_between needs {keys.num_frames - 1} entries, got {len(frames_between)}"
        )
    if any(n < 0 for n in frames_between):
        raise InvariantError("frames_between entries must be >= 0")
    for f, row in enumerate(keys.frames):
        if any(box is None for box in row):
            raise MissingKeyBox(f"key frame {f} has an absent box")

    out = []
    for k, gap in enumerate(frames_between):
        a_row, b_row = keys.frames[k], keys.frames[k + 1]
        out.append(list(a_row))
        for j in range(1, gap + 1):
            t = j / (gap + 1)
            out.append([interpolate_pose(a, b, t) for a, b in zip(a_row, b_row)])
    out.append(list(keys.frames[-1]))
    return BoxMotionSequence(keys.fps, out)
