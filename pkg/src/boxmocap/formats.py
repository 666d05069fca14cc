"""Interchange formats: capture.jsonl, boxes.json, motion.json.

Parsers take file content (str or bytes) and raise SchemaError with enough
context to find the offending line or record. Serializers return compact,
key-ordered JSON so the same data always produces the same bytes.
"""

import json
from typing import Optional, Union

import numpy as np

from .errors import SchemaError
from .types import BoxMotionSequence, BoxPose, CaptureSession, SkeletonMotion, Track

Content = Union[str, bytes]

CAPTURE_VERSION = 1
BOXES_VERSION = 1
MOTION_VERSION = 1


def _text(content: Content) -> str:
    if isinstance(content, bytes):
        try:
            return content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"content is not valid UTF-8: {exc.reason}") from exc
    return content


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def _number(value, msg: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), msg)
    return float(value)


def _vec(value, n: int, msg: str) -> list:
    _expect(isinstance(value, list) and len(value) == n, msg)
    return [_number(v, msg) for v in value]


# ---------------------------------------------------------------- capture


def parse_capture(content: Content) -> CaptureSession:
    """Parse a line-delimited capture session (header, frames, tracks trailer)."""
    lines = _text(content).splitlines()
    _expect(len(lines) >= 2, "capture file needs a header and at least one frame")
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc

    lineno, header = records[0]
    _expect(isinstance(header, dict), f"line {lineno}: header must be an object")
    _expect(header.get("version") == CAPTURE_VERSION, "unsupported capture version")
    fps = _number(header.get("fps"), "header fps must be a number")
    _expect("ground_segment_id" in header, "header missing ground_segment_id")
    ground = header["ground_segment_id"]
    _expect(isinstance(ground, int), "ground_segment_id must be an integer")

    frames = []
    tracks_record = None
    for lineno, rec in records[1:]:
        _expect(isinstance(rec, dict), f"line {lineno}: record must be an object")
        if "tracks" in rec:
            _expect(tracks_record is None, f"line {lineno}: duplicate tracks trailer")
            tracks_record = (lineno, rec)
            continue
        _expect(tracks_record is None, f"line {lineno}: frame after tracks trailer")
        _expect(rec.get("index") == len(frames), f"line {lineno}: frame index out of order")
        pts = rec.get("points")
        _expect(isinstance(pts, list), f"line {lineno}: points must be a list")
        rows = [_vec(p, 5, f"line {lineno}: each point must be [x,y,z,conf,seg]") for p in pts]
        frames.append(np.array(rows, dtype=np.float64).reshape(len(rows), 5))
    _expect(len(frames) > 0, "capture has no frames")
    _expect(tracks_record is not None, "capture missing tracks trailer")

    lineno, rec = tracks_record
    raw_tracks = rec["tracks"]
    _expect(isinstance(raw_tracks, list), f"line {lineno}: tracks must be a list")
    tracks = []
    for tr in raw_tracks:
        _expect(isinstance(tr, dict), f"line {lineno}: track must be an object")
        for key in ("id", "segment", "pos", "vis"):
            _expect(key in tr, f"line {lineno}: track missing {key!r}")
        pos_raw, vis_raw = tr["pos"], tr["vis"]
        _expect(
            isinstance(pos_raw, list) and isinstance(vis_raw, list) and len(pos_raw) == len(vis_raw),
            f"line {lineno}: track pos/vis must be equal-length lists",
        )
        pos = np.full((len(pos_raw), 3), np.nan)
        vis = np.zeros(len(pos_raw), dtype=bool)
        for f, (p, v) in enumerate(zip(pos_raw, vis_raw)):
            _expect(isinstance(v, bool), f"line {lineno}: vis entries must be booleans")
            vis[f] = v
            if p is not None:
                pos[f] = _vec(p, 3, f"line {lineno}: track positions must be [x,y,z] or null")
            _expect(v == (p is not None), f"line {lineno}: track pos/vis disagree at frame {f}")
        tracks.append(Track(int(tr["id"]), int(tr["segment"]), pos, vis))

    return CaptureSession(fps, frames, tracks, ground)


def serialize_capture(session: CaptureSession) -> str:
    lines = [
        _dumps(
            {
                "version": CAPTURE_VERSION,
                "fps": session.fps,
                "ground_segment_id": session.ground_segment_id,
            }
        )
    ]
    for i, pts in enumerate(session.frames):
        lines.append(_dumps({"index": i, "points": [list(row) for row in pts.tolist()]}))
    tracks = []
    for tr in session.tracks:
        pos = [list(p) if v else None for p, v in zip(tr.positions.tolist(), tr.visibility)]
        tracks.append(
            {
                "id": tr.track_id,
                "segment": tr.segment_id,
                "pos": pos,
                "vis": [bool(v) for v in tr.visibility],
            }
        )
    lines.append(_dumps({"tracks": tracks}))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- boxes


def _box_to_json(box: Optional[BoxPose]):
    if box is None:
        return None
    return {
        "c": box.center.tolist(),
        "q": box.rotation.tolist(),
        "e": box.half_extents.tolist(),
    }


def _box_from_json(value, where: str) -> Optional[BoxPose]:
    if value is None:
        return None
    _expect(isinstance(value, dict), f"{where}: box must be an object or null")
    c = _vec(value.get("c"), 3, f"{where}: box c must be [x,y,z]")
    q = _vec(value.get("q"), 4, f"{where}: box q must be [w,x,y,z]")
    e = _vec(value.get("e"), 3, f"{where}: box e must be [ex,ey,ez]")
    return BoxPose(np.array(c), np.array(q), np.array(e))


def parse_boxes(content: Content) -> BoxMotionSequence:
    try:
        doc = json.loads(_text(content))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"boxes file: invalid JSON ({exc.msg})") from exc
    _expect(isinstance(doc, dict), "boxes file must be a JSON object")
    _expect(doc.get("version") == BOXES_VERSION, "unsupported boxes version")
    fps = _number(doc.get("fps"), "boxes fps must be a number")
    num_boxes = doc.get("num_boxes")
    _expect(isinstance(num_boxes, int), "num_boxes must be an integer")
    raw = doc.get("frames")
    _expect(isinstance(raw, list) and len(raw) > 0, "frames must be a non-empty list")
    frames = []
    for f, row in enumerate(raw):
        _expect(
            isinstance(row, list) and len(row) == num_boxes,
            f"frame {f}: expected {num_boxes} box slots",
        )
        frames.append([_box_from_json(v, f"frame {f} box {b}") for b, v in enumerate(row)])
    return BoxMotionSequence(fps, frames)


def serialize_boxes(seq: BoxMotionSequence) -> str:
    doc = {
        "version": BOXES_VERSION,
        "fps": seq.fps,
        "num_boxes": seq.num_boxes,
        "frames": [[_box_to_json(b) for b in row] for row in seq.frames],
    }
    return _dumps(doc) + "\n"


# ---------------------------------------------------------------- motion


def parse_motion(content: Content) -> SkeletonMotion:
    try:
        doc = json.loads(_text(content))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"motion file: invalid JSON ({exc.msg})") from exc
    _expect(isinstance(doc, dict), "motion file must be a JSON object")
    _expect(doc.get("version") == MOTION_VERSION, "unsupported motion version")
    fps = _number(doc.get("fps"), "motion fps must be a number")
    skeleton = doc.get("skeleton")
    _expect(isinstance(skeleton, str), "motion skeleton must be a string")
    label = doc.get("label")
    _expect(label is None or isinstance(label, str), "motion label must be a string or null")
    raw = doc.get("joints")
    _expect(isinstance(raw, list) and len(raw) > 0, "joints must be a non-empty list")
    num_joints = None
    frames = []
    for f, frame in enumerate(raw):
        _expect(isinstance(frame, list), f"frame {f}: joints must be a list")
        if num_joints is None:
            num_joints = len(frame)
        _expect(len(frame) == num_joints, f"frame {f}: joint count changed")
        frames.append([_vec(p, 3, f"frame {f}: joints must be [x,y,z]") for p in frame])
    joints = np.array(frames, dtype=np.float64)
    return SkeletonMotion(fps=fps, joints=joints, label=label, skeleton=skeleton)


def serialize_motion(motion: SkeletonMotion) -> str:
    doc = {
        "version": MOTION_VERSION,
        "fps": motion.fps,
        "skeleton": motion.skeleton,
        "label": motion.label,
        "joints": motion.joints.tolist(),
    }
    return _dumps(doc) + "\n"
