import { FrameCountMismatch, ValidationError } from "./errors.js";
import {
  AdapterConfig,
  PixelTrack,
  PointCloud,
  SegmentationResult,
  TrackingResult,
} from "./types.js";

const CAPTURE_VERSION = 1;

export interface CaptureFile {
  text: string;
  numFrames: number;
  numTracks: number;
}

/**
 * Fuse the three model outputs into capture.jsonl: one header line, one line
 * per frame with [x, y, z, confidence, segment] rows, then a tracks trailer.
 * Track pixels are lifted through the reconstruction's pixel-point mapping;
 * a visible track whose pixel has no reconstructed point degrades to
 * position null + visibility false rather than being dropped.
 */
export function exportCapture(
  seg: SegmentationResult,
  tracking: TrackingResult,
  clouds: PointCloud[],
  cfg: AdapterConfig,
  fps: number,
): CaptureFile {
  const frames = seg.masks.length;
  if (clouds.length !== frames) {
    throw new FrameCountMismatch(`${frames} masks vs ${clouds.length} point clouds`);
  }
  for (const t of tracking.tracks) {
    if (t.pixels.length !== frames || t.visibility.length !== frames) {
      throw new FrameCountMismatch(`track ${t.id} spans ${t.pixels.length} frames, clip has ${frames}`);
    }
  }

  const lines: string[] = [
    JSON.stringify({ version: CAPTURE_VERSION, fps, ground_segment_id: seg.groundLabel }),
  ];

  const framePoints: number[][][] = [];
  for (let f = 0; f < frames; f++) {
    const mask = seg.masks[f];
    const cloud = clouds[f];
    const rows: number[][] = [];
    for (const [key, idx] of cloud.pixelIndex) {
      const [px, py] = key.split(",").map(Number);
      const label = mask.labels[py * mask.width + px];
      if (label < 0) continue;
      rows.push([
        cloud.points[3 * idx],
        cloud.points[3 * idx + 1],
        cloud.points[3 * idx + 2],
        cloud.confidence[idx],
        label,
      ]);
    }
    framePoints.push(rows);
    lines.push(JSON.stringify({ index: f, points: rows }));
  }

  const tracks = tracking.tracks.map((t) => liftTrack(t, clouds, seg, cfg));
  lines.push(
    JSON.stringify({
      tracks: tracks.map((t) => ({ id: t.id, segment: t.segment, pos: t.pos, vis: t.vis })),
    }),
  );

  validateCapture(framePoints, tracks, seg.groundLabel, fps);
  return { text: lines.join("\n") + "\n", numFrames: frames, numTracks: tracks.length };
}

interface LiftedTrack {
  id: number;
  segment: number;
  pos: ([number, number, number] | null)[];
  vis: boolean[];
}

function liftTrack(
  track: PixelTrack,
  clouds: PointCloud[],
  seg: SegmentationResult,
  cfg: AdapterConfig,
): LiftedTrack {
  const pos: ([number, number, number] | null)[] = [];
  const vis: boolean[] = [];
  for (let f = 0; f < track.pixels.length; f++) {
    const px = track.pixels[f];
    if (!track.visibility[f] || px === null) {
      pos.push(null);
      vis.push(false);
      continue;
    }
    const point = nearestPoint(clouds[f], seg.masks[f], track.label, px.x, px.y, cfg.reconStride);
    pos.push(point);
    vis.push(point !== null);
  }
  return { id: track.id, segment: track.label, pos, vis };
}

/** Snap a float pixel to the nearest reconstructed grid pixel of the same label. */
function nearestPoint(
  cloud: PointCloud,
  mask: { width: number; labels: Int32Array },
  label: number,
  x: number,
  y: number,
  stride: number,
): [number, number, number] | null {
  let best: number | null = null;
  let bestDist = Infinity;
  for (const gx of [Math.floor(x / stride) * stride, Math.ceil(x / stride) * stride]) {
    for (const gy of [Math.floor(y / stride) * stride, Math.ceil(y / stride) * stride]) {
      const idx = cloud.pixelIndex.get(`${gx},${gy}`);
      if (idx === undefined) continue;
      if (mask.labels[gy * mask.width + gx] !== label) continue;
      const d = (gx - x) * (gx - x) + (gy - y) * (gy - y);
      if (d < bestDist) {
        bestDist = d;
        best = idx;
      }
    }
  }
  if (best === null) return null;
  return [cloud.points[3 * best], cloud.points[3 * best + 1], cloud.points[3 * best + 2]];
}

/** Mirror of the downstream CaptureSession invariants, checked before write. */
function validateCapture(
  frames: number[][][],
  tracks: LiftedTrack[],
  groundLabel: number,
  fps: number,
): void {
  if (!(fps > 0)) throw new ValidationError("fps must be positive");
  if (frames.length === 0) throw new ValidationError("capture has no frames");
  for (const [f, rows] of frames.entries()) {
    for (const row of rows) {
      if (row.length !== 5 || row.some((v) => !Number.isFinite(v))) {
        throw new ValidationError(`frame ${f} has a malformed point row`);
      }
      if (row[3] < 0 || row[3] > 1) {
        throw new ValidationError(`frame ${f} confidence ${row[3]} outside [0, 1]`);
      }
    }
  }
  const frame0Segments = new Set(frames[0].map((r) => r[4]));
  if (!frame0Segments.has(groundLabel)) {
    throw new ValidationError("ground segment has no points in frame 0");
  }
  for (const t of tracks) {
    if (t.pos.length !== frames.length) {
      throw new ValidationError(`track ${t.id} length differs from frame count`);
    }
    if (!frame0Segments.has(t.segment)) {
      throw new ValidationError(`track ${t.id} cites segment ${t.segment} absent from frame 0`);
    }
    for (let f = 0; f < t.pos.length; f++) {
      if ((t.pos[f] === null) !== !t.vis[f]) {
        throw new ValidationError(`track ${t.id} pos/vis disagree at frame ${f}`);
      }
    }
  }
}
