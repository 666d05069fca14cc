import { ValidationError } from "./errors.js";

export interface Click {
  frame: number;
  x: number;
  y: number;
}

/** Per-part prompt clicks plus the designated ground click. */
export interface ClickPrompt {
  ground: Click;
  parts: Click[][];
}

export interface AdapterConfig {
  /** Trigger resampling when at least this fraction of a part's tracks is invisible. */
  resampleThreshold: number;
  samplesPerSegment: number;
  /** Reconstruction grid stride in pixels. */
  reconStride: number;
  seed: number;
}

export const DEFAULT_CONFIG: AdapterConfig = {
  resampleThreshold: 0.7,
  samplesPerSegment: 64,
  reconStride: 2,
  seed: 0,
};

export function validateConfig(cfg: AdapterConfig): void {
  if (!(cfg.resampleThreshold > 0 && cfg.resampleThreshold <= 1)) {
    throw new ValidationError("resampleThreshold must lie in (0, 1]");
  }
  if (!Number.isInteger(cfg.samplesPerSegment) || cfg.samplesPerSegment < 1) {
    throw new ValidationError("samplesPerSegment must be a positive integer");
  }
  if (!Number.isInteger(cfg.reconStride) || cfg.reconStride < 1) {
    throw new ValidationError("reconStride must be a positive integer");
  }
}

export function validatePrompt(prompt: ClickPrompt, width: number, height: number): void {
  if (prompt.parts.length < 1 || prompt.parts.length > 6) {
    throw new ValidationError("prompts must cover 1 to 6 non-ground parts");
  }
  if (prompt.parts.some((clicks) => clicks.length < 1)) {
    throw new ValidationError("every part needs at least one click");
  }
  for (const c of [prompt.ground, ...prompt.parts.flat()]) {
    if (!Number.isInteger(c.frame) || c.frame < 0) {
      throw new ValidationError(`click frame ${c.frame} is not a valid frame index`);
    }
    if (c.x < 0 || c.x >= width || c.y < 0 || c.y >= height) {
      throw new ValidationError(`click (${c.x}, ${c.y}) lies outside the ${width}x${height} image`);
    }
  }
}

/** One integer label per pixel: -1 unlabeled, 0 ground, 1..P prompted parts. */
export interface LabelMask {
  width: number;
  height: number;
  labels: Int32Array;
}

export interface SegmentationResult {
  masks: LabelMask[];
  groundLabel: number;
  partLabels: number[];
}

export interface PixelTrack {
  id: number;
  label: number;
  /** Per-frame pixel position; null while the track does not exist or is invisible. */
  pixels: ({ x: number; y: number } | null)[];
  visibility: boolean[];
}

export interface ResampleEvent {
  label: number;
  triggeredAt: number;
  resampledAt: number | null;
  invisibleFraction: number;
}

export interface TrackingResult {
  tracks: PixelTrack[];
  events: ResampleEvent[];
}

export interface PointCloud {
  /** Flat xyz triplets for every reconstructed pixel. */
  points: Float64Array;
  confidence: Float64Array;
  /** "x,y" pixel key -> index into points/confidence. */
  pixelIndex: Map<string, number>;
}

export interface Segmenter {
  segment(prompt: ClickPrompt): SegmentationResult;
}

export interface Tracker {
  track(seg: SegmentationResult, cfg: AdapterConfig): TrackingResult;
}

export interface Reconstructor {
  reconstruct(cfg: AdapterConfig): PointCloud[];
}

export interface VideoBackend {
  fps: number;
  width: number;
  height: number;
  numFrames: number;
  segmenter: Segmenter;
  tracker: Tracker;
  reconstructor: Reconstructor;
}
