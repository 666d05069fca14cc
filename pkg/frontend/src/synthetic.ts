import { EmptyMask, ValidationError } from "./errors.js";

import {
  partContains,
  partHidden,
  partOffset,
  liftGround,
  liftPart,
  Scene,
  ScenePart,
} from "./scene.js";
import {
  AdapterConfig,
  ClickPrompt,
  LabelMask,
  PixelTrack,
  PointCloud,
  Reconstructor,
  ResampleEvent,
  SegmentationResult,
  Segmenter,
  TrackingResult,
  Tracker,
  VideoBackend,
  validatePrompt,
} from "./types.js";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

class SceneSegmenter implements Segmenter {
  constructor(private scene: Scene) {}

  segment(prompt: ClickPrompt): SegmentationResult {
    const { scene } = this;
    validatePrompt(prompt, scene.width, scene.height);
    for (const c of [prompt.ground, ...prompt.parts.flat()]) {
      if (c.frame >= scene.frames) {
        throw new ValidationError(`click frame ${c.frame} beyond clip length ${scene.frames}`);
      }
    }

    const gy = prompt.ground.y;
    const groundHit =
      gy >= scene.ground.top && !scene.parts.some((p) => partContains(p, prompt.ground.frame, prompt.ground.x, gy));
    if (!groundHit) throw new EmptyMask("ground click does not land on the ground region");

    // Prompt order fixes the output labels: ground 0, parts 1..P. Each
    // part's clicks must all select the same scene element.
    const chosen: ScenePart[] = [];
    for (const [i, clicks] of prompt.parts.entries()) {
      const hits = clicks.map((c) => this.scene.parts.find((p) => partContains(p, c.frame, c.x, c.y)));
      const first = hits[0];
      if (first === undefined || hits.some((h) => h !== first)) {
        throw new EmptyMask(`part ${i + 1} clicks do not select a single region`);
      }
      if (chosen.includes(first)) {
        throw new ValidationError(`part ${i + 1} selects an already-prompted region`);
      }
      chosen.push(first);
    }

    const masks: LabelMask[] = [];
    for (let f = 0; f < scene.frames; f++) {
      masks.push(this.renderFrame(chosen, f));
    }
    const partLabels = chosen.map((_, i) => i + 1);
    for (const label of partLabels) {
      if (!masks[0].labels.some((l) => l === label)) {
        throw new EmptyMask(`part ${label} has no pixels in frame 0`);
      }
    }
    return { masks, groundLabel: 0, partLabels };
  }

  private renderFrame(chosen: ScenePart[], frame: number): LabelMask {
    const { width, height } = this.scene;
    const labels = new Int32Array(width * height).fill(-1);
    for (let py = this.scene.ground.top; py < height; py++) {
      labels.fill(0, py * width, py * width + width);
    }
    // painter's order: draw far parts first so nearer parts win overlaps
    const order = [...chosen.entries()].sort((a, b) => b[1].depth - a[1].depth);
    for (const [i, part] of order) {
      if (partHidden(part, frame)) continue;
      const { dx, dy } = partOffset(part, frame);
      const x0 = Math.max(0, Math.round(part.rect.x + dx));
      const y0 = Math.max(0, Math.round(part.rect.y + dy));
      const x1 = Math.min(width, Math.round(part.rect.x + dx + part.rect.w));
      const y1 = Math.min(height, Math.round(part.rect.y + dy + part.rect.h));
      for (let py = y0; py < y1; py++) {
        labels.fill(i + 1, py * width + x0, py * width + x1);
      }
    }
    return { width, height, labels };
  }
}

class SceneTracker implements Tracker {
  constructor(private scene: Scene, private chosenByLabel: Map<number, ScenePart>) {}

  track(seg: SegmentationResult, cfg: AdapterConfig): TrackingResult {
    const scene = this.scene;
    const tracks: PixelTrack[] = [];
    const events: ResampleEvent[] = [];
    let nextId = 0;

    for (const label of seg.partLabels) {
      const part = this.chosenByLabel.get(label);
      if (!part) throw new ValidationError(`no scene part behind label ${label}`);
      const active: PixelTrack[] = [];

      const spawn = (frame: number) => {
        const queries = stratifiedQueries(seg.masks[frame], label, cfg.samplesPerSegment, cfg.seed, frame);
        for (const q of queries) {
          active.push(this.follow(nextId++, label, part, q, frame));
        }
      };

      spawn(0);
      if (active.length === 0) {
        throw new EmptyMask(`no query pixels could be sampled for part ${label}`);
      }
      let armed = true;
      for (let f = 1; f < scene.frames; f++) {
        const invisible = active.filter((t) => !t.visibility[f]).length / active.length;
        if (invisible >= cfg.resampleThreshold) {
          if (armed) {
            armed = false;
            const reborn = this.nextVisibleFrame(seg, label, f + 1);
            events.push({ label, triggeredAt: f, resampledAt: reborn, invisibleFraction: invisible });
            if (reborn !== null) spawn(reborn);
          }
        } else {
          armed = true;
        }
      }
      tracks.push(...active);
    }
    return { tracks, events };
  }

  /** Advect one query pixel with the part it was sampled on. */
  private follow(id: number, label: number, part: ScenePart, q: { x: number; y: number }, born: number): PixelTrack {
    const scene = this.scene;
    const base = partOffset(part, born);
    const pixels: ({ x: number; y: number } | null)[] = [];
    const visibility: boolean[] = [];
    for (let f = 0; f < scene.frames; f++) {
      if (f < born || partHidden(part, f)) {
        pixels.push(null);
        visibility.push(false);
        continue;
      }
      const off = partOffset(part, f);
      const x = q.x + off.dx - base.dx;
      const y = q.y + off.dy - base.dy;
      const inside = x >= 0 && x < scene.width && y >= 0 && y < scene.height;
      pixels.push(inside ? { x, y } : null);
      visibility.push(inside);
    }
    return { id, label, pixels, visibility };
  }

  private nextVisibleFrame(seg: SegmentationResult, label: number, from: number): number | null {
    for (let f = from; f < seg.masks.length; f++) {
      if (seg.masks[f].labels.some((l) => l === label)) return f;
    }
    return null;
  }
}

/**
 * Stratified grid over the mask bounding box with seeded jitter: one query
 * per cell, skipping cells whose jittered pixel falls off the mask, until
 * `count` queries exist.
 */
export function stratifiedQueries(
  mask: LabelMask,
  label: number,
  count: number,
  seed: number,
  frame: number,
): { x: number; y: number }[] {
  let minX = mask.width,
    minY = mask.height,
    maxX = -1,
    maxY = -1;
  for (let py = 0; py < mask.height; py++) {
    for (let px = 0; px < mask.width; px++) {
      if (mask.labels[py * mask.width + px] === label) {
        if (px < minX) minX = px;
        if (px > maxX) maxX = px;
        if (py < minY) minY = py;
        if (py > maxY) maxY = py;
      }
    }
  }
  if (maxX < minX) return [];

  const rand = mulberry32((seed * 2654435761 + label * 97 + frame) >>> 0);
  const grid = Math.ceil(Math.sqrt(count));
  const cw = (maxX - minX + 1) / grid;
  const ch = (maxY - minY + 1) / grid;
  const out: { x: number; y: number }[] = [];
  for (let gy = 0; gy < grid && out.length < count; gy++) {
    for (let gx = 0; gx < grid && out.length < count; gx++) {
      const x = Math.min(maxX, Math.floor(minX + (gx + rand()) * cw));
      const y = Math.min(maxY, Math.floor(minY + (gy + rand()) * ch));
      if (mask.labels[y * mask.width + x] === label) out.push({ x, y });
    }
  }
  return out;
}

class SceneReconstructor implements Reconstructor {
  constructor(private scene: Scene, private chosenByLabel: Map<number, ScenePart>, private seg: SegmentationResult) {}

  reconstruct(cfg: AdapterConfig): PointCloud[] {
    const scene = this.scene;
    const clouds: PointCloud[] = [];
    for (let f = 0; f < scene.frames; f++) {
      const mask = this.seg.masks[f];
      const pts: number[] = [];
      const conf: number[] = [];
      const pixelIndex = new Map<string, number>();
      for (let py = 0; py < scene.height; py += cfg.reconStride) {
        for (let px = 0; px < scene.width; px += cfg.reconStride) {
          const label = mask.labels[py * scene.width + px];
          if (label < 0) continue;
          let p: [number, number, number];
          if (label === 0) {
            p = liftGround(scene, px, py);
          } else {
            const part = this.chosenByLabel.get(label);
            if (!part) continue;
            p = liftPart(scene, part, px, py);
          }
          pixelIndex.set(`${px},${py}`, pts.length / 3);
          pts.push(p[0], p[1], p[2]);
          conf.push(label === 0 ? 1.0 : 0.9);
        }
      }
      clouds.push({ points: Float64Array.from(pts), confidence: Float64Array.from(conf), pixelIndex });
    }
    return clouds;
  }
}

/** Bundle the three synthetic model passes for one scene clip. */
export function sceneBackend(scene: Scene, prompt: ClickPrompt): VideoBackend & { seg: SegmentationResult } {
  const segmenter = new SceneSegmenter(scene);
  const seg = segmenter.segment(prompt);
  const chosenByLabel = new Map<number, ScenePart>();
  for (const [i, clicks] of prompt.parts.entries()) {
    const c = clicks[0];
    const part = scene.parts.find((p) => partContains(p, c.frame, c.x, c.y));
    if (part) chosenByLabel.set(i + 1, part);
  }
  return {
    fps: scene.fps,
    width: scene.width,
    height: scene.height,
    numFrames: scene.frames,
    segmenter,
    tracker: new SceneTracker(scene, chosenByLabel),
    reconstructor: new SceneReconstructor(scene, chosenByLabel, seg),
    seg,
  };
}
