import { readFileSync } from "node:fs";

import { ModelLoadError, ValidationError } from "./errors.js";

/**
 * Synthetic clip format used by the bundled backend: rectangular billboard
 * parts at fixed depth translating over a planar ground band. Real model
 * backends (segmentation, tracking, reconstruction) plug in behind the same
 * interfaces; this one exists so the full pipeline runs offline and the
 * fixtures stay reviewable as plain JSON.
 */
export interface ScenePart {
  id: number;
  depth: number;
  rect: { x: number; y: number; w: number; h: number };
  /** Pixels of translation per frame. */
  dx: number;
  dy: number;
  /** Inclusive [start, end] frame ranges where the part is fully occluded. */
  hidden: [number, number][];
}

export interface Scene {
  width: number;
  height: number;
  fps: number;
  frames: number;
  /** World units per pixel. */
  pixelScale: number;
  ground: { top: number; z0: number; zPerRow: number };
  parts: ScenePart[];
}

export function loadScene(path: string): Scene {
  if (!path.endsWith(".json")) {
    throw new ModelLoadError(
      `no backend can decode '${path}'; the bundled backend reads synthetic scene JSON clips`,
    );
  }
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, "utf-8"));
  } catch (e) {
    throw new ModelLoadError(`failed to read scene '${path}': ${(e as Error).message}`);
  }
  return validateScene(raw);
}

export function validateScene(raw: unknown): Scene {
  const s = raw as Scene;
  const fail = (msg: string) => {
    throw new ValidationError(`scene: ${msg}`);
  };
  if (typeof s !== "object" || s === null) fail("not an object");
  for (const key of ["width", "height", "fps", "frames", "pixelScale"] as const) {
    if (typeof s[key] !== "number" || !(s[key] > 0)) fail(`${key} must be a positive number`);
  }
  if (!Number.isInteger(s.frames)) fail("frames must be an integer");
  if (typeof s.ground !== "object" || s.ground === null) fail("missing ground");
  if (!(s.ground.top >= 0 && s.ground.top < s.height)) fail("ground.top outside image");
  if (!Array.isArray(s.parts) || s.parts.length < 1) fail("needs at least one part");
  const seen = new Set<number>();
  for (const p of s.parts) {
    if (!Number.isInteger(p.id) || p.id <= 0) fail(`part id ${p.id} must be a positive integer`);
    if (seen.has(p.id)) fail(`duplicate part id ${p.id}`);
    seen.add(p.id);
    if (!(p.rect.w > 0 && p.rect.h > 0)) fail(`part ${p.id} rect is empty`);
    p.hidden = p.hidden ?? [];
    for (const [a, b] of p.hidden) {
      if (!(Number.isInteger(a) && Number.isInteger(b) && 0 <= a && a <= b)) {
        fail(`part ${p.id} hidden range [${a}, ${b}] is invalid`);
      }
    }
  }
  return s;
}

export function partOffset(part: ScenePart, frame: number): { dx: number; dy: number } {
  return { dx: part.dx * frame, dy: part.dy * frame };
}

export function partHidden(part: ScenePart, frame: number): boolean {
  return part.hidden.some(([a, b]) => frame >= a && frame <= b);
}

export function partContains(part: ScenePart, frame: number, px: number, py: number): boolean {
  if (partHidden(part, frame)) return false;
  const { dx, dy } = partOffset(part, frame);
  const x = part.rect.x + dx;
  const y = part.rect.y + dy;
  return px >= x && px < x + part.rect.w && py >= y && py < y + part.rect.h;
}

/**
 * Pixel-to-world lifting shared by the reconstructor and the track export.
 * The ground band is the exact plane y = 0 receding with the pixel row; a
 * part pixel becomes a billboard point at the part's depth.
 */
export function liftGround(scene: Scene, px: number, py: number): [number, number, number] {
  const s = scene.pixelScale;
  return [s * (px - scene.width / 2), 0.0, scene.ground.z0 + scene.ground.zPerRow * (py - scene.ground.top)];
}

export function liftPart(scene: Scene, part: ScenePart, px: number, py: number): [number, number, number] {
  const s = scene.pixelScale;
  return [s * (px - scene.width / 2), s * (scene.ground.top - py), part.depth];
}
