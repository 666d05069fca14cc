import { readFileSync } from "node:fs";

import { exportCapture, CaptureFile } from "./export.js";
import { loadScene } from "./scene.js";
import { sceneBackend } from "./synthetic.js";
import { ValidationError } from "./errors.js";
import {
  AdapterConfig,
  ClickPrompt,
  DEFAULT_CONFIG,
  ResampleEvent,
  validateConfig,
} from "./types.js";

export interface RunResult {
  capture: CaptureFile;
  events: ResampleEvent[];
}

export function loadClicks(path: string): ClickPrompt {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, "utf-8"));
  } catch (e) {
    throw new ValidationError(`failed to read clicks '${path}': ${(e as Error).message}`);
  }
  const p = raw as ClickPrompt;
  if (typeof p !== "object" || p === null || !p.ground || !Array.isArray(p.parts)) {
    throw new ValidationError("clicks file needs {ground: click, parts: [[click, ...], ...]}");
  }
  return p;
}

/**
 * The three model passes run sequentially; each is swapped in and out by the
 * backend, so nothing here assumes they can coexist in memory.
 */
export function runAdapter(videoPath: string, prompt: ClickPrompt, cfg: AdapterConfig = DEFAULT_CONFIG): RunResult {
  validateConfig(cfg);
  const scene = loadScene(videoPath);
  const backend = sceneBackend(scene, prompt);
  const seg = backend.seg;
  const tracking = backend.tracker.track(seg, cfg);
  const clouds = backend.reconstructor.reconstruct(cfg);
  const capture = exportCapture(seg, tracking, clouds, cfg, backend.fps);
  return { capture, events: tracking.events };
}
