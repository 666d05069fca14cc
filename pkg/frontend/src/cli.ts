#!/usr/bin/env node
import { writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";

import { runAdapter, loadClicks } from "./adapter.js";
import { AdapterError } from "./errors.js";
import { DEFAULT_CONFIG } from "./types.js";

const USAGE = `usage: adapter run <video> --clicks <clicks.json> -o <capture.jsonl>
               [--threshold F] [--samples N] [--stride N] [--seed N]

Runs segmentation, point tracking, and reconstruction on a clip and fuses
them into a capture.jsonl the boxmocap CLI accepts (e.g. fit-boxes).`;

interface Args {
  video: string;
  clicks: string;
  out: string;
  threshold: number;
  samples: number;
  stride: number;
  seed: number;
}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "run") usageError(`unknown command '${argv[0] ?? ""}'`);
  const positional: string[] = [];
  const flags = new Map<string, string>();
  for (let i = 1; i < argv.length; i++) {
    const a = argv[i];
    if (a.startsWith("--") || a === "-o") {
      const value = argv[++i];
      if (value === undefined) usageError(`flag ${a} needs a value`);
      flags.set(a, value);
    } else {
      positional.push(a);
    }
  }
  if (positional.length !== 1) usageError("exactly one video argument expected");
  const known = new Set(["--clicks", "-o", "--threshold", "--samples", "--stride", "--seed"]);
  for (const key of flags.keys()) {
    if (!known.has(key)) usageError(`unknown flag ${key}`);
  }
  const clicks = flags.get("--clicks");
  const out = flags.get("-o");
  if (!clicks || !out) usageError("--clicks and -o are required");

  const num = (key: string, fallback: number) => {
    const v = flags.get(key);
    if (v === undefined) return fallback;
    const n = Number(v);
    if (!Number.isFinite(n)) usageError(`${key} expects a number, got '${v}'`);
    return n;
  };
  return {
    video: positional[0],
    clicks: clicks!,
    out: out!,
    threshold: num("--threshold", DEFAULT_CONFIG.resampleThreshold),
    samples: num("--samples", DEFAULT_CONFIG.samplesPerSegment),
    stride: num("--stride", DEFAULT_CONFIG.reconStride),
    seed: num("--seed", DEFAULT_CONFIG.seed),
  };
}

function usageError(msg: string): never {
  process.stderr.write(`${msg}\n${USAGE}\n`);
  process.exit(2);
}

export function main(argv: string[]): number {
  if (argv.length === 0 || argv[0] === "--help" || argv[0] === "-h") {
    process.stdout.write(USAGE + "\n");
    return 0;
  }
  const args = parseArgs(argv);
  try {
    const prompt = loadClicks(args.clicks);
    const result = runAdapter(args.video, prompt, {
      resampleThreshold: args.threshold,
      samplesPerSegment: args.samples,
      reconStride: args.stride,
      seed: args.seed,
    });
    for (const e of result.events) {
      const reborn = e.resampledAt === null ? "never reappears" : `resampled at frame ${e.resampledAt}`;
      process.stderr.write(
        `resample: part ${e.label} ${Math.round(e.invisibleFraction * 100)}% invisible at frame ${e.triggeredAt}, ${reborn}\n`,
      );
    }
    writeFileSync(args.out, result.capture.text);
    process.stdout.write(
      `wrote ${args.out}: ${result.capture.numFrames} frames, ${result.capture.numTracks} tracks, ` +
        `${result.events.length} resample event(s)\n`,
    );
    return 0;
  } catch (e) {
    if (e instanceof AdapterError || (e as NodeJS.ErrnoException).code === "ENOENT") {
      process.stderr.write(`error: ${(e as Error).message}\n`);
      return 1;
    }
    throw e;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
