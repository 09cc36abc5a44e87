/**
 * Array-in/array-out calls into the curvefeat core.
 *
 * Every call shells out to the installed `curvefeat` CLI and exchanges data
 * through the bit-exact CFT1 tensor container, so results are identical to
 * driving the CLI by hand. Inputs are validated before the core is invoked
 * and copied into temp files (copy-in/copy-out; no shared mutable state),
 * which also makes the functions safe to call from concurrent workers.
 */

import { spawnSync } from "node:child_process";
import { rmSync } from "node:fs";
import { join } from "node:path";

import {
  ArrayView,
  checkView,
  expectRank,
  toFloat64,
} from "./arrayview.js";
import {
  DType,
  TensorRecord,
  makeTempDir,
  readArchive,
  writeArchive,
} from "./container.js";

export interface GeometryOptions {
  numScales?: number;
  anglesAtScale2?: number;
}

export interface WedgeArray {
  wedge: number; // 1-based flat index
  scale: number;
  angle: number;
  dims: number[];
  /** Complex coefficients, interleaved re/im. */
  data: Float64Array;
}

function cliBinary(): string {
  return process.env.CURVEFEAT_BIN ?? "curvefeat";
}

function runCli(args: string[]): void {
  const result = spawnSync(cliBinary(), args, { encoding: "utf8" });
  if (result.error) {
    throw new Error(`failed to launch curvefeat CLI: ${result.error.message}`);
  }
  if (result.status !== 0) {
    const detail = (result.stderr || result.stdout || "").trim();
    throw new Error(`curvefeat ${args[0]} exited ${result.status}: ${detail}`);
  }
}

function geometryArgs(opts: GeometryOptions): string[] {
  const args: string[] = [];
  if (opts.numScales !== undefined) args.push("--scales", String(opts.numScales));
  if (opts.anglesAtScale2 !== undefined) {
    args.push("--angles", String(opts.anglesAtScale2));
  }
  return args;
}

function imageRecord(view: ArrayView): TensorRecord {
  return {
    dims: view.dims,
    dtype: DType.F64,
    metadata: { kind: "image" },
    data: toFloat64(view),
  };
}

/** Forward curvelet transform of one real channel (H, W). */
export function bindFdct(
  channel: ArrayView,
  opts: GeometryOptions = {}
): WedgeArray[] {
  expectRank(channel, 2, "bindFdct");
  checkView(channel, "bindFdct");
  if (channel.dtype === "c128") {
    throw new Error("bindFdct: input must be real (f32 or f64)");
  }
  const dir = makeTempDir();
  try {
    const input = join(dir, "in.cft");
    const output = join(dir, "coeffs.cft");
    writeArchive(input, [imageRecord(channel)]);
    runCli(["transform", input, "--out", output, ...geometryArgs(opts)]);
    const wedges: WedgeArray[] = [];
    for (const record of readArchive(output)) {
      if (record.metadata.kind === "coefficients") continue; // header
      if (record.metadata.channel !== "0") continue; // replicated channels
      wedges.push({
        wedge: Number(record.metadata.wedge),
        scale: Number(record.metadata.scale),
        angle: Number(record.metadata.angle),
        dims: record.dims,
        data: record.data as Float64Array,
      });
    }
    wedges.sort((a, b) => a.wedge - b.wedge);
    return wedges;
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Inverse transform back to a real (H, W) channel. */
export function bindIfdct(
  wedges: WedgeArray[],
  height: number,
  width: number,
  opts: GeometryOptions = {}
): ArrayView {
  if (wedges.length === 0) {
    throw new Error("bindIfdct: empty wedge list");
  }
  const dir = makeTempDir();
  try {
    const input = join(dir, "coeffs.cft");
    const records: TensorRecord[] = [
      {
        dims: [],
        dtype: DType.F64,
        metadata: {
          kind: "coefficients",
          height: String(height),
          width: String(width),
          num_scales: String(opts.numScales ?? 5),
          angles_at_scale2: String(opts.anglesAtScale2 ?? 8),
        },
        data: new Float64Array([0]),
      },
    ];
    for (let c = 0; c < 3; c++) {
      for (const w of wedges) {
        records.push({
          dims: w.dims,
          dtype: DType.C128,
          metadata: {
            channel: String(c),
            wedge: String(w.wedge),
            scale: String(w.scale),
            angle: String(w.angle),
          },
          data: w.data,
        });
      }
    }
    writeArchive(input, records);
    const png = join(dir, "out.png");
    const floats = join(dir, "out.cft");
    runCli(["reconstruct", input, "--out", png, "--float-out", floats]);
    const [image] = readArchive(floats);
    const [channels, h, wth] = image.dims;
    if (channels !== 3) {
      throw new Error(`reconstruct returned ${channels} channels`);
    }
    const plane = new Float64Array(h * wth);
    plane.set((image.data as Float64Array).subarray(0, h * wth));
    return { dtype: "f64", dims: [h, wth], data: plane };
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Full enhancement: (3, H, W) in [0, 1] to the (12, H, W) stack. */
export function bindEnhance(
  rgb: ArrayView,
  checkpointPath?: string,
  opts: GeometryOptions = {}
): ArrayView {
  expectRank(rgb, 3, "bindEnhance");
  checkView(rgb, "bindEnhance");
  if (rgb.dims[0] !== 3) {
    throw new Error(`bindEnhance: expected 3 channels, got ${rgb.dims[0]}`);
  }
  if (rgb.dtype === "c128") {
    throw new Error("bindEnhance: input must be real (f32 or f64)");
  }
  const dir = makeTempDir();
  try {
    const input = join(dir, "in.cft");
    const output = join(dir, "stack.cft");
    writeArchive(input, [imageRecord(rgb)]);
    const args = ["enhance", input, "--out", output, ...geometryArgs(opts)];
    if (checkpointPath) args.push("--checkpoint", checkpointPath);
    runCli(args);
    const [stack] = readArchive(output);
    return {
      dtype: "f64",
      dims: stack.dims,
      data: Float64Array.from(stack.data),
    };
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}
