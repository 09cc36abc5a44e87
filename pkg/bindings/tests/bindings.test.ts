/**
 * Binding acceptance: results must match the core CLI bit-near, and the
 * transform identities must survive the marshalling round trip.
 */

import { describe, expect, it } from "vitest";
import { spawnSync } from "node:child_process";
import { rmSync } from "node:fs";
import { join } from "node:path";

import { f64View } from "../src/arrayview.js";
import { bindEnhance, bindFdct, bindIfdct } from "../src/bindings.js";
import { DType, makeTempDir, readArchive, writeArchive } from "../src/container.js";

const SIZE = 64;
const GEOMETRY = { numScales: 4, anglesAtScale2: 8 };

/** Deterministic PRNG (mulberry32) so fixtures are stable. */
function prng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function randomImage(seed: number, channels: number): Float64Array {
  const rand = prng(seed);
  const data = new Float64Array(channels * SIZE * SIZE);
  for (let i = 0; i < data.length; i++) data[i] = rand();
  return data;
}

function norm2(a: Float64Array): number {
  let s = 0;
  for (const v of a) s += v * v;
  return Math.sqrt(s);
}

function relErr(a: Float64Array, b: Float64Array): number {
  let diff = 0;
  let ref = 0;
  for (let i = 0; i < a.length; i++) {
    diff += (a[i] - b[i]) ** 2;
    ref += b[i] * b[i];
  }
  return Math.sqrt(diff) / Math.sqrt(ref);
}

describe("bindFdct / bindIfdct", () => {
  it("round-trips within 1e-8 and satisfies Parseval", () => {
    for (const seed of [1, 2, 3]) {
      const x = randomImage(seed, 1);
      const view = f64View([SIZE, SIZE], x);
      const wedges = bindFdct(view, GEOMETRY);
      expect(wedges.length).toBe(26);
      expect(wedges[0].scale).toBe(1);

      let coeffEnergy = 0;
      for (const w of wedges) {
        for (const v of w.data) coeffEnergy += v * v;
      }
      let imageEnergy = 0;
      for (const v of x) imageEnergy += v * v;
      expect(Math.abs(coeffEnergy / imageEnergy - 1)).toBeLessThanOrEqual(1e-8);

      const back = bindIfdct(wedges, SIZE, SIZE, GEOMETRY);
      expect(back.dims).toEqual([SIZE, SIZE]);
      expect(relErr(back.data as Float64Array, x)).toBeLessThanOrEqual(1e-8);
    }
  }, 120000);

  it("maps zero input to zero wedges", () => {
    const view = f64View([SIZE, SIZE], new Float64Array(SIZE * SIZE));
    const wedges = bindFdct(view, GEOMETRY);
    for (const w of wedges) {
      for (const v of w.data) expect(v).toBe(0);
    }
  }, 60000);

  it("rejects wrong rank without touching the core", () => {
    const view = { dtype: "f64" as const, dims: [SIZE], data: new Float64Array(SIZE) };
    expect(() => bindFdct(view)).toThrow(/rank/);
  });
});

describe("bindEnhance", () => {
  it("matches cmd_enhance on a 20-image fixture within 1e-6", () => {
    const dir = makeTempDir("fixture-");
    try {
      let worst = 0;
      for (let seed = 0; seed < 20; seed++) {
        const rgb = randomImage(100 + seed, 3);
        const view = f64View([3, SIZE, SIZE], rgb);
        const viaBinding = bindEnhance(view, undefined, GEOMETRY);
        expect(viaBinding.dims).toEqual([12, SIZE, SIZE]);

        // independent CLI invocation on the same payload
        const input = join(dir, `img${seed}.cft`);
        const output = join(dir, `stack${seed}.cft`);
        writeArchive(input, [
          { dims: [3, SIZE, SIZE], dtype: DType.F64, metadata: {}, data: rgb },
        ]);
        const run = spawnSync(
          process.env.CURVEFEAT_BIN ?? "curvefeat",
          ["enhance", input, "--out", output, "--scales", "4"],
          { encoding: "utf8" }
        );
        expect(run.status).toBe(0);
        const [stack] = readArchive(output);
        const direct = Float64Array.from(stack.data);
        worst = Math.max(worst, relErr(viaBinding.data as Float64Array, direct));
      }
      expect(worst).toBeLessThanOrEqual(1e-6);
    } finally {
      rmSync(dir, { recursive: true, force: true });
    }
  }, 300000);

  it("reproduces inputs in the band-4 slots under neutral parameters", () => {
    const rgb = randomImage(7, 3);
    const view = f64View([3, SIZE, SIZE], rgb);
    const stack = bindEnhance(view, undefined, GEOMETRY);
    const plane = SIZE * SIZE;
    for (let c = 0; c < 3; c++) {
      const band4 = (stack.data as Float64Array).subarray(
        (4 * c + 3) * plane,
        (4 * c + 4) * plane
      );
      const channel = rgb.subarray(c * plane, (c + 1) * plane);
      expect(relErr(Float64Array.from(band4), Float64Array.from(channel)))
        .toBeLessThanOrEqual(1e-6);
    }
  }, 60000);

  it("does not mutate the input buffer", () => {
    const rgb = randomImage(9, 3);
    const copy = Float64Array.from(rgb);
    bindEnhance(f64View([3, SIZE, SIZE], rgb), undefined, GEOMETRY);
    expect(Array.from(rgb)).toEqual(Array.from(copy));
  }, 60000);

  it("rejects a wrong channel count", () => {
    const bad = f64View([4, SIZE, SIZE], new Float64Array(4 * SIZE * SIZE));
    expect(() => bindEnhance(bad)).toThrow(/3 channels/);
  });
});
