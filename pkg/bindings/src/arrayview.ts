/**
 * Plain, pointer-free array descriptions crossing the binding boundary.
 * Buffers are copied in and out; callers' arrays are never mutated.
 */

export type ArrayDType = "f32" | "f64" | "c128";

export interface ArrayView {
  dtype: ArrayDType;
  dims: number[];
  /** Row-major contiguous scalars; complex data interleaved re/im. */
  data: Float32Array | Float64Array;
}

export function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function expectRank(view: ArrayView, rank: number, what: string): void {
  if (view.dims.length !== rank) {
    throw new Error(`${what}: expected rank ${rank}, got ${view.dims.length}`);
  }
}

export function checkView(view: ArrayView, what: string): void {
  const scalars = elementCount(view.dims) * (view.dtype === "c128" ? 2 : 1);
  if (view.data.length !== scalars) {
    throw new Error(
      `${what}: buffer holds ${view.data.length} scalars but dims need ${scalars}`
    );
  }
  if (view.dtype === "f32" && !(view.data instanceof Float32Array)) {
    throw new Error(`${what}: f32 view requires a Float32Array`);
  }
  if (view.dtype !== "f32" && !(view.data instanceof Float64Array)) {
    throw new Error(`${what}: ${view.dtype} view requires a Float64Array`);
  }
}

export function f64View(dims: number[], data: Float64Array): ArrayView {
  const view: ArrayView = { dtype: "f64", dims, data };
  checkView(view, "f64View");
  return view;
}

export function toFloat64(view: ArrayView): Float64Array {
  return view.data instanceof Float64Array
    ? Float64Array.from(view.data)
    : Float64Array.from(view.data);
}
