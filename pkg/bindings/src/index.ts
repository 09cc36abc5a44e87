export { bindFdct, bindIfdct, bindEnhance } from "./bindings.js";
export type { GeometryOptions, WedgeArray } from "./bindings.js";
export type { ArrayView, ArrayDType } from "./arrayview.js";
export { f64View } from "./arrayview.js";
export {
  DType,
  readArchive,
  writeArchive,
  encodeRecord,
  decodeRecords,
} from "./container.js";
export type { TensorRecord } from "./container.js";

export const VERSION = "0.1.0";
