/**
 * Bit-exact reader/writer for the "CFT1" tensor container.
 *
 * Record layout (all integers little-endian):
 *   magic "CFT1" | u32 rank | u32 dims[rank] | u8 dtype |
 *   u32 metadataLength | metadata ("key=value" lines, UTF-8) |
 *   row-major payload
 *
 * dtype codes: 0=f32, 1=f64, 2=c64 (interleaved re/im f32), 3=c128.
 * Complex payloads are exposed as interleaved re/im typed arrays of twice
 * the element count.
 */

import { readFileSync, writeFileSync, renameSync, mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export enum DType {
  F32 = 0,
  F64 = 1,
  C64 = 2,
  C128 = 3,
}

export interface TensorRecord {
  dims: number[];
  dtype: DType;
  metadata: Record<string, string>;
  /** f32/c64 -> Float32Array; f64/c128 -> Float64Array (complex interleaved). */
  data: Float32Array | Float64Array;
}

const MAGIC = Buffer.from("CFT1", "ascii");

function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

function scalarsPerElement(dtype: DType): number {
  return dtype === DType.C64 || dtype === DType.C128 ? 2 : 1;
}

function bytesPerScalar(dtype: DType): number {
  return dtype === DType.F32 || dtype === DType.C64 ? 4 : 8;
}

export function encodeRecord(record: TensorRecord): Buffer {
  const metaLines = Object.entries(record.metadata)
    .map(([k, v]) => `${k}=${v}`)
    .join("\n");
  const meta = Buffer.from(metaLines, "utf8");
  const header = Buffer.alloc(4 + 4 + 4 * record.dims.length + 1 + 4);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(record.dims.length, 4);
  record.dims.forEach((d, i) => header.writeUInt32LE(d, 8 + 4 * i));
  let off = 8 + 4 * record.dims.length;
  header.writeUInt8(record.dtype, off);
  header.writeUInt32LE(meta.length, off + 1);

  const scalars = elementCount(record.dims) * scalarsPerElement(record.dtype);
  if (record.data.length !== scalars) {
    throw new Error(
      `payload has ${record.data.length} scalars, dims need ${scalars}`
    );
  }
  // Node Buffers are always little-endian views here; typed arrays on all
  // supported platforms are little-endian, so a byte copy is exact.
  const payload = Buffer.from(
    record.data.buffer,
    record.data.byteOffset,
    record.data.byteLength
  );
  return Buffer.concat([header, meta, payload]);
}

export function decodeRecords(blob: Buffer): TensorRecord[] {
  const records: TensorRecord[] = [];
  let off = 0;
  while (off < blob.length) {
    if (!blob.subarray(off, off + 4).equals(MAGIC)) {
      throw new Error(`bad magic at offset ${off}`);
    }
    const rank = blob.readUInt32LE(off + 4);
    const dims: number[] = [];
    for (let i = 0; i < rank; i++) {
      dims.push(blob.readUInt32LE(off + 8 + 4 * i));
    }
    let p = off + 8 + 4 * rank;
    const dtype = blob.readUInt8(p) as DType;
    const metaLen = blob.readUInt32LE(p + 1);
    p += 5;
    const metadata: Record<string, string> = {};
    for (const line of blob.subarray(p, p + metaLen).toString("utf8").split("\n")) {
      if (!line) continue;
      const eq = line.indexOf("=");
      metadata[line.slice(0, eq)] = line.slice(eq + 1);
    }
    p += metaLen;
    const scalars = elementCount(dims) * scalarsPerElement(dtype);
    const byteLen = scalars * bytesPerScalar(dtype);
    const payload = blob.subarray(p, p + byteLen);
    if (payload.length !== byteLen) {
      throw new Error("truncated record");
    }
    // Copy to a fresh, aligned ArrayBuffer before constructing the view.
    const aligned = new Uint8Array(byteLen);
    aligned.set(payload);
    const data =
      bytesPerScalar(dtype) === 4
        ? new Float32Array(aligned.buffer)
        : new Float64Array(aligned.buffer);
    records.push({ dims, dtype, metadata, data });
    off = p + byteLen;
  }
  return records;
}

export function readArchive(path: string): TensorRecord[] {
  return decodeRecords(readFileSync(path));
}

export function writeArchive(path: string, records: TensorRecord[]): void {
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, Buffer.concat(records.map(encodeRecord)));
  renameSync(tmp, path);
}

export function makeTempDir(prefix = "curvefeat-"): string {
  return mkdtempSync(join(tmpdir(), prefix));
}
