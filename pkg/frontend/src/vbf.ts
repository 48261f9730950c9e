/**
 * VBF1 feature files: ASCII magic "VBF1", uint32-LE frame count T,
 * uint32-LE embedding dim D, then T*D float32-LE values row-major.
 * Exactly 12 + 4*T*D bytes — the toolkit reading these files rejects
 * anything longer or shorter, so the writer is equally strict.
 */

import { readFileSync, renameSync, writeFileSync } from 'fs';

export const VBF1_MAGIC = 'VBF1';
export const VBF1_HEADER_BYTES = 12;

export interface FeatureMatrix {
  t: number;
  d: number;
  /** Row-major, length t*d. */
  data: Float32Array;
}

export function encodeVbf1(matrix: FeatureMatrix): Buffer {
  const { t, d, data } = matrix;
  if (t < 1 || d < 1) throw new Error(`refusing to encode empty matrix T=${t}, D=${d}`);
  if (data.length !== t * d) {
    throw new Error(`matrix data has ${data.length} values, expected T*D = ${t * d}`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`non-finite value at flat index ${i}; refusing to write`);
    }
  }
  const buf = Buffer.alloc(VBF1_HEADER_BYTES + 4 * t * d);
  buf.write(VBF1_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(t, 4);
  buf.writeUInt32LE(d, 8);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], VBF1_HEADER_BYTES + 4 * i);
  }
  return buf;
}

/** Atomic write: the file appears complete or not at all. */
export function writeVbf1(path: string, matrix: FeatureMatrix): void {
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, encodeVbf1(matrix));
  renameSync(tmp, path);
}

export function readVbf1(path: string): FeatureMatrix {
  let buf: Buffer;
  try {
    buf = readFileSync(path);
  } catch (err) {
    throw new Error(`${path}: unreadable (${(err as Error).message})`);
  }
  if (buf.length < VBF1_HEADER_BYTES) {
    throw new Error(`${path}: file too short for a VBF1 header (${buf.length} bytes)`);
  }
  if (buf.toString('ascii', 0, 4) !== VBF1_MAGIC) {
    throw new Error(`${path}: bad magic, not a VBF1 file`);
  }
  const t = buf.readUInt32LE(4);
  const d = buf.readUInt32LE(8);
  if (t < 1 || d < 1) throw new Error(`${path}: header declares empty matrix T=${t}, D=${d}`);
  const expected = VBF1_HEADER_BYTES + 4 * t * d;
  if (buf.length !== expected) {
    throw new Error(`${path}: expected ${expected} bytes for T=${t}, D=${d}, found ${buf.length}`);
  }
  const data = new Float32Array(t * d);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(VBF1_HEADER_BYTES + 4 * i);
  }
  return { t, d, data };
}
