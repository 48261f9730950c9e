/**
 * Minimal RIFF/WAVE reader for the extractor.
 *
 * Supports the formats that actually show up in vocal-burst corpora:
 * integer PCM at 16/24/32 bits and 32-bit IEEE float, any channel count
 * (downmixed to mono), any sample rate (callers resample to 16 kHz).
 */

import { readFileSync } from 'fs';

export interface WavData {
  sampleRate: number;
  /** Mono samples normalized to roughly [-1, 1]. */
  samples: Float32Array;
}

const FORMAT_PCM = 1;
const FORMAT_IEEE_FLOAT = 3;

export function readWav(path: string): WavData {
  let buf: Buffer;
  try {
    buf = readFileSync(path);
  } catch (err) {
    throw new Error(`${path}: unreadable audio file (${(err as Error).message})`);
  }
  if (buf.length < 12 || buf.toString('ascii', 0, 4) !== 'RIFF' || buf.toString('ascii', 8, 12) !== 'WAVE') {
    throw new Error(`${path}: not a RIFF/WAVE file`);
  }

  // Walk the chunk list; files in the wild carry LIST/fact/cue chunks
  // between fmt and data, so never assume a fixed 44-byte header.
  let fmt: { format: number; channels: number; sampleRate: number; bitsPerSample: number } | null = null;
  let data: Buffer | null = null;
  let offset = 12;
  while (offset + 8 <= buf.length) {
    const chunkId = buf.toString('ascii', offset, offset + 4);
    const chunkSize = buf.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (chunkId === 'fmt ') {
      if (chunkSize < 16 || body + 16 > buf.length) {
        throw new Error(`${path}: truncated fmt chunk`);
      }
      fmt = {
        format: buf.readUInt16LE(body),
        channels: buf.readUInt16LE(body + 2),
        sampleRate: buf.readUInt32LE(body + 4),
        bitsPerSample: buf.readUInt16LE(body + 14),
      };
    } else if (chunkId === 'data') {
      if (body + chunkSize > buf.length) {
        throw new Error(`${path}: data chunk declares ${chunkSize} bytes but only ${buf.length - body} remain`);
      }
      data = buf.subarray(body, body + chunkSize);
    }
    offset = body + chunkSize + (chunkSize % 2); // chunks are word-aligned
  }

  if (!fmt) throw new Error(`${path}: missing fmt chunk`);
  if (!data) throw new Error(`${path}: missing data chunk`);
  if (fmt.channels < 1) throw new Error(`${path}: fmt declares ${fmt.channels} channels`);
  if (fmt.sampleRate < 1) throw new Error(`${path}: fmt declares sample rate ${fmt.sampleRate}`);

  const interleaved = decodeSamples(path, data, fmt.format, fmt.bitsPerSample);
  let samples: Float32Array;
  if (fmt.channels === 1) {
    samples = interleaved;
  } else {
    console.warn(`warning: ${path}: ${fmt.channels} channels, downmixing to mono`);
    const frames = Math.floor(interleaved.length / fmt.channels);
    samples = new Float32Array(frames);
    for (let i = 0; i < frames; i++) {
      let acc = 0;
      for (let c = 0; c < fmt.channels; c++) acc += interleaved[i * fmt.channels + c];
      samples[i] = acc / fmt.channels;
    }
  }
  if (samples.length === 0) throw new Error(`${path}: empty data chunk`);
  return { sampleRate: fmt.sampleRate, samples };
}

function decodeSamples(path: string, data: Buffer, format: number, bits: number): Float32Array {
  if (format === FORMAT_IEEE_FLOAT) {
    if (bits !== 32) throw new Error(`${path}: float wav must be 32-bit, got ${bits}`);
    const n = Math.floor(data.length / 4);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = data.readFloatLE(i * 4);
    return out;
  }
  if (format !== FORMAT_PCM) {
    throw new Error(`${path}: unsupported wav format tag ${format} (expected PCM or IEEE float)`);
  }
  if (bits === 16) {
    const n = Math.floor(data.length / 2);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = data.readInt16LE(i * 2) / 32768;
    return out;
  }
  if (bits === 24) {
    const n = Math.floor(data.length / 3);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      // 24-bit little-endian two's complement
      let v = data[i * 3] | (data[i * 3 + 1] << 8) | (data[i * 3 + 2] << 16);
      if (v >= 0x800000) v -= 0x1000000;
      out[i] = v / 8388608;
    }
    return out;
  }
  if (bits === 32) {
    const n = Math.floor(data.length / 4);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = data.readInt32LE(i * 4) / 2147483648;
    return out;
  }
  throw new Error(`${path}: unsupported PCM bit depth ${bits}`);
}

/**
 * Linear-interpolation resampler. Good enough for bridging the occasional
 * 44.1/48 kHz stray into a 16 kHz pipeline; callers emit the warning.
 */
export function resample(samples: Float32Array, fromRate: number, toRate: number): Float32Array {
  if (fromRate === toRate) return samples;
  const outLength = Math.max(1, Math.round((samples.length * toRate) / fromRate));
  const out = new Float32Array(outLength);
  const step = (samples.length - 1) / Math.max(1, outLength - 1);
  for (let i = 0; i < outLength; i++) {
    const pos = i * step;
    const lo = Math.floor(pos);
    const hi = Math.min(lo + 1, samples.length - 1);
    const frac = pos - lo;
    out[i] = samples[lo] * (1 - frac) + samples[hi] * frac;
  }
  return out;
}
