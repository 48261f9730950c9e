/**
 * Deterministic frame encoder.
 *
 * Turns a 16 kHz mono waveform into a T x D matrix of frame embeddings
 * with the frame geometry of the usual self-supervised speech backbones:
 * a 7-layer strided conv stack with a 20 ms hop (50 frames per second)
 * and a 25 ms receptive field, so 1.0 s of audio yields 49 frames.
 *
 * The weights are seeded from the model identifier instead of loaded
 * from a checkpoint, which keeps this package dependency-free and makes
 * extraction bit-reproducible; swapping in real pretrained weights only
 * changes the numbers, never the shapes or the file format.
 */

export const KERNEL_STRIDES: ReadonlyArray<readonly [number, number]> = [
  [10, 5],
  [3, 2],
  [3, 2],
  [3, 2],
  [3, 2],
  [2, 2],
  [2, 2],
];

/** Embedding width per model identifier; the B* ids are base-sized. */
export const MODEL_DIMS: Record<string, number> = {
  base: 768,
  B10m: 768,
  B100h: 768,
  B960h: 768,
  large: 1024,
};

export const SAMPLE_RATE = 16000;

const CHANNELS = 64; // internal conv width; projected up to D at the end

/** Number of output frames for a waveform of the given length. */
export function frameCount(nSamples: number): number {
  let t = nSamples;
  for (const [k, s] of KERNEL_STRIDES) {
    if (t < k) return 0;
    t = Math.floor((t - k) / s) + 1;
  }
  return t;
}

/** Smallest waveform length that still produces one frame (400 = 25 ms). */
export function minSamples(): number {
  let lo = 1;
  let hi = SAMPLE_RATE;
  while (lo < hi) {
    const mid = (lo + hi) >> 1;
    if (frameCount(mid) >= 1) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

// -- seeded weight generation -------------------------------------------------

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32: tiny, fast, and identical everywhere Math.imul exists. */
function rng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let z = state;
    z = Math.imul(z ^ (z >>> 15), z | 1);
    z ^= z + Math.imul(z ^ (z >>> 7), z | 61);
    return ((z ^ (z >>> 14)) >>> 0) / 4294967296;
  };
}

function uniformWeights(tag: string, count: number, fanIn: number): Float32Array {
  const next = rng(fnv1a(tag));
  const bound = Math.sqrt(3 / fanIn); // unit-variance-preserving
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = (2 * next() - 1) * bound;
  return out;
}

function gelu(x: number): number {
  return 0.5 * x * (1 + Math.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

// -- the encoder --------------------------------------------------------------

export class FrameEncoder {
  readonly model: string;
  readonly dim: number;
  private readonly convWeights: Float32Array[];
  private readonly projWeight: Float32Array;
  private readonly projBias: Float32Array;

  constructor(model: string) {
    const dim = MODEL_DIMS[model];
    if (dim === undefined) {
      throw new Error(`unknown model ${JSON.stringify(model)}; known: ${Object.keys(MODEL_DIMS).join(', ')}`);
    }
    this.model = model;
    this.dim = dim;
    this.convWeights = KERNEL_STRIDES.map(([k], layer) => {
      const cin = layer === 0 ? 1 : CHANNELS;
      return uniformWeights(`${model}/conv${layer}`, CHANNELS * cin * k, cin * k);
    });
    this.projWeight = uniformWeights(`${model}/proj`, dim * CHANNELS, CHANNELS);
    this.projBias = uniformWeights(`${model}/bias`, dim, 100);
  }

  /**
   * Encode a 16 kHz mono waveform into frame embeddings.
   * Returns row-major T x D data; throws if the clip is too short to
   * cover even one receptive field.
   */
  encode(samples: Float32Array): { t: number; d: number; data: Float32Array } {
    const t = frameCount(samples.length);
    if (t < 1) {
      throw new Error(`clip too short: ${samples.length} samples, need at least ${minSamples()} (~25 ms)`);
    }

    // Utterance-level waveform normalization, as stock preprocessors do.
    let mean = 0;
    for (let i = 0; i < samples.length; i++) mean += samples[i];
    mean /= samples.length;
    let varAcc = 0;
    for (let i = 0; i < samples.length; i++) varAcc += (samples[i] - mean) ** 2;
    const invStd = 1 / Math.sqrt(varAcc / samples.length + 1e-7);
    let h = new Float32Array(samples.length);
    for (let i = 0; i < samples.length; i++) h[i] = (samples[i] - mean) * invStd;

    let frames = h.length;
    let cin = 1;
    for (let layer = 0; layer < KERNEL_STRIDES.length; layer++) {
      const [k, s] = KERNEL_STRIDES[layer];
      const w = this.convWeights[layer];
      const tOut = Math.floor((frames - k) / s) + 1;
      const out = new Float32Array(tOut * CHANNELS);
      const span = cin * k;
      for (let f = 0; f < tOut; f++) {
        const base = f * s * cin;
        for (let co = 0; co < CHANNELS; co++) {
          let acc = 0;
          const wBase = co * span;
          for (let j = 0; j < span; j++) acc += w[wBase + j] * h[base + j];
          out[f * CHANNELS + co] = gelu(acc);
        }
      }
      h = out;
      frames = tOut;
      cin = CHANNELS;
    }

    // Standardize each frame, then project up to the embedding width.
    const data = new Float32Array(t * this.dim);
    for (let f = 0; f < t; f++) {
      let m = 0;
      for (let c = 0; c < CHANNELS; c++) m += h[f * CHANNELS + c];
      m /= CHANNELS;
      let v = 0;
      for (let c = 0; c < CHANNELS; c++) v += (h[f * CHANNELS + c] - m) ** 2;
      const inv = 1 / Math.sqrt(v / CHANNELS + 1e-8);
      const frame = new Float32Array(CHANNELS);
      for (let c = 0; c < CHANNELS; c++) frame[c] = (h[f * CHANNELS + c] - m) * inv;
      for (let d = 0; d < this.dim; d++) {
        let acc = this.projBias[d];
        const wBase = d * CHANNELS;
        for (let c = 0; c < CHANNELS; c++) acc += this.projWeight[wBase + c] * frame[c];
        data[f * this.dim + d] = acc;
      }
    }
    return { t, d: this.dim, data };
  }
}
