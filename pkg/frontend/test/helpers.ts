/** Shared fixtures: build small RIFF/WAVE buffers without any audio deps. */

export interface WavSpec {
  sampleRate?: number;
  channels?: number;
  bitsPerSample?: 16 | 24 | 32;
  float?: boolean;
}

/** Sine tone, `seconds` long, encoded per the given WavSpec. Defaults to 16 kHz mono PCM16. */
export function makeWavBuffer(seconds: number, freq = 440, spec: WavSpec = {}): Buffer {
  const sampleRate = spec.sampleRate ?? 16000;
  const channels = spec.channels ?? 1;
  const bits = spec.float ? 32 : spec.bitsPerSample ?? 16;
  const frames = Math.round(seconds * sampleRate);
  const bytesPerSample = bits / 8;
  const dataLen = frames * channels * bytesPerSample;

  const buf = Buffer.alloc(44 + dataLen);
  buf.write('RIFF', 0);
  buf.writeUInt32LE(36 + dataLen, 4);
  buf.write('WAVE', 8);
  buf.write('fmt ', 12);
  buf.writeUInt32LE(16, 16);
  buf.writeUInt16LE(spec.float ? 3 : 1, 20);
  buf.writeUInt16LE(channels, 22);
  buf.writeUInt32LE(sampleRate, 24);
  buf.writeUInt32LE(sampleRate * channels * bytesPerSample, 28);
  buf.writeUInt16LE(channels * bytesPerSample, 32);
  buf.writeUInt16LE(bits, 34);
  buf.write('data', 36);
  buf.writeUInt32LE(dataLen, 40);

  let at = 44;
  for (let i = 0; i < frames; i++) {
    const value = 0.5 * Math.sin((2 * Math.PI * freq * i) / sampleRate);
    for (let c = 0; c < channels; c++) {
      if (spec.float) {
        buf.writeFloatLE(value, at);
      } else if (bits === 16) {
        buf.writeInt16LE(Math.round(value * 32767), at);
      } else if (bits === 24) {
        let v = Math.round(value * 8388607);
        if (v < 0) v += 0x1000000;
        buf[at] = v & 0xff;
        buf[at + 1] = (v >> 8) & 0xff;
        buf[at + 2] = (v >> 16) & 0xff;
      } else {
        buf.writeInt32LE(Math.round(value * 2147483647), at);
      }
      at += bytesPerSample;
    }
  }
  return buf;
}
