export { FrameEncoder, KERNEL_STRIDES, MODEL_DIMS, SAMPLE_RATE, frameCount, minSamples } from './encoder.js';
export { runExtraction, writeManifestStub } from './extract.js';
export type { ExtractionJob, ExtractionResult, ManifestRow } from './extract.js';
export { encodeVbf1, readVbf1, writeVbf1, VBF1_MAGIC } from './vbf.js';
export type { FeatureMatrix } from './vbf.js';
export { formatReport, verifyRoundtrip } from './verify.js';
export type { RoundtripFailure, RoundtripReport } from './verify.js';
export { readWav, resample } from './wav.js';
export type { WavData } from './wav.js';
