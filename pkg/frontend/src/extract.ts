/**
 * The extraction job: a directory of wavs in, one VBF1 file per wav out
 * (same stem), plus `id,feature_file` rows in a manifest stub that the
 * downstream toolkit extends with labels and splits.
 */

import { existsSync, mkdirSync, readdirSync, readFileSync, renameSync, writeFileSync } from 'fs';
import { basename, dirname, join, relative } from 'path';

import { FrameEncoder, MODEL_DIMS, SAMPLE_RATE } from './encoder.js';
import { writeVbf1 } from './vbf.js';
import { readWav, resample } from './wav.js';

export interface ExtractionJob {
  inputDir: string;
  model: string;
  outputDir: string;
  manifestPath: string;
  /** Files per progress line; purely cosmetic. */
  batchSize?: number;
  device?: string;
}

export interface ManifestRow {
  id: string;
  featureFile: string;
}

export interface ExtractionResult {
  rows: ManifestRow[];
  embeddingDim: number;
  resampled: number;
}

export function runExtraction(job: ExtractionJob): ExtractionResult {
  const device = job.device ?? 'cpu';
  if (device !== 'cpu') {
    throw new Error(`device ${JSON.stringify(device)} not supported; this extractor is cpu-only`);
  }
  if (!(job.model in MODEL_DIMS)) {
    throw new Error(`unknown model ${JSON.stringify(job.model)}; known: ${Object.keys(MODEL_DIMS).join(', ')}`);
  }
  if (!existsSync(job.inputDir)) {
    throw new Error(`input directory not found: ${job.inputDir}`);
  }
  const wavs = readdirSync(job.inputDir)
    .filter((name) => name.toLowerCase().endsWith('.wav'))
    .sort(); // fixed order makes runs reproducible
  if (wavs.length === 0) {
    throw new Error(`no wav files in ${job.inputDir}`);
  }

  mkdirSync(job.outputDir, { recursive: true });
  const encoder = new FrameEncoder(job.model);
  const batchSize = job.batchSize ?? 8;
  const rows: ManifestRow[] = [];
  let resampled = 0;

  for (let i = 0; i < wavs.length; i++) {
    const wavPath = join(job.inputDir, wavs[i]);
    const wav = readWav(wavPath);
    let samples = wav.samples;
    if (wav.sampleRate !== SAMPLE_RATE) {
      console.warn(`warning: ${wavPath}: sample rate ${wav.sampleRate}, resampling to ${SAMPLE_RATE}`);
      samples = resample(samples, wav.sampleRate, SAMPLE_RATE);
      resampled++;
    }
    const stem = basename(wavs[i]).replace(/\.wav$/i, '');
    const outPath = join(job.outputDir, `${stem}.vbf1`);
    writeVbf1(outPath, encoder.encode(samples));
    rows.push({ id: stem, featureFile: relative(dirname(job.manifestPath) || '.', outPath) });
    if ((i + 1) % batchSize === 0 || i + 1 === wavs.length) {
      console.log(`processed ${i + 1}/${wavs.length} files`);
    }
  }

  writeManifestStub(job.manifestPath, rows);
  return { rows, embeddingDim: encoder.dim, resampled };
}

/**
 * Create or extend the two-column manifest stub. Rows for ids we just
 * wrote replace any stale entries, so re-running a job is idempotent;
 * rows for other ids are kept untouched.
 */
export function writeManifestStub(path: string, rows: ManifestRow[]): void {
  const ordered: ManifestRow[] = [];
  const index = new Map<string, number>();
  if (existsSync(path)) {
    const lines = readFileSync(path, 'utf-8').split('\n').filter((l) => l.trim());
    for (const line of lines.slice(1)) {
      const comma = line.indexOf(',');
      if (comma < 0) continue;
      const id = line.slice(0, comma);
      index.set(id, ordered.length);
      ordered.push({ id, featureFile: line.slice(comma + 1) });
    }
  }
  for (const row of rows) {
    const at = index.get(row.id);
    if (at === undefined) {
      index.set(row.id, ordered.length);
      ordered.push(row);
    } else {
      ordered[at] = row;
    }
  }
  const text = ['id,feature_file', ...ordered.map((r) => `${r.id},${r.featureFile}`)].join('\n') + '\n';
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, text);
  renameSync(tmp, path);
}
