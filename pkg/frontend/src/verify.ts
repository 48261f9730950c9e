/**
 * Round-trip check for a directory of emitted VBF1 files: re-read every
 * file, validate magic/shape/finiteness, and report what failed.
 */

import { readdirSync } from 'fs';
import { join } from 'path';

import { readVbf1 } from './vbf.js';

export interface RoundtripFailure {
  file: string;
  reason: string;
}

export interface RoundtripReport {
  ok: boolean;
  fileCount: number;
  failures: RoundtripFailure[];
  /** Distinct embedding dims seen; more than one deserves a warning. */
  dims: number[];
}

export function verifyRoundtrip(dir: string): RoundtripReport {
  let names: string[];
  try {
    names = readdirSync(dir).filter((n) => n.endsWith('.vbf1')).sort();
  } catch (err) {
    throw new Error(`cannot list ${dir}: ${(err as Error).message}`);
  }
  if (names.length === 0) {
    throw new Error(`no .vbf1 files in ${dir}`);
  }

  const failures: RoundtripFailure[] = [];
  const dims = new Set<number>();
  for (const name of names) {
    const path = join(dir, name);
    try {
      const matrix = readVbf1(path);
      for (let i = 0; i < matrix.data.length; i++) {
        if (!Number.isFinite(matrix.data[i])) {
          throw new Error(`non-finite value at flat index ${i}`);
        }
      }
      dims.add(matrix.d);
    } catch (err) {
      failures.push({ file: name, reason: (err as Error).message });
    }
  }
  return {
    ok: failures.length === 0,
    fileCount: names.length,
    failures,
    dims: [...dims].sort((a, b) => a - b),
  };
}

export function formatReport(report: RoundtripReport): string {
  const lines: string[] = [];
  if (report.ok) {
    lines.push(`ok, ${report.fileCount} files`);
  } else {
    for (const f of report.failures) {
      lines.push(`FAIL ${f.file}: ${f.reason}`);
    }
    lines.push(`${report.failures.length} of ${report.fileCount} files failed`);
  }
  if (report.dims.length > 1) {
    lines.push(`warning: inconsistent embedding dims across files: ${report.dims.join(', ')}`);
  }
  return lines.join('\n');
}
