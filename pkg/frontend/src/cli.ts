#!/usr/bin/env node
/**
 * burstmtl-extract: command-line frame-embedding extraction.
 *
 *   extract --in wavs/ --model base --out feats/ --manifest manifest.csv
 *   verify-roundtrip feats/
 */

import { MODEL_DIMS } from './encoder.js';
import { runExtraction } from './extract.js';
import { formatReport, verifyRoundtrip } from './verify.js';

function usage(): string {
  return [
    'usage: burstmtl-extract <command> [options]',
    '',
    'commands:',
    '  extract --in <wav dir> --model <id> --out <feature dir> --manifest <csv>',
    '          [--batch-size N] [--device cpu]',
    '  verify-roundtrip <feature dir>',
    '',
    `models: ${Object.keys(MODEL_DIMS).join(', ')}`,
  ].join('\n');
}

function parseFlags(argv: string[], known: Record<string, boolean>): Record<string, string> {
  const flags: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) throw new Error(`unexpected argument ${JSON.stringify(arg)}`);
    const name = arg.slice(2);
    if (!(name in known)) throw new Error(`unknown option --${name}`);
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`option --${name} needs a value`);
    flags[name] = value;
    i++;
  }
  for (const [name, required] of Object.entries(known)) {
    if (required && !(name in flags)) throw new Error(`missing required option --${name}`);
  }
  return flags;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === 'extract') {
      const flags = parseFlags(rest, {
        in: true,
        model: true,
        out: true,
        manifest: true,
        'batch-size': false,
        device: false,
      });
      const result = runExtraction({
        inputDir: flags.in,
        model: flags.model,
        outputDir: flags.out,
        manifestPath: flags.manifest,
        batchSize: flags['batch-size'] !== undefined ? Number(flags['batch-size']) : undefined,
        device: flags.device,
      });
      console.log(
        `wrote ${result.rows.length} feature files (D=${result.embeddingDim}) to ${flags.out}, ` +
          `manifest: ${flags.manifest}`
      );
      if (result.resampled > 0) {
        console.log(`${result.resampled} file(s) were resampled to 16 kHz`);
      }
      return 0;
    }
    if (command === 'verify-roundtrip') {
      if (rest.length !== 1) throw new Error('verify-roundtrip takes exactly one directory');
      const report = verifyRoundtrip(rest[0]);
      console.log(formatReport(report));
      return report.ok ? 0 : 1;
    }
    if (command === undefined || command === '--help' || command === '-h') {
      console.log(usage());
      return command === undefined ? 2 : 0;
    }
    throw new Error(`unknown command ${JSON.stringify(command)}`);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

process.exitCode = main(process.argv.slice(2));
