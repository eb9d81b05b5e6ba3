#!/usr/bin/env node
// Standalone entry point: cabcsim-plot <figure-spec.json>

import { readFileSync, writeFileSync } from 'fs';
import { dirname, resolve } from 'path';
import { FigureSpec, renderSvg } from './render';

export function runFromSpecFile(specPath: string): string {
  const raw = JSON.parse(readFileSync(specPath, 'utf8')) as FigureSpec;
  const base = dirname(resolve(specPath));
  const spec: FigureSpec = {
    ...raw,
    inputs: raw.inputs.map((p) => resolve(base, p)),
    out: resolve(base, raw.out),
  };
  const svg = renderSvg(spec);
  writeFileSync(spec.out, svg);
  return spec.out;
}

if (require.main === module) {
  const specPath = process.argv[2];
  if (!specPath) {
    console.error('usage: cabcsim-plot <figure-spec.json>');
    process.exit(2);
  }
  try {
    const out = runFromSpecFile(specPath);
    console.log(`wrote ${out}`);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    process.exit(1);
  }
}
