// Reader for the simulator's fixed-schema result CSV.

import { readFileSync } from 'fs';

export const CSV_COLUMNS = [
  'scenario', 'detector', 'gamma_d_db', 'delta_gamma_db', 'K', 'M',
  'N', 'Nc', 'd', 'd0', 'trials', 'ber_s', 'hw_s', 'ber_c', 'hw_c',
  'analytical_s', 'analytical_c', 'seed',
] as const;

export type Row = Record<string, string>;

export function parseCsv(text: string): Row[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new Error('empty CSV input');
  }
  const header = lines[0].split(',');
  const missing = CSV_COLUMNS.filter((c) => !header.includes(c));
  if (missing.length > 0) {
    throw new Error(`CSV is missing required columns: ${missing.join(', ')}`);
  }
  return lines.slice(1).map((line, i) => {
    const cells = line.split(',');
    if (cells.length !== header.length) {
      throw new Error(`row ${i + 1} has ${cells.length} cells, expected ${header.length}`);
    }
    const row: Row = {};
    header.forEach((name, j) => {
      row[name] = cells[j];
    });
    return row;
  });
}

export function readRows(paths: string[]): Row[] {
  const rows: Row[] = [];
  for (const path of paths) {
    rows.push(...parseCsv(readFileSync(path, 'utf8')));
  }
  return rows;
}

export function numeric(row: Row, column: string): number | null {
  const cell = row[column];
  if (cell === undefined || cell === '') return null;
  const value = Number(cell);
  if (Number.isNaN(value)) {
    throw new Error(`column ${column} holds non-numeric value ${cell}`);
  }
  return value;
}
