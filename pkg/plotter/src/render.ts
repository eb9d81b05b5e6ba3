// Semilog BER-figure rendering in the style of the reference sweeps:
// simulated points as markers, analytical values as lines, one curve per
// group. Output is a plain SVG string assembled with fixed number
// formatting, so identical input bytes always produce identical output
// bytes.

import { CSV_COLUMNS, numeric, readRows, Row } from './csv';

export interface FigureSpec {
  inputs: string[];
  groupBy: string[];
  y: 'ber_s' | 'ber_c';
  out: string;
  title?: string;
  legendLabels?: Record<string, string>;
  logY?: boolean; // default true
  floor?: number; // log-axis floor for zero/clipped values, default 1e-7
}

const WIDTH = 720;
const HEIGHT = 520;
const MARGIN = { left: 80, right: 180, top: 40, bottom: 80 };
const PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e',
  '#8c564b', '#e377c2', '#17becf'];
const ANALYTICAL_OF: Record<string, string> = {
  ber_s: 'analytical_s',
  ber_c: 'analytical_c',
};

interface Series {
  key: string;
  color: string;
  markerIndex: number;
  simulated: { x: number; y: number; clipped: boolean }[];
  analytical: { x: number; y: number }[];
}

function fmt(v: number): string {
  return v.toFixed(2);
}

function validateSpec(spec: FigureSpec): void {
  const known = CSV_COLUMNS as readonly string[];
  const referenced = [...spec.groupBy, spec.y];
  const unknown = referenced.filter((c) => !known.includes(c));
  if (unknown.length > 0) {
    throw new Error(`figure spec references unknown columns: ${unknown.join(', ')}`);
  }
  if (!spec.inputs || spec.inputs.length === 0) {
    throw new Error('figure spec needs at least one input CSV');
  }
}

function groupKey(row: Row, cols: string[]): string {
  return cols.map((c) => `${c}=${row[c]}`).join(' ');
}

function buildSeries(rows: Row[], spec: FigureSpec, floor: number): Series[] {
  const yCol = spec.y;
  const anaCol = ANALYTICAL_OF[yCol];
  const byKey = new Map<string, Row[]>();
  for (const row of rows) {
    const key = groupKey(row, spec.groupBy);
    const bucket = byKey.get(key);
    if (bucket) bucket.push(row);
    else byKey.set(key, [row]);
  }
  const series: Series[] = [];
  let idx = 0;
  for (const [key, bucket] of byKey) {
    bucket.sort((a, b) => Number(a.gamma_d_db) - Number(b.gamma_d_db));
    const s: Series = {
      key,
      color: PALETTE[idx % PALETTE.length],
      markerIndex: idx,
      simulated: [],
      analytical: [],
    };
    for (const row of bucket) {
      const x = numeric(row, 'gamma_d_db');
      if (x === null) continue;
      const sim = numeric(row, yCol);
      if (sim !== null) {
        const clipped = sim < floor;
        s.simulated.push({ x, y: clipped ? floor : sim, clipped });
      }
      const ana = numeric(row, anaCol);
      if (ana !== null) {
        s.analytical.push({ x, y: Math.max(ana, floor) });
      }
    }
    series.push(s);
    idx += 1;
  }
  return series;
}

function marker(shape: number, x: number, y: number, color: string,
  open: boolean): string {
  const fill = open ? 'none' : color;
  const common = `stroke="${color}" stroke-width="1.5" fill="${fill}"`;
  switch (shape % 4) {
    case 0:
      return `<circle cx="${fmt(x)}" cy="${fmt(y)}" r="4" ${common}/>`;
    case 1:
      return `<rect x="${fmt(x - 3.5)}" y="${fmt(y - 3.5)}" width="7" height="7" ${common}/>`;
    case 2:
      return `<polygon points="${fmt(x)},${fmt(y - 4.5)} ${fmt(x - 4)},${fmt(y + 3.5)} ${fmt(x + 4)},${fmt(y + 3.5)}" ${common}/>`;
    default:
      return `<polygon points="${fmt(x)},${fmt(y - 4.5)} ${fmt(x - 4.5)},${fmt(y)} ${fmt(x)},${fmt(y + 4.5)} ${fmt(x + 4.5)},${fmt(y)}" ${common}/>`;
  }
}

export function renderSvg(spec: FigureSpec): string {
  validateSpec(spec);
  const floor = spec.floor ?? 1e-7;
  const logY = spec.logY ?? true;
  const rows = readRows(spec.inputs);
  if (rows.length === 0) {
    throw new Error('no data rows in the input CSV');
  }
  const series = buildSeries(rows, spec, floor);

  const xs = series.flatMap((s) => [...s.simulated, ...s.analytical].map((p) => p.x));
  const ys = series.flatMap((s) => [...s.simulated, ...s.analytical].map((p) => p.y));
  if (xs.length === 0) {
    throw new Error(`no plottable values in column ${spec.y}`);
  }
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const xSpan = xMax - xMin || 1;
  const yTop = Math.ceil(Math.log10(Math.max(...ys)));
  const yBot = Math.floor(Math.log10(floor));

  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const px = (x: number) => MARGIN.left + ((x - xMin) / xSpan) * plotW;
  const py = (y: number) => {
    const v = logY ? Math.log10(y) : y;
    const top = logY ? yTop : Math.max(...ys);
    const bot = logY ? yBot : 0;
    return MARGIN.top + ((top - v) / (top - bot || 1)) * plotH;
  };

  const parts: string[] = [];
  parts.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">`);
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  if (spec.title) {
    parts.push(`<text x="${WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">${spec.title}</text>`);
  }

  // frame and grid
  parts.push(`<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" fill="none" stroke="black"/>`);
  for (let d = yBot; d <= yTop; d += 1) {
    const y = py(Math.pow(10, d));
    parts.push(`<line x1="${MARGIN.left}" y1="${fmt(y)}" x2="${MARGIN.left + plotW}" y2="${fmt(y)}" stroke="#dddddd"/>`);
    parts.push(`<text x="${MARGIN.left - 8}" y="${fmt(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="12">1e${d}</text>`);
  }
  const xTicks = [...new Set(xs)].sort((a, b) => a - b);
  for (const t of xTicks) {
    const x = px(t);
    parts.push(`<line x1="${fmt(x)}" y1="${MARGIN.top + plotH}" x2="${fmt(x)}" y2="${MARGIN.top + plotH + 5}" stroke="black"/>`);
    parts.push(`<text x="${fmt(x)}" y="${MARGIN.top + plotH + 20}" text-anchor="middle" font-family="sans-serif" font-size="12">${t}</text>`);
  }
  parts.push(`<text x="${MARGIN.left + plotW / 2}" y="${HEIGHT - 40}" text-anchor="middle" font-family="sans-serif" font-size="13">direct-link SNR (dB)</text>`);
  parts.push(`<text x="20" y="${MARGIN.top + plotH / 2}" transform="rotate(-90 20 ${MARGIN.top + plotH / 2})" text-anchor="middle" font-family="sans-serif" font-size="13">${spec.y === 'ber_s' ? 'source BER' : 'A-BD BER'}</text>`);

  // curves
  let anyClipped = false;
  for (const s of series) {
    if (s.analytical.length > 1) {
      const pts = s.analytical
        .map((p) => `${fmt(px(p.x))},${fmt(py(p.y))}`)
        .join(' ');
      parts.push(`<polyline points="${pts}" fill="none" stroke="${s.color}" stroke-width="1.5" class="analytical"/>`);
    }
    for (const p of s.simulated) {
      anyClipped = anyClipped || p.clipped;
      parts.push(marker(s.markerIndex, px(p.x), py(p.y), s.color, p.clipped));
    }
  }

  // legend
  series.forEach((s, i) => {
    const label = spec.legendLabels?.[s.key] ?? s.key;
    const lx = WIDTH - MARGIN.right + 12;
    const ly = MARGIN.top + 14 + 20 * i;
    parts.push(marker(s.markerIndex, lx, ly - 4, s.color, false));
    parts.push(`<text x="${lx + 12}" y="${fmt(ly)}" font-family="sans-serif" font-size="11" class="legend">${label}</text>`);
  });

  if (anyClipped) {
    parts.push(`<text x="${MARGIN.left}" y="${HEIGHT - 16}" font-family="sans-serif" font-size="11" fill="#555555" class="footnote">zero-BER points are drawn as open markers at the 1e${yBot} axis floor</text>`);
  }
  parts.push('</svg>');
  return parts.join('\n') + '\n';
}
