// Scrolling waveform strip on a canvas: 200 ms minor grid, gap shading,
// min-max decimated polyline. Geometry helpers are pure for testing.

import type { Pt } from "./decimate.js";
import type { RenderSeries, Span } from "./series.js";

export interface Layout {
  widthPx: number;
  heightPx: number;
  t0: number;
  t1: number;
  mvMin: number;
  mvMax: number;
}

export const MINOR_GRID_S = 0.2;

export function computeLayout(
  series: RenderSeries,
  widthPx: number,
  heightPx: number,
  windowS: number,
  tEnd: number,
): Layout {
  let mvMin = Number.POSITIVE_INFINITY;
  let mvMax = Number.NEGATIVE_INFINITY;
  for (const p of series.points) {
    if (p.v < mvMin) mvMin = p.v;
    if (p.v > mvMax) mvMax = p.v;
  }
  if (!Number.isFinite(mvMin)) {
    mvMin = -1;
    mvMax = 1;
  }
  if (mvMax - mvMin < 1e-6) {
    mvMin -= 0.5;
    mvMax += 0.5;
  }
  const pad = (mvMax - mvMin) * 0.1;
  return {
    widthPx,
    heightPx,
    t0: tEnd - windowS,
    t1: tEnd,
    mvMin: mvMin - pad,
    mvMax: mvMax + pad,
  };
}

export function tToX(layout: Layout, t: number): number {
  return ((t - layout.t0) / (layout.t1 - layout.t0)) * layout.widthPx;
}

export function mvToY(layout: Layout, mv: number): number {
  const frac = (mv - layout.mvMin) / (layout.mvMax - layout.mvMin);
  return (1 - frac) * layout.heightPx;
}

// Grid line times covering [t0, t1] at the given step, aligned to
// multiples of the step so the grid is stable while scrolling.
export function gridTimes(t0: number, t1: number, stepS = MINOR_GRID_S): number[] {
  const out: number[] = [];
  let k = Math.ceil(t0 / stepS - 1e-9);
  for (; k * stepS <= t1 + 1e-9; k++) {
    out.push(k * stepS);
  }
  return out;
}

// Split the decimated points into contiguous polyline runs, breaking at
// lead-off spans and at larger time discontinuities (window trims).
export function splitSegments(points: Pt[], gaps: Span[], maxDtS: number): Pt[][] {
  const inGap = (t: number) =>
    gaps.some(([a, b]) => t >= a && t < b);
  const segments: Pt[][] = [];
  let current: Pt[] = [];
  let prevT: number | null = null;
  for (const p of points) {
    if (inGap(p.t)) {
      prevT = null;
      if (current.length > 0) {
        segments.push(current);
        current = [];
      }
      continue;
    }
    if (prevT !== null && p.t - prevT > maxDtS) {
      if (current.length > 0) {
        segments.push(current);
      }
      current = [];
    }
    current.push(p);
    prevT = p.t;
  }
  if (current.length > 0) {
    segments.push(current);
  }
  return segments;
}

export interface ChartColors {
  background: string;
  grid: string;
  gridMajor: string;
  trace: string;
  gap: string;
}

export const DARK: ChartColors = {
  background: "#10151c",
  grid: "#1d2733",
  gridMajor: "#2a3a4d",
  trace: "#3ddc84",
  gap: "rgba(255, 99, 71, 0.18)",
};

export function drawChart(
  ctx: CanvasRenderingContext2D,
  series: RenderSeries,
  layout: Layout,
  gapBreakS: number,
  colors: ChartColors = DARK,
): void {
  ctx.fillStyle = colors.background;
  ctx.fillRect(0, 0, layout.widthPx, layout.heightPx);

  for (const t of gridTimes(layout.t0, layout.t1)) {
    // every 5th line (1 s) reads stronger, like major divisions
    const major = Math.abs(t / 1.0 - Math.round(t / 1.0)) < 1e-6;
    ctx.strokeStyle = major ? colors.gridMajor : colors.grid;
    ctx.lineWidth = 1;
    const x = Math.round(tToX(layout, t)) + 0.5;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, layout.heightPx);
    ctx.stroke();
  }
  // baseline (0 mV)
  ctx.strokeStyle = colors.gridMajor;
  const y0 = Math.round(mvToY(layout, 0)) + 0.5;
  ctx.beginPath();
  ctx.moveTo(0, y0);
  ctx.lineTo(layout.widthPx, y0);
  ctx.stroke();

  for (const [a, b] of series.leadGapSpans) {
    const x0 = Math.max(0, tToX(layout, a));
    const x1 = Math.min(layout.widthPx, tToX(layout, b));
    if (x1 > x0) {
      ctx.fillStyle = colors.gap;
      ctx.fillRect(x0, 0, x1 - x0, layout.heightPx);
    }
  }

  ctx.strokeStyle = colors.trace;
  ctx.lineWidth = 1.5;
  ctx.lineJoin = "round";
  for (const segment of splitSegments(series.points, series.leadGapSpans, gapBreakS)) {
    if (segment.length < 2) {
      continue;
    }
    ctx.beginPath();
    ctx.moveTo(tToX(layout, segment[0].t), mvToY(layout, segment[0].v));
    for (let i = 1; i < segment.length; i++) {
      ctx.lineTo(tToX(layout, segment[i].t), mvToY(layout, segment[i].v));
    }
    ctx.stroke();
  }
}
