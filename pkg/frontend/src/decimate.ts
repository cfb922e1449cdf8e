// Min-max decimation for display: per pixel column keep the column's
// minimum and maximum sample so peaks survive downsampling.

export interface Pt {
  t: number;
  v: number;
}

// Input must be sorted by t. Output is sorted by t with at most
// 2 * pixelWidth points, and contains the global min and max of the input.
export function minMaxDecimate(points: Pt[], pixelWidth: number): Pt[] {
  if (pixelWidth <= 0 || points.length === 0) {
    return [];
  }
  if (points.length <= 2 * pixelWidth) {
    return points.slice();
  }
  const t0 = points[0].t;
  const span = points[points.length - 1].t - t0;
  if (span <= 0) {
    // all samples share one instant; min and max is all a pixel can show
    let lo = points[0];
    let hi = points[0];
    for (const p of points) {
      if (p.v < lo.v) lo = p;
      if (p.v > hi.v) hi = p;
    }
    return lo === hi ? [lo] : [lo, hi];
  }

  const minIdx = new Int32Array(pixelWidth).fill(-1);
  const maxIdx = new Int32Array(pixelWidth).fill(-1);
  for (let i = 0; i < points.length; i++) {
    let col = Math.floor(((points[i].t - t0) / span) * pixelWidth);
    if (col >= pixelWidth) col = pixelWidth - 1;
    if (minIdx[col] < 0 || points[i].v < points[minIdx[col]].v) {
      minIdx[col] = i;
    }
    if (maxIdx[col] < 0 || points[i].v > points[maxIdx[col]].v) {
      maxIdx[col] = i;
    }
  }

  const out: Pt[] = [];
  for (let col = 0; col < pixelWidth; col++) {
    if (minIdx[col] < 0) {
      continue;
    }
    const a = Math.min(minIdx[col], maxIdx[col]);
    const b = Math.max(minIdx[col], maxIdx[col]);
    out.push(points[a]);
    if (b !== a) {
      out.push(points[b]);
    }
  }
  return out;
}
