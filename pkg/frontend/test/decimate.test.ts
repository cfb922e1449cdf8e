import { describe, expect, it } from "vitest";

import { minMaxDecimate, type Pt } from "../src/decimate.js";

function ramp(n: number, f: (i: number) => number): Pt[] {
  return Array.from({ length: n }, (_, i) => ({ t: i / 250, v: f(i) }));
}

describe("minMaxDecimate", () => {
  it("passes small inputs through untouched", () => {
    const pts = ramp(100, (i) => Math.sin(i / 10));
    expect(minMaxDecimate(pts, 300)).toEqual(pts);
  });

  it("respects the two-points-per-pixel bound", () => {
    const pts = ramp(10_000, (i) => Math.sin(i / 3) * 100);
    const out = minMaxDecimate(pts, 300);
    expect(out.length).toBeLessThanOrEqual(600);
    expect(out.length).toBeGreaterThan(300);
  });

  it("preserves the global extrema", () => {
    const pts = ramp(5_000, (i) => Math.sin(i / 7) * 10);
    pts[1234] = { t: pts[1234].t, v: 99 }; // lone spike
    pts[4321] = { t: pts[4321].t, v: -99 };
    const out = minMaxDecimate(pts, 250);
    const values = out.map((p) => p.v);
    expect(Math.max(...values)).toBe(99);
    expect(Math.min(...values)).toBe(-99);
  });

  it("keeps output sorted by time", () => {
    const pts = ramp(3_000, (i) => ((i * 7919) % 101) - 50);
    const out = minMaxDecimate(pts, 100);
    for (let i = 1; i < out.length; i++) {
      expect(out[i].t).toBeGreaterThanOrEqual(out[i - 1].t);
    }
  });

  it("handles empty input and zero width", () => {
    expect(minMaxDecimate([], 100)).toEqual([]);
    expect(minMaxDecimate(ramp(10, () => 1), 0)).toEqual([]);
  });

  it("collapses a single-instant cluster to its min and max", () => {
    const pts = Array.from({ length: 50 }, (_, i) => ({ t: 1, v: i }));
    const out = minMaxDecimate(pts, 10);
    expect(out.map((p) => p.v)).toEqual([0, 49]);
  });
});
