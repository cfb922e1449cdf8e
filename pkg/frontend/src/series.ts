// Rolling window of dequantized samples plus lead-off gap spans.
//
// Lead-off samples are rail noise, not signal; they become gap intervals
// instead of plotted points so a detached electrode reads as a visible
// hole in the trace rather than a fake flatline.

import { minMaxDecimate, type Pt } from "./decimate.js";
import { dequantizeMv, LEAD_OFF_MASK, type AdcConfig, type Sample } from "./types.js";

export type Span = [number, number]; // [startS, endS)

export interface RenderSeries {
  points: Pt[];
  leadGapSpans: Span[];
}

export class SeriesBuffer {
  private ts: number[] = []; // seconds, clear samples only
  private mv: number[] = [];
  private spans: Span[] = [];
  private newest: number | null = null;
  private readonly stepS: number;

  constructor(
    private adc: AdcConfig,
    rateHz: number,
    private windowS: number,
  ) {
    this.stepS = 1 / rateHz;
  }

  get windowSeconds(): number {
    return this.windowS;
  }

  setWindow(windowS: number): void {
    this.windowS = windowS;
    this.trim();
  }

  appendBatch(startTsUs: number, codes: number[], flags: number[]): void {
    const t0 = startTsUs / 1e6;
    for (let i = 0; i < codes.length; i++) {
      const t = t0 + i * this.stepS;
      if ((flags[i] & LEAD_OFF_MASK) !== 0) {
        this.extendSpan(t);
      } else {
        this.ts.push(t);
        this.mv.push(dequantizeMv(codes[i], this.adc));
      }
      this.newest = t;
    }
    this.trim();
  }

  appendSamples(samples: Sample[]): void {
    for (const [tsUs, code, flags] of samples) {
      const t = tsUs / 1e6;
      if ((flags & LEAD_OFF_MASK) !== 0) {
        this.extendSpan(t);
      } else {
        this.ts.push(t);
        this.mv.push(dequantizeMv(code, this.adc));
      }
      this.newest = t;
    }
    this.trim();
  }

  private extendSpan(t: number): void {
    const last = this.spans[this.spans.length - 1];
    // contiguous (or near-contiguous) flagged samples merge into one span
    if (last !== undefined && t - last[1] <= 1.5 * this.stepS) {
      last[1] = t + this.stepS;
    } else {
      this.spans.push([t, t + this.stepS]);
    }
  }

  private trim(): void {
    if (this.newest === null) {
      return;
    }
    const cutoff = this.newest - this.windowS;
    let drop = 0;
    while (drop < this.ts.length && this.ts[drop] < cutoff) {
      drop++;
    }
    if (drop > 0) {
      this.ts.splice(0, drop);
      this.mv.splice(0, drop);
    }
    while (this.spans.length > 0 && this.spans[0][1] < cutoff) {
      this.spans.shift();
    }
    if (this.spans.length > 0 && this.spans[0][0] < cutoff) {
      this.spans[0] = [cutoff, this.spans[0][1]];
    }
  }

  newestT(): number | null {
    return this.newest;
  }

  size(): number {
    return this.ts.length;
  }

  clear(): void {
    this.ts = [];
    this.mv = [];
    this.spans = [];
    this.newest = null;
  }

  values(): { t: number[]; mv: number[] } {
    return { t: this.ts.slice(), mv: this.mv.slice() };
  }

  render(pixelWidth: number): RenderSeries {
    const pts: Pt[] = new Array(this.ts.length);
    for (let i = 0; i < this.ts.length; i++) {
      pts[i] = { t: this.ts[i], v: this.mv[i] };
    }
    return {
      points: minMaxDecimate(pts, pixelWidth),
      leadGapSpans: this.spans.map((s) => [s[0], s[1]] as Span),
    };
  }
}
