import { describe, expect, it } from "vitest";

import { SeriesBuffer } from "../src/series.js";
import { dequantizeMv, type AdcConfig } from "../src/types.js";

const ADC: AdcConfig = { vref_v: 3.3, bits: 12, baseline_v: 1.65 };
const RATE = 250;

function batchCodes(n: number, code = 2048): number[] {
  return new Array(n).fill(code);
}

describe("dequantizeMv", () => {
  it("matches the server's mid-tread reconstruction", () => {
    // (2048.5 / 4096) * 3.3 V - 1.65 V = +0.5 LSB above baseline
    expect(dequantizeMv(2048, ADC)).toBeCloseTo(0.40283203125, 10);
    expect(dequantizeMv(0, ADC)).toBeCloseTo(-1649.5971679688, 4);
    expect(dequantizeMv(4095, ADC)).toBeCloseTo(1649.5971679688, 4);
  });
});

describe("SeriesBuffer", () => {
  it("appends batches and reports dequantized values", () => {
    const buf = new SeriesBuffer(ADC, RATE, 60);
    buf.appendBatch(0, [0, 2048, 4095], [0, 0, 0]);
    const { mv } = buf.values();
    expect(mv).toHaveLength(3);
    expect(mv[1]).toBeCloseTo(dequantizeMv(2048, ADC), 12);
  });

  it("trims samples older than the window", () => {
    const buf = new SeriesBuffer(ADC, RATE, 2);
    for (let k = 0; k < 3; k++) {
      buf.appendBatch(k * 1_000_000, batchCodes(RATE), new Array(RATE).fill(0));
    }
    // newest sample sits at 2.996 s; everything strictly before 0.996 s is gone
    expect(buf.size()).toBe(501);
    expect(buf.values().t[0]).toBeCloseTo(0.996, 6);
  });

  it("turns flagged samples into gap spans, not points", () => {
    const buf = new SeriesBuffer(ADC, RATE, 60);
    const flags = new Array(250).fill(0);
    for (let i = 100; i < 150; i++) flags[i] = 1;
    buf.appendBatch(0, batchCodes(250), flags);

    expect(buf.size()).toBe(200);
    const { leadGapSpans } = buf.render(500);
    expect(leadGapSpans).toHaveLength(1);
    const [start, end] = leadGapSpans[0];
    expect(start).toBeCloseTo(100 / RATE, 6);
    expect(end).toBeCloseTo(150 / RATE, 6);
  });

  it("merges a dropout that crosses a batch boundary into one span", () => {
    const buf = new SeriesBuffer(ADC, RATE, 60);
    const tail = new Array(50).fill(0).map((_, i) => (i >= 40 ? 1 : 0));
    const head = new Array(50).fill(0).map((_, i) => (i < 10 ? 1 : 0));
    buf.appendBatch(0, batchCodes(50), tail);
    buf.appendBatch(200_000, batchCodes(50), head);

    const { leadGapSpans } = buf.render(500);
    expect(leadGapSpans).toHaveLength(1);
    expect(leadGapSpans[0][0]).toBeCloseTo(40 / RATE, 6);
    expect(leadGapSpans[0][1]).toBeCloseTo(60 / RATE, 6);
  });

  it("keeps separate dropouts as separate spans", () => {
    const buf = new SeriesBuffer(ADC, RATE, 60);
    const flags = new Array(250).fill(0);
    for (let i = 10; i < 20; i++) flags[i] = 1;
    for (let i = 100; i < 110; i++) flags[i] = 2;
    buf.appendBatch(0, batchCodes(250), flags);
    expect(buf.render(500).leadGapSpans).toHaveLength(2);
  });

  it("bounds rendered points by twice the pixel width", () => {
    const buf = new SeriesBuffer(ADC, RATE, 60);
    for (let k = 0; k < 10; k++) {
      const codes = Array.from({ length: 250 }, (_, i) => 2048 + ((i * 13) % 100));
      buf.appendBatch(k * 1_000_000, codes, new Array(250).fill(0));
    }
    expect(buf.size()).toBe(2500);
    const series = buf.render(500);
    expect(series.points.length).toBeLessThanOrEqual(1000);
  });

  it("trims spans that scroll out of the window", () => {
    const buf = new SeriesBuffer(ADC, RATE, 1);
    buf.appendBatch(0, batchCodes(250), new Array(250).fill(1));
    buf.appendBatch(1_000_000, batchCodes(250), new Array(250).fill(0));
    buf.appendBatch(2_000_000, batchCodes(250), new Array(250).fill(0));
    expect(buf.render(500).leadGapSpans).toHaveLength(0);
  });

  it("appendSamples behaves like appendBatch", () => {
    const a = new SeriesBuffer(ADC, RATE, 60);
    const b = new SeriesBuffer(ADC, RATE, 60);
    const codes = [100, 200, 300, 400];
    const flags = [0, 1, 1, 0];
    a.appendBatch(0, codes, flags);
    b.appendSamples(codes.map((c, i) => [i * 4000, c, flags[i]]));
    expect(a.values()).toEqual(b.values());
    expect(a.render(100).leadGapSpans).toEqual(b.render(100).leadGapSpans);
  });
});
