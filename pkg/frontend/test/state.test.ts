import { describe, expect, it } from "vitest";

import { initialState, reduce, type ViewState } from "../src/state.js";
import type { Alert, AlertEvent } from "../src/types.js";

function alert(id: string, extra: Partial<Alert> = {}): Alert {
  return {
    alert_id: id,
    session_id: "s1",
    kind: "LeadOffPlus",
    start_ts_us: 1000,
    end_ts_us: null,
    acknowledged: false,
    ...extra,
  };
}

function opened(id: string): AlertEvent {
  return { transition: "opened", ...alert(id) };
}

describe("reduce", () => {
  it("refuses history mode without a time range", () => {
    const next = reduce(initialState, { type: "set-mode", mode: "history" });
    expect(next.mode).toBe("live");
    expect(next.notice).toMatch(/range/);
  });

  it("enters history mode with a valid range and back to live", () => {
    const range = { fromUs: 0, toUs: 1_000_000 };
    let state = reduce(initialState, { type: "set-mode", mode: "history", range });
    expect(state.mode).toBe("history");
    expect(state.historyRange).toEqual(range);
    state = reduce(state, { type: "set-mode", mode: "live" });
    expect(state.mode).toBe("live");
  });

  it("rejects an inverted history range", () => {
    const next = reduce(initialState, {
      type: "set-mode", mode: "history",
      range: { fromUs: 5, toUs: 1 },
    });
    expect(next.mode).toBe("live");
  });

  it("resets per-session state on session selection", () => {
    let state: ViewState = {
      ...initialState,
      pendingAlerts: [alert("a1")],
      vitals: {
        ts_us: 1, bpm: 60, confidence: 1,
        quality: {
          window_start_us: 0, window_len_s: 2, in_range_fraction: 1,
          flatline_fraction: 0, lead_off_fraction: 0, score: 1,
        },
      },
      mode: "history",
      historyRange: { fromUs: 0, toUs: 1 },
    };
    state = reduce(state, { type: "select-session", sessionId: "s2" });
    expect(state.selectedSession).toBe("s2");
    expect(state.pendingAlerts).toEqual([]);
    expect(state.vitals).toBeNull();
    expect(state.mode).toBe("live");
    expect(state.historyRange).toBeNull();
  });

  it("adds an opened alert once, even if the event repeats", () => {
    let state = reduce(initialState, { type: "alert-event", alert: opened("a1") });
    state = reduce(state, { type: "alert-event", alert: opened("a1") });
    expect(state.pendingAlerts).toHaveLength(1);
  });

  it("keeps a closed alert pending but records its end", () => {
    let state = reduce(initialState, { type: "alert-event", alert: opened("a1") });
    state = reduce(state, {
      type: "alert-event",
      alert: { transition: "closed", ...alert("a1", { end_ts_us: 9000 }) },
    });
    expect(state.pendingAlerts).toHaveLength(1);
    expect(state.pendingAlerts[0].end_ts_us).toBe(9000);
  });

  it("removes an alert on ack and is idempotent", () => {
    let state = reduce(initialState, { type: "alert-event", alert: opened("a1") });
    state = reduce(state, { type: "alert-acked", alertId: "a1" });
    expect(state.pendingAlerts).toEqual([]);
    state = reduce(state, { type: "alert-acked", alertId: "a1" });
    expect(state.pendingAlerts).toEqual([]);
  });

  it("keeps the alert pending when ack fails", () => {
    let state = reduce(initialState, { type: "alert-event", alert: opened("a1") });
    state = reduce(state, { type: "ack-failed", alertId: "a1", error: "500" });
    expect(state.pendingAlerts).toHaveLength(1);
    expect(state.notice).toMatch(/acknowledge failed/);
  });

  it("drops already-acknowledged alerts when loading the existing list", () => {
    const state = reduce(initialState, {
      type: "alerts-loaded",
      alerts: [alert("a1"), alert("a2", { acknowledged: true })],
    });
    expect(state.pendingAlerts.map((a) => a.alert_id)).toEqual(["a1"]);
  });

  it("clamps the live window", () => {
    expect(reduce(initialState, { type: "set-window", windowS: 0 }).windowS).toBe(1);
    expect(reduce(initialState, { type: "set-window", windowS: 600 }).windowS).toBe(60);
    expect(reduce(initialState, { type: "set-window", windowS: 10 }).windowS).toBe(10);
  });

  it("toggles pause without touching anything else", () => {
    const paused = reduce(initialState, { type: "toggle-pause" });
    expect(paused.paused).toBe(true);
    expect({ ...paused, paused: false }).toEqual(initialState);
  });

  it("tracks stream status", () => {
    const next = reduce(initialState, { type: "stream-status", status: "reconnecting" });
    expect(next.streamStatus).toBe("reconnecting");
  });
});
