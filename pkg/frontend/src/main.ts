// DOM wiring: selection controls, live stream, canvas redraw loop,
// alert banner. Everything testable lives in the other modules; this
// file only connects them to the page.

import { ApiClient } from "./api.js";
import { computeLayout, drawChart } from "./chart.js";
import { SeriesBuffer } from "./series.js";
import { StreamClient } from "./stream.js";
import { initialState, reduce, type Action, type ViewState } from "./state.js";
import type { SessionInfo } from "./types.js";

const SESSION_REFRESH_MS = 5000;
const FULL_RANGE_TO_US = 2 ** 62;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

class App {
  private api = new ApiClient("");
  private state: ViewState = initialState;
  private stream: StreamClient | null = null;
  private buffer: SeriesBuffer | null = null;
  private historyBuffer: SeriesBuffer | null = null;
  private session: SessionInfo | null = null;

  private canvas = el<HTMLCanvasElement>("chart");
  private patientSel = el<HTMLSelectElement>("patient");
  private sessionSel = el<HTMLSelectElement>("session");
  private windowSel = el<HTMLSelectElement>("window");
  private pauseBtn = el<HTMLButtonElement>("pause");
  private liveBtn = el<HTMLButtonElement>("mode-live");
  private historyBtn = el<HTMLButtonElement>("mode-history");
  private statusEl = el<HTMLSpanElement>("status");
  private vitalsEl = el<HTMLSpanElement>("vitals");
  private alertsEl = el<HTMLDivElement>("alerts");
  private noticeEl = el<HTMLDivElement>("notice");

  start(): void {
    this.patientSel.onchange = () => {
      const id = this.patientSel.value || null;
      this.dispatch({ type: "select-patient", patientId: id });
      void this.refreshSessions();
    };
    this.sessionSel.onchange = () => this.selectSession(this.sessionSel.value || null);
    this.windowSel.onchange = () => {
      this.dispatch({ type: "set-window", windowS: Number(this.windowSel.value) });
      this.buffer?.setWindow(this.state.windowS);
    };
    this.pauseBtn.onclick = () => this.dispatch({ type: "toggle-pause" });
    this.liveBtn.onclick = () => this.dispatch({ type: "set-mode", mode: "live" });
    this.historyBtn.onclick = () => void this.loadHistory();

    void this.refreshPatients();
    void this.refreshSessions();
    setInterval(() => void this.refreshSessions(), SESSION_REFRESH_MS);

    const frame = () => {
      this.draw();
      requestAnimationFrame(frame);
    };
    requestAnimationFrame(frame);
  }

  private dispatch(action: Action): void {
    this.state = reduce(this.state, action);
    this.renderChrome();
  }

  private async refreshPatients(): Promise<void> {
    try {
      const patients = await this.api.listPatients();
      this.dispatch({ type: "patients-loaded", patients });
      fillSelect(this.patientSel, [["", "all patients"],
        ...patients.map((p): [string, string] => [p.patient_id, p.display_name])],
        this.state.selectedPatient ?? "");
    } catch (err) {
      this.dispatch({ type: "notice", text: `failed to load patients: ${err}` });
    }
  }

  private async refreshSessions(): Promise<void> {
    try {
      const sessions = await this.api.listSessions(this.state.selectedPatient ?? undefined);
      this.dispatch({ type: "sessions-loaded", sessions });
      fillSelect(this.sessionSel, [["", "select session"],
        ...sessions.map((s): [string, string] =>
          [s.session_id, `${s.device_id} · ${s.state} · ${s.session_id.slice(0, 8)}`])],
        this.state.selectedSession ?? "");
    } catch (err) {
      this.dispatch({ type: "notice", text: `failed to load sessions: ${err}` });
    }
  }

  private selectSession(sessionId: string | null): void {
    this.stream?.stop();
    this.stream = null;
    this.buffer = null;
    this.historyBuffer = null;
    this.session = null;
    this.dispatch({ type: "select-session", sessionId });
    if (sessionId === null) {
      return;
    }
    void this.attach(sessionId);
  }

  private async attach(sessionId: string): Promise<void> {
    try {
      this.session = await this.api.getSession(sessionId);
    } catch (err) {
      this.dispatch({ type: "notice", text: `failed to open session: ${err}` });
      return;
    }
    const info = this.session;
    this.buffer = new SeriesBuffer(info.adc, info.sample_rate_hz, this.state.windowS);

    try {
      const alerts = await this.api.getAlerts(sessionId);
      this.dispatch({ type: "alerts-loaded", alerts });
    } catch {
      // alerts will still arrive over the stream
    }

    this.stream = new StreamClient("", sessionId, {
      onBatch: (b) => this.buffer?.appendBatch(b.start_ts_us, b.codes, b.flags),
      onAlert: (a) => this.dispatch({ type: "alert-event", alert: a }),
      onVitals: (v) => this.dispatch({ type: "vitals", vitals: v }),
      onStatus: (s) => this.dispatch({ type: "stream-status", status: s }),
      onEnd: () => this.dispatch({ type: "notice", text: "session closed" }),
    });
    this.stream.start();
  }

  private async loadHistory(): Promise<void> {
    if (this.session === null || this.buffer === null) {
      this.dispatch({ type: "notice", text: "select a session first" });
      return;
    }
    const range = { fromUs: 0, toUs: FULL_RANGE_TO_US };
    try {
      const resp = await this.api.getSamples(
        this.session.session_id, range.fromUs, range.toUs);
      if (resp.samples.length === 0) {
        this.dispatch({ type: "notice", text: "no stored samples in range" });
        return;
      }
      const t0 = resp.samples[0][0];
      const t1 = resp.samples[resp.samples.length - 1][0];
      const spanS = Math.max(1, (t1 - t0) / 1e6 + 1);
      this.historyBuffer = new SeriesBuffer(resp.adc, resp.sample_rate_hz, spanS);
      this.historyBuffer.appendSamples(resp.samples);
      this.dispatch({ type: "set-mode", mode: "history", range });
    } catch (err) {
      this.dispatch({ type: "notice", text: `history load failed: ${err}` });
    }
  }

  private draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    const dpr = window.devicePixelRatio || 1;
    const cssWidth = this.canvas.clientWidth;
    const cssHeight = this.canvas.clientHeight;
    if (this.canvas.width !== cssWidth * dpr || this.canvas.height !== cssHeight * dpr) {
      this.canvas.width = cssWidth * dpr;
      this.canvas.height = cssHeight * dpr;
    }
    ctx.setTransform(dpr, 0, 0, dpr, 0, 0);

    const active = this.state.mode === "history" ? this.historyBuffer : this.buffer;
    if (active === null || this.session === null) {
      ctx.clearRect(0, 0, cssWidth, cssHeight);
      return;
    }
    if (this.state.paused && this.state.mode === "live") {
      return; // freeze the last frame
    }
    const series = active.render(cssWidth);
    const windowS = this.state.mode === "history" ? active.windowSeconds : this.state.windowS;
    const tEnd = active.newestT() ?? 0;
    const layout = computeLayout(series, cssWidth, cssHeight, windowS, tEnd);
    drawChart(ctx, series, layout, 4 / this.session.sample_rate_hz);
  }

  private renderChrome(): void {
    this.statusEl.textContent = this.state.streamStatus;
    this.statusEl.dataset.status = this.state.streamStatus;

    const v = this.state.vitals;
    if (v === null) {
      this.vitalsEl.textContent = "-- bpm";
    } else {
      const bpm = v.bpm === null ? "--" : v.bpm.toFixed(0);
      this.vitalsEl.textContent =
        `${bpm} bpm · conf ${v.confidence.toFixed(2)} · quality ${v.quality.score.toFixed(2)}`;
    }

    this.pauseBtn.textContent = this.state.paused ? "resume" : "pause";
    this.liveBtn.classList.toggle("active", this.state.mode === "live");
    this.historyBtn.classList.toggle("active", this.state.mode === "history");

    this.noticeEl.textContent = this.state.notice ?? "";
    this.noticeEl.style.display = this.state.notice ? "block" : "none";

    this.alertsEl.replaceChildren();
    for (const alert of this.state.pendingAlerts) {
      const row = document.createElement("div");
      row.className = "alert-row";
      const label = document.createElement("span");
      const started = new Date(alert.start_ts_us / 1000).toLocaleTimeString();
      const ended = alert.end_ts_us === null
        ? "ongoing"
        : `ended ${new Date(alert.end_ts_us / 1000).toLocaleTimeString()}`;
      label.textContent = `${alert.kind} · started ${started} · ${ended}`;
      const btn = document.createElement("button");
      btn.textContent = "ack";
      btn.onclick = () => {
        this.api.ackAlert(alert.alert_id)
          .then(() => this.dispatch({ type: "alert-acked", alertId: alert.alert_id }))
          .catch((err) => this.dispatch({
            type: "ack-failed", alertId: alert.alert_id, error: String(err) }));
      };
      row.append(label, btn);
      this.alertsEl.append(row);
    }
    this.alertsEl.style.display = this.state.pendingAlerts.length > 0 ? "block" : "none";
  }
}

function fillSelect(
  select: HTMLSelectElement,
  options: Array<[string, string]>,
  selected: string,
): void {
  const previous = select.value;
  select.replaceChildren();
  for (const [value, label] of options) {
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = label;
    select.append(opt);
  }
  select.value = options.some(([v]) => v === selected) ? selected : previous;
}

if (typeof document !== "undefined" && document.getElementById("chart") !== null) {
  new App().start();
}
