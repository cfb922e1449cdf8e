// Server-sent-events client with sequence-aware resume.
//
// The browser EventSource cannot change its URL between reconnect attempts,
// so it cannot ask the server to replay from the last seen batch. This
// client reads the stream over fetch instead and reconnects with
// ?from_seq=<last+1>, which the server answers by replaying everything
// missed from storage before going live; a drop never leaves a gap.

import type { AlertEvent, BatchEvent, VitalsEvent } from "./types.js";

export interface SseFrame {
  event: string;
  data: string;
}

export class SseParser {
  private buf = "";
  private eventName = "";
  private dataLines: string[] = [];

  feed(chunk: string): SseFrame[] {
    this.buf += chunk;
    const frames: SseFrame[] = [];
    for (;;) {
      const nl = this.buf.indexOf("\n");
      if (nl < 0) {
        return frames;
      }
      let line = this.buf.slice(0, nl);
      this.buf = this.buf.slice(nl + 1);
      if (line.endsWith("\r")) {
        line = line.slice(0, -1);
      }
      if (line === "") {
        if (this.dataLines.length > 0) {
          frames.push({
            event: this.eventName || "message",
            data: this.dataLines.join("\n"),
          });
        }
        this.eventName = "";
        this.dataLines = [];
      } else if (line.startsWith(":")) {
        // comment / keepalive
      } else if (line.startsWith("event: ")) {
        this.eventName = line.slice("event: ".length);
      } else if (line.startsWith("data: ")) {
        this.dataLines.push(line.slice("data: ".length));
      }
    }
  }
}

export type StreamStatus = "connecting" | "live" | "reconnecting" | "ended";

export interface StreamHandlers {
  onBatch?: (batch: BatchEvent) => void;
  onAlert?: (alert: AlertEvent) => void;
  onVitals?: (vitals: VitalsEvent) => void;
  onEnd?: (reason: string) => void;
  onStatus?: (status: StreamStatus) => void;
}

export interface StreamOptions {
  // first connection replays from this seq; omit to join live only
  fromSeq?: number;
  reconnectDelayMs?: number;
  fetchFn?: (input: string, init?: RequestInit) => Promise<Response>;
}

const sleep = (ms: number) => new Promise<void>((res) => setTimeout(res, ms));

export class StreamClient {
  lastSeq = -1;
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private baseUrl: string,
    private sessionId: string,
    private handlers: StreamHandlers,
    private opts: StreamOptions = {},
  ) {}

  start(): void {
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private url(): string {
    let from: number | undefined;
    if (this.lastSeq >= 0) {
      from = this.lastSeq + 1;
    } else {
      from = this.opts.fromSeq;
    }
    const query = from === undefined ? "" : `?from_seq=${from}`;
    return `${this.baseUrl}/api/v1/sessions/${this.sessionId}/stream${query}`;
  }

  private async run(): Promise<void> {
    const fetchFn = this.opts.fetchFn ?? ((input: string, init?: RequestInit) => fetch(input, init));
    const delayMs = this.opts.reconnectDelayMs ?? 2000;
    let first = true;
    while (!this.stopped) {
      this.handlers.onStatus?.(first ? "connecting" : "reconnecting");
      first = false;
      try {
        this.controller = new AbortController();
        const resp = await fetchFn(this.url(), {
          signal: this.controller.signal,
          headers: { accept: "text/event-stream" },
        });
        if (!resp.ok || !resp.body) {
          throw new Error(`stream request failed: ${resp.status}`);
        }
        this.handlers.onStatus?.("live");
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { value, done } = await reader.read();
          if (done) {
            break;
          }
          for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
            if (this.dispatch(frame)) {
              return;
            }
          }
        }
        // stream closed without an end event: server went away, resume
      } catch {
        // network error: fall through to reconnect
      }
      if (this.stopped) {
        return;
      }
      await sleep(delayMs);
    }
  }

  // true = stream is finished for good
  private dispatch(frame: SseFrame): boolean {
    let payload: unknown;
    try {
      payload = JSON.parse(frame.data);
    } catch {
      return false;
    }
    switch (frame.event) {
      case "batch": {
        const batch = payload as BatchEvent;
        if (batch.seq > this.lastSeq) {
          this.lastSeq = batch.seq;
          this.handlers.onBatch?.(batch);
        }
        break;
      }
      case "alert":
        this.handlers.onAlert?.(payload as AlertEvent);
        break;
      case "vitals":
        this.handlers.onVitals?.(payload as VitalsEvent);
        break;
      case "end": {
        this.stopped = true;
        this.handlers.onStatus?.("ended");
        const reason = (payload as { reason?: string }).reason ?? "";
        this.handlers.onEnd?.(reason);
        return true;
      }
      case "notice":
        // server is about to drop us (e.g. consumer too slow); the read
        // loop will end and the reconnect path replays what we missed
        break;
      default:
        break;
    }
    return false;
  }
}
