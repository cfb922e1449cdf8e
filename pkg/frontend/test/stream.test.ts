import { describe, expect, it } from "vitest";

import { SseParser, StreamClient, type StreamStatus } from "../src/stream.js";
import type { BatchEvent } from "../src/types.js";

function batchFrame(seq: number): string {
  const payload = {
    seq,
    start_ts_us: seq * 200_000,
    codes: [seq, seq + 1],
    flags: [0, 0],
  };
  return `event: batch\ndata: ${JSON.stringify(payload)}\n\n`;
}

function sseResponse(body: string, opts: { status?: number } = {}): Response {
  const stream = new ReadableStream<Uint8Array>({
    start(controller) {
      controller.enqueue(new TextEncoder().encode(body));
      controller.close();
    },
  });
  return new Response(stream, {
    status: opts.status ?? 200,
    headers: { "content-type": "text/event-stream" },
  });
}

describe("SseParser", () => {
  it("parses complete frames", () => {
    const parser = new SseParser();
    const frames = parser.feed("event: batch\ndata: {\"seq\":1}\n\n");
    expect(frames).toEqual([{ event: "batch", data: '{"seq":1}' }]);
  });

  it("reassembles frames split across arbitrary chunk boundaries", () => {
    const parser = new SseParser();
    const whole = batchFrame(0) + batchFrame(1);
    const collected = [];
    for (const chunk of [whole.slice(0, 7), whole.slice(7, 31), whole.slice(31)]) {
      collected.push(...parser.feed(chunk));
    }
    expect(collected).toHaveLength(2);
    expect(JSON.parse(collected[0].data).seq).toBe(0);
    expect(JSON.parse(collected[1].data).seq).toBe(1);
  });

  it("ignores keepalive comments", () => {
    const parser = new SseParser();
    expect(parser.feed(": keepalive\n\n")).toEqual([]);
    expect(parser.feed(": keepalive\n\n" + batchFrame(3))).toHaveLength(1);
  });

  it("handles CRLF line endings", () => {
    const parser = new SseParser();
    const frames = parser.feed("event: vitals\r\ndata: {}\r\n\r\n");
    expect(frames).toEqual([{ event: "vitals", data: "{}" }]);
  });
});

describe("StreamClient", () => {
  it("delivers batches and finishes on the end event", async () => {
    const body = batchFrame(0) + batchFrame(1) +
      'event: end\ndata: {"reason":"session closed"}\n\n';
    const seqs: number[] = [];
    let endReason = "";
    await new Promise<void>((resolve) => {
      const client = new StreamClient("http://x", "s1", {
        onBatch: (b: BatchEvent) => seqs.push(b.seq),
        onEnd: (reason) => {
          endReason = reason;
          resolve();
        },
      }, { fromSeq: 0, fetchFn: async () => sseResponse(body) });
      client.start();
    });
    expect(seqs).toEqual([0, 1]);
    expect(endReason).toBe("session closed");
  });

  it("reconnects after a drop and resumes from the next sequence", async () => {
    const calls: string[] = [];
    const fetchFn = async (url: string) => {
      calls.push(url);
      if (calls.length === 1) {
        // connection dies after three batches, no end event
        return sseResponse(batchFrame(0) + batchFrame(1) + batchFrame(2));
      }
      return sseResponse(batchFrame(3) + batchFrame(4) +
        'event: end\ndata: {"reason":"done"}\n\n');
    };
    const seqs: number[] = [];
    const statuses: StreamStatus[] = [];
    await new Promise<void>((resolve) => {
      const client = new StreamClient("http://x", "s1", {
        onBatch: (b) => seqs.push(b.seq),
        onStatus: (s) => statuses.push(s),
        onEnd: () => resolve(),
      }, { fromSeq: 0, reconnectDelayMs: 5, fetchFn });
      client.start();
    });
    expect(seqs).toEqual([0, 1, 2, 3, 4]);
    expect(calls[0]).toContain("from_seq=0");
    expect(calls[1]).toContain("from_seq=3");
    expect(statuses).toContain("reconnecting");
    expect(statuses[statuses.length - 1]).toBe("ended");
  });

  it("drops duplicate sequences after an overlap replay", async () => {
    const body = batchFrame(0) + batchFrame(1) + batchFrame(1) + batchFrame(2) +
      'event: end\ndata: {}\n\n';
    const seqs: number[] = [];
    await new Promise<void>((resolve) => {
      const client = new StreamClient("http://x", "s1", {
        onBatch: (b) => seqs.push(b.seq),
        onEnd: () => resolve(),
      }, { fromSeq: 0, fetchFn: async () => sseResponse(body) });
      client.start();
    });
    expect(seqs).toEqual([0, 1, 2]);
  });

  it("retries on an http error response", async () => {
    const calls: string[] = [];
    const fetchFn = async (url: string) => {
      calls.push(url);
      if (calls.length === 1) {
        return new Response("busy", { status: 503 });
      }
      return sseResponse(batchFrame(0) + 'event: end\ndata: {}\n\n');
    };
    const seqs: number[] = [];
    await new Promise<void>((resolve) => {
      const client = new StreamClient("http://x", "s1", {
        onBatch: (b) => seqs.push(b.seq),
        onEnd: () => resolve(),
      }, { fromSeq: 0, reconnectDelayMs: 5, fetchFn });
      client.start();
    });
    expect(seqs).toEqual([0]);
    expect(calls).toHaveLength(2);
  });

  it("omits from_seq when joining live only", async () => {
    const calls: string[] = [];
    await new Promise<void>((resolve) => {
      const client = new StreamClient("http://x", "s1", {
        onEnd: () => resolve(),
      }, {
        fetchFn: async (url: string) => {
          calls.push(url);
          return sseResponse('event: end\ndata: {}\n\n');
        },
      });
      client.start();
    });
    expect(calls[0]).not.toContain("from_seq");
  });

  it("stop() prevents further reconnect attempts", async () => {
    const calls: string[] = [];
    const client = new StreamClient("http://x", "s1", {}, {
      reconnectDelayMs: 5,
      fetchFn: async (url: string) => {
        calls.push(url);
        return sseResponse(batchFrame(calls.length - 1));
      },
    });
    client.start();
    await new Promise((res) => setTimeout(res, 30));
    client.stop();
    await new Promise((res) => setTimeout(res, 30));
    const after = calls.length;
    await new Promise((res) => setTimeout(res, 30));
    expect(calls.length).toBe(after);
  });
});
