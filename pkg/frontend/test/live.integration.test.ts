// End-to-end checks against a real server process: the viewer's stream
// pipeline must reproduce stored samples exactly, surface lead-off gaps,
// and survive a dropped connection without losing a batch.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtemp, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SeriesBuffer } from "../src/series.js";
import { StreamClient, type StreamStatus } from "../src/stream.js";
import { dequantizeMv, lsbMv, LEAD_OFF_MASK, type BatchEvent } from "../src/types.js";

const REPO_ROOT = fileURLToPath(new URL("../..", import.meta.url));
const PORT = 18000 + (process.pid % 2000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let dataDir: string;
let serverErr = "";

const api = new ApiClient(BASE);

function cleanEnv(): NodeJS.ProcessEnv {
  const env = { ...process.env };
  for (const key of Object.keys(env)) {
    if (key.startsWith("TELECG_")) {
      delete env[key];
    }
  }
  return env;
}

const sleep = (ms: number) => new Promise<void>((res) => setTimeout(res, ms));

async function waitFor<T>(
  probe: () => Promise<T | null>,
  timeoutMs: number,
  what: string,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const value = await probe().catch(() => null);
    if (value !== null) {
      return value;
    }
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}\nserver stderr:\n${serverErr}`);
    }
    await sleep(100);
  }
}

function waitForExit(child: ChildProcess, timeoutMs: number): Promise<number | null> {
  return new Promise((resolve) => {
    const timer = setTimeout(() => {
      child.kill("SIGKILL");
      resolve(null);
    }, timeoutMs);
    child.on("close", (code) => {
      clearTimeout(timer);
      resolve(code);
    });
  });
}

function runSimulate(extra: string[]): void {
  const result = spawnSync(
    "python3",
    ["-m", "telecg", "simulate", "--server", BASE, ...extra],
    { cwd: REPO_ROOT, env: cleanEnv(), encoding: "utf8", timeout: 60_000 },
  );
  expect(result.status, result.stderr).toBe(0);
}

beforeAll(async () => {
  dataDir = await mkdtemp(join(tmpdir(), "telecg-ui-"));
  server = spawn(
    "python3",
    ["-m", "telecg", "serve", "--listen", `127.0.0.1:${PORT}`, "--data", dataDir],
    { cwd: REPO_ROOT, env: cleanEnv(), stdio: ["ignore", "ignore", "pipe"] },
  );
  server.stderr?.on("data", (chunk: Buffer) => {
    serverErr += chunk.toString();
  });
  await waitFor(async () => {
    const health = await api.health();
    return health.status === "ok" ? health : null;
  }, 30_000, "server health");
});

afterAll(async () => {
  if (server && server.exitCode === null) {
    server.kill("SIGTERM");
    await waitForExit(server, 5_000);
  }
  if (dataDir) {
    await rm(dataDir, { recursive: true, force: true });
  }
});

describe("live viewer against a real server", () => {
  it("streams a session into the chart buffer byte-exact with storage", { timeout: 30_000 }, async () => {
    runSimulate([
      "--device-id", "ui-int-1", "--patient-id", "ui-patient",
      "--duration", "10", "--seed", "11", "--lead-off", "4:5:plus",
    ]);

    const session = await waitFor(async () => {
      const sessions = await api.listSessions();
      return sessions.find((s) => s.device_id === "ui-int-1") ?? null;
    }, 10_000, "session for ui-int-1");

    const buffer = new SeriesBuffer(session.adc, session.sample_rate_hz, 120);
    const seqs: number[] = [];
    const client = new StreamClient(BASE, session.session_id, {
      onBatch: (b: BatchEvent) => {
        seqs.push(b.seq);
        buffer.appendBatch(b.start_ts_us, b.codes, b.flags);
      },
    }, { fromSeq: 0, reconnectDelayMs: 500 });
    client.start();
    await waitFor(
      async () => (seqs.length >= 50 ? seqs.length : null),
      15_000, "50 replayed batches");
    client.stop();
    expect(seqs).toEqual([...Array(50).keys()]);

    const stored = await api.getSamples(session.session_id, 0, 2 ** 62);
    expect(stored.samples).toHaveLength(2500);
    const clear = stored.samples.filter(([, , f]) => (f & LEAD_OFF_MASK) === 0);
    expect(clear).toHaveLength(2250);

    // every clear stored sample appears in the chart buffer, within a
    // half-code of its dequantized value and on the exact timestamp
    const halfLsb = lsbMv(session.adc) / 2;
    const { t, mv } = buffer.values();
    expect(mv).toHaveLength(clear.length);
    for (let i = 0; i < clear.length; i++) {
      const [tsUs, code] = clear[i];
      expect(Math.abs(t[i] - tsUs / 1e6)).toBeLessThan(2e-6);
      expect(Math.abs(mv[i] - dequantizeMv(code, session.adc))).toBeLessThanOrEqual(halfLsb);
    }

    // the scheduled 4 s..5 s lead-off interval becomes one merged gap span
    // (timestamps are wall-clock, so measure relative to the first sample)
    const baseS = stored.samples[0][0] / 1e6;
    const spans = buffer.render(10_000).leadGapSpans;
    expect(spans).toHaveLength(1);
    expect(spans[0][0] - baseS).toBeCloseTo(4.0, 3);
    expect(spans[0][1] - baseS).toBeCloseTo(5.0, 3);
  });

  it("resumes after a dropped stream with no gap in sequences", { timeout: 30_000 }, async () => {
    const device = spawn(
      "python3",
      ["-m", "telecg", "simulate", "--server", BASE,
        "--device-id", "ui-int-2", "--patient-id", "ui-patient",
        "--duration", "8", "--seed", "12", "--realtime"],
      { cwd: REPO_ROOT, env: cleanEnv(), stdio: ["ignore", "ignore", "ignore"] },
    );

    try {
      const session = await waitFor(async () => {
        const sessions = await api.listSessions();
        return sessions.find((s) => s.device_id === "ui-int-2") ?? null;
      }, 10_000, "session for ui-int-2");

      const seqs: number[] = [];
      const statuses: StreamStatus[] = [];
      const urls: string[] = [];
      let expectedResumeSeq = -1;
      let conn = 0;

      // first connection passes ~10 batches through, then pretends the
      // network died for 2 s (the reconnect delay); the client must
      // reconnect and replay everything missed while it was down
      const severingFetch = async (input: string, init?: RequestInit): Promise<Response> => {
        urls.push(input);
        conn++;
        if (conn === 2) {
          expectedResumeSeq = seqs[seqs.length - 1] + 1;
        }
        const resp = await fetch(input, init);
        if (conn > 1 || !resp.body) {
          return resp;
        }
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        let seen = "";
        const severed = new ReadableStream<Uint8Array>({
          async pull(controller) {
            const { value, done } = await reader.read();
            if (done) {
              controller.close();
              return;
            }
            controller.enqueue(value);
            seen += decoder.decode(value, { stream: true });
            if ((seen.match(/event: batch/g) ?? []).length >= 10) {
              await reader.cancel();
              controller.close();
            }
          },
        });
        return new Response(severed, { status: resp.status, headers: resp.headers });
      };

      const client = new StreamClient(BASE, session.session_id, {
        onBatch: (b: BatchEvent) => seqs.push(b.seq),
        onStatus: (s: StreamStatus) => statuses.push(s),
      }, { fromSeq: 0, reconnectDelayMs: 2_000, fetchFn: severingFetch });
      client.start();

      await waitFor(
        async () => (seqs[seqs.length - 1] === 39 ? true : null),
        25_000, "all 40 batches after the drop");
      client.stop();

      expect(statuses).toContain("reconnecting");
      expect(urls.length).toBeGreaterThanOrEqual(2);
      const match = /from_seq=(\d+)/.exec(urls[1]);
      expect(match).not.toBeNull();
      expect(Number(match![1])).toBe(expectedResumeSeq);
      expect(seqs).toEqual([...Array(40).keys()]);
    } finally {
      await waitForExit(device, 15_000);
    }
  });
});
