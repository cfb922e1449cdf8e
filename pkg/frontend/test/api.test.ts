import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function fakeFetch(body: unknown, status = 200) {
  const calls: Call[] = [];
  const fn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  };
  return { calls, fn };
}

describe("ApiClient", () => {
  it("prefixes requests with the base url", async () => {
    const { calls, fn } = fakeFetch([]);
    const api = new ApiClient("http://host:9", fn);
    await api.listPatients();
    expect(calls[0].url).toBe("http://host:9/api/v1/patients");
  });

  it("filters sessions by patient with encoding", async () => {
    const { calls, fn } = fakeFetch([]);
    const api = new ApiClient("", fn);
    await api.listSessions("p one");
    expect(calls[0].url).toBe("/api/v1/sessions?patient_id=p%20one");
    await api.listSessions();
    expect(calls[1].url).toBe("/api/v1/sessions");
  });

  it("passes the sample range through as microseconds", async () => {
    const { calls, fn } = fakeFetch({ session_id: "s", samples: [] });
    const api = new ApiClient("", fn);
    await api.getSamples("s-1", 0, 4_000_000);
    expect(calls[0].url).toBe(
      "/api/v1/sessions/s-1/samples?from_us=0&to_us=4000000",
    );
  });

  it("acknowledges alerts with a POST", async () => {
    const { calls, fn } = fakeFetch({ acknowledged: true });
    const api = new ApiClient("", fn);
    await api.ackAlert("a-1");
    expect(calls[0].url).toBe("/api/v1/alerts/a-1/ack");
    expect(calls[0].init?.method).toBe("POST");
  });

  it("returns parsed health payloads", async () => {
    const { fn } = fakeFetch({ status: "ok" });
    const api = new ApiClient("", fn);
    expect(await api.health()).toEqual({ status: "ok" });
  });

  it("raises ApiError with the status on non-2xx responses", async () => {
    const { fn } = fakeFetch({ detail: "unknown session" }, 404);
    const api = new ApiClient("", fn);
    const err = await api.getSession("nope").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).message).toContain("/api/v1/sessions/nope");
  });
});
