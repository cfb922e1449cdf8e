// Thin typed client for the server's REST endpoints.

import type { Alert, Patient, SamplesResponse, SessionInfo } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private fetchFn: FetchLike;

  constructor(private baseUrl = "", fetchFn?: FetchLike) {
    // wrap so the global fetch keeps its expected receiver
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = await resp.text();
      } catch {
        // keep statusText
      }
      throw new ApiError(resp.status, `${path}: ${detail}`);
    }
    return resp.json() as Promise<T>;
  }

  listPatients(): Promise<Patient[]> {
    return this.request("/api/v1/patients");
  }

  listSessions(patientId?: string): Promise<SessionInfo[]> {
    const query = patientId ? `?patient_id=${encodeURIComponent(patientId)}` : "";
    return this.request(`/api/v1/sessions${query}`);
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return this.request(`/api/v1/sessions/${sessionId}`);
  }

  getSamples(sessionId: string, fromUs: number, toUs: number): Promise<SamplesResponse> {
    return this.request(
      `/api/v1/sessions/${sessionId}/samples?from_us=${fromUs}&to_us=${toUs}`,
    );
  }

  getAlerts(sessionId: string): Promise<Alert[]> {
    return this.request(`/api/v1/sessions/${sessionId}/alerts`);
  }

  async ackAlert(alertId: string): Promise<void> {
    await this.request(`/api/v1/alerts/${alertId}/ack`, { method: "POST" });
  }

  health(): Promise<{ status: string }> {
    return this.request("/api/v1/health");
  }
}
