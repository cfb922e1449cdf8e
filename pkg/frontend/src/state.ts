// View state as a pure reducer: every UI and stream event is an action.

import type { Alert, AlertEvent, Patient, SessionInfo, VitalsEvent } from "./types.js";
import type { StreamStatus } from "./stream.js";

export type Mode = "live" | "history";

export interface HistoryRange {
  fromUs: number;
  toUs: number;
}

export interface ViewState {
  patients: Patient[];
  sessions: SessionInfo[];
  selectedPatient: string | null;
  selectedSession: string | null;
  mode: Mode;
  windowS: number;
  paused: boolean;
  pendingAlerts: Alert[];
  historyRange: HistoryRange | null;
  streamStatus: StreamStatus | "idle";
  vitals: VitalsEvent | null;
  notice: string | null;
}

export const initialState: ViewState = {
  patients: [],
  sessions: [],
  selectedPatient: null,
  selectedSession: null,
  mode: "live",
  windowS: 5,
  paused: false,
  pendingAlerts: [],
  historyRange: null,
  streamStatus: "idle",
  vitals: null,
  notice: null,
};

export type Action =
  | { type: "patients-loaded"; patients: Patient[] }
  | { type: "sessions-loaded"; sessions: SessionInfo[] }
  | { type: "select-patient"; patientId: string | null }
  | { type: "select-session"; sessionId: string | null }
  | { type: "set-mode"; mode: Mode; range?: HistoryRange }
  | { type: "set-window"; windowS: number }
  | { type: "toggle-pause" }
  | { type: "alert-event"; alert: AlertEvent }
  | { type: "alerts-loaded"; alerts: Alert[] }
  | { type: "alert-acked"; alertId: string }
  | { type: "ack-failed"; alertId: string; error: string }
  | { type: "stream-status"; status: StreamStatus | "idle" }
  | { type: "vitals"; vitals: VitalsEvent }
  | { type: "notice"; text: string | null };

export function reduce(state: ViewState, action: Action): ViewState {
  switch (action.type) {
    case "patients-loaded":
      return { ...state, patients: action.patients };

    case "sessions-loaded":
      return { ...state, sessions: action.sessions };

    case "select-patient":
      return { ...state, selectedPatient: action.patientId };

    case "select-session":
      // a new session gets a fresh live view: no stale vitals or alerts
      return {
        ...state,
        selectedSession: action.sessionId,
        mode: "live",
        historyRange: null,
        pendingAlerts: [],
        vitals: null,
        streamStatus: action.sessionId === null ? "idle" : state.streamStatus,
        notice: null,
      };

    case "set-mode": {
      if (action.mode === "history") {
        const range = action.range ?? state.historyRange;
        if (range === null || range.fromUs > range.toUs) {
          // history requires a valid selected range; stay live
          return { ...state, notice: "history needs a valid time range" };
        }
        return { ...state, mode: "history", historyRange: range, notice: null };
      }
      return { ...state, mode: "live", notice: null };
    }

    case "set-window": {
      const windowS = Math.min(60, Math.max(1, action.windowS));
      return { ...state, windowS };
    }

    case "toggle-pause":
      return { ...state, paused: !state.paused };

    case "alert-event": {
      const { transition, ...alert } = action.alert;
      const existing = state.pendingAlerts.findIndex(
        (a) => a.alert_id === alert.alert_id,
      );
      if (transition === "opened") {
        if (existing >= 0) {
          return state;
        }
        return { ...state, pendingAlerts: [...state.pendingAlerts, alert] };
      }
      // closed: keep it pending (it still needs acknowledgment) but show
      // the end time
      if (existing < 0) {
        return { ...state, pendingAlerts: [...state.pendingAlerts, alert] };
      }
      const pendingAlerts = state.pendingAlerts.slice();
      pendingAlerts[existing] = alert;
      return { ...state, pendingAlerts };
    }

    case "alerts-loaded":
      return {
        ...state,
        pendingAlerts: action.alerts.filter((a) => !a.acknowledged),
      };

    case "alert-acked":
      return {
        ...state,
        pendingAlerts: state.pendingAlerts.filter(
          (a) => a.alert_id !== action.alertId,
        ),
      };

    case "ack-failed":
      // the alert stays pending; surface the failure
      return { ...state, notice: `acknowledge failed: ${action.error}` };

    case "stream-status":
      return { ...state, streamStatus: action.status };

    case "vitals":
      return { ...state, vitals: action.vitals };

    case "notice":
      return { ...state, notice: action.text };

    default:
      return state;
  }
}
