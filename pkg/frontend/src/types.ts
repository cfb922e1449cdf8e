// Wire types for the telecg HTTP API, plus code -> millivolt conversion.

export interface AdcConfig {
  vref_v: number;
  bits: number;
  baseline_v: number;
}

export interface Patient {
  patient_id: string;
  display_name: string;
}

export interface SessionInfo {
  session_id: string;
  device_id: string;
  patient_id: string;
  sample_rate_hz: number;
  adc: AdcConfig;
  state: string;
  last_seq_accepted: number;
  created_ts_us: number | null;
}

// One stored sample: [ts_us, code, flags]
export type Sample = [number, number, number];

export interface SamplesResponse {
  sample_rate_hz: number;
  adc: AdcConfig;
  samples: Sample[];
}

export interface Alert {
  alert_id: string;
  session_id: string;
  kind: string;
  start_ts_us: number;
  end_ts_us: number | null;
  acknowledged: boolean;
}

export interface BatchEvent {
  seq: number;
  start_ts_us: number;
  codes: number[];
  flags: number[];
}

export interface AlertEvent extends Alert {
  transition: "opened" | "closed";
}

export interface VitalsEvent {
  ts_us: number;
  bpm: number | null;
  confidence: number;
  quality: {
    window_start_us: number;
    window_len_s: number;
    in_range_fraction: number;
    flatline_fraction: number;
    lead_off_fraction: number;
    score: number;
  };
}

// Either lead electrode detached (LO+ is bit 0, LO- is bit 1).
export const LEAD_OFF_MASK = 0x3;

// Mid-tread reconstruction; must match the server exactly so rendered
// values carry no client-side rescaling drift.
export function dequantizeMv(code: number, adc: AdcConfig): number {
  return (((code + 0.5) / Math.pow(2, adc.bits)) * adc.vref_v - adc.baseline_v) * 1000;
}

export function lsbMv(adc: AdcConfig): number {
  return (adc.vref_v / Math.pow(2, adc.bits)) * 1000;
}
