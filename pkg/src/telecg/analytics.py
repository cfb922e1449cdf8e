"""Server-side derived signals: lead-off alerts, quality score, heart rate.

Everything here is computed twice in practice: incrementally on the ingest
path (streaming trackers) and on demand over stored ranges. Both paths run
the same code on the same samples, so they agree by construction; tests
feed different batch boundaries to prove chunking independence.
"""

from __future__ import annotations

import math
import uuid
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .signals import AdcConfig, dequantize

KIND_LEAD_OFF_PLUS = "LeadOffPlus"
KIND_LEAD_OFF_MINUS = "LeadOffMinus"
KIND_FLATLINE = "Flatline"
KIND_QUALITY_LOW = "QualityLow"

# Debounce: suppress transient contact noise without masking real detachment.
ALERT_OPEN_S = 0.25
ALERT_CLOSE_S = 1.0

# Beat detector pipeline constants.
SMOOTH_S = 0.025
INTEGRATE_S = 0.150
REFRACTORY_S = 0.200
THRESHOLD_FRACTION = 0.5
PEAK_EMA_ALPHA = 0.125
MIN_WINDOW_S = 2.0

# Quality scoring.
FLATLINE_RUN_S = 0.5
QUALITY_LOW_SCORE = 0.5
FLATLINE_ALERT_FRACTION = 0.5


class AnalyticsError(ValueError):
    pass


@dataclass
class Alert:
    alert_id: str
    session_id: str
    kind: str
    start_ts_us: int
    end_ts_us: Optional[int] = None
    acknowledged: bool = False

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "session_id": self.session_id,
            "kind": self.kind,
            "start_ts_us": self.start_ts_us,
            "end_ts_us": self.end_ts_us,
            "acknowledged": self.acknowledged,
        }


@dataclass(frozen=True)
class QualityReport:
    window_start_us: int
    window_len_s: float
    in_range_fraction: float
    flatline_fraction: float
    lead_off_fraction: float
    score: float

    def to_dict(self) -> dict:
        return {
            "window_start_us": self.window_start_us,
            "window_len_s": self.window_len_s,
            "in_range_fraction": self.in_range_fraction,
            "flatline_fraction": self.flatline_fraction,
            "lead_off_fraction": self.lead_off_fraction,
            "score": self.score,
        }


@dataclass(frozen=True)
class BeatEstimate:
    beat_ts_us: tuple
    bpm: float
    confidence: float

    def to_dict(self) -> dict:
        return {
            "beat_ts_us": list(self.beat_ts_us),
            "bpm": self.bpm,
            "confidence": self.confidence,
        }


def _new_alert(session_id: str, kind: str, start_ts_us: int) -> Alert:
    return Alert(alert_id=uuid.uuid4().hex, session_id=session_id,
                 kind=kind, start_ts_us=start_ts_us)


class LeadAlertTracker:
    """Streaming debounce over per-sample lead flags.

    An alert opens once a flag bit has persisted for ALERT_OPEN_S worth of
    consecutive samples (the open timestamp is the sample that crosses the
    threshold), and closes after ALERT_CLOSE_S of consecutive clear samples
    (the end timestamp is the first clear sample). One alert per polarity
    may be open at a time, so same-kind intervals never overlap.
    """

    _BITS = ((0x01, KIND_LEAD_OFF_PLUS), (0x02, KIND_LEAD_OFF_MINUS))

    def __init__(self, session_id: str, rate_hz: int):
        if rate_hz <= 0:
            raise AnalyticsError(f"rate must be positive, got {rate_hz}")
        self.session_id = session_id
        self.open_after = math.ceil(ALERT_OPEN_S * rate_hz)
        self.close_after = math.ceil(ALERT_CLOSE_S * rate_hz)
        self._state = {
            bit: {"kind": kind, "flag_run": 0, "clear_run": 0,
                  "first_clear_ts": 0, "open": None}
            for bit, kind in self._BITS
        }

    def update(self, ts_us: Sequence[int], flags: Sequence[int]):
        """Feed one batch; returns ("opened"|"closed", Alert) transitions."""
        transitions = []
        for ts, flag in zip(ts_us, flags):
            for bit, st in self._state.items():
                if flag & bit:
                    st["flag_run"] += 1
                    st["clear_run"] = 0
                    if st["open"] is None and st["flag_run"] == self.open_after:
                        st["open"] = _new_alert(self.session_id, st["kind"], ts)
                        transitions.append(("opened", st["open"]))
                else:
                    if st["clear_run"] == 0:
                        st["first_clear_ts"] = ts
                    st["clear_run"] += 1
                    st["flag_run"] = 0
                    if st["open"] is not None and st["clear_run"] == self.close_after:
                        st["open"].end_ts_us = st["first_clear_ts"]
                        transitions.append(("closed", st["open"]))
                        st["open"] = None
        return transitions


def scan_lead_alerts(ts_us: Sequence[int], flags: Sequence[int],
                     rate_hz: int, session_id: str = "scan"):
    """Recompute lead alerts over a whole stored range in one pass."""
    tracker = LeadAlertTracker(session_id, rate_hz)
    transitions = tracker.update(ts_us, flags)
    seen, alerts = set(), []
    for _, alert in transitions:
        if alert.alert_id not in seen:
            seen.add(alert.alert_id)
            alerts.append(alert)
    return alerts


def detect_beats_mv(mv: np.ndarray, ts_us: Sequence[int], rate_hz: int) -> BeatEstimate:
    """Energy-threshold beat detector over a millivolt trace.

    Smooth, first-difference, square, integrate over a 150 ms window, then
    pick peaks above half the running peak mean with a 200 ms refractory.
    The threshold adapts to amplitude, so scaling the input leaves the
    detections unchanged. This is a vital-sign estimator, not a clinical
    QRS detector.
    """
    n = len(mv)
    if n < MIN_WINDOW_S * rate_hz or n < 2:
        return BeatEstimate((), 0.0, 0.0)

    mv = np.asarray(mv, dtype=np.float64)
    smooth_w = max(1, round(SMOOTH_S * rate_hz))
    integ_w = max(1, round(INTEGRATE_S * rate_hz))
    # Replicate the edges before convolving; zero padding would fake a
    # step at each boundary and the detector would read it as a beat.
    pad = smooth_w + integ_w
    padded = np.pad(mv, pad, mode="edge")
    smoothed = np.convolve(padded, np.ones(smooth_w) / smooth_w, mode="same")
    energy = np.square(np.diff(smoothed, prepend=smoothed[0]))
    integrated = np.convolve(energy, np.ones(integ_w) / integ_w, mode="same")[pad:-pad]

    init_n = min(n, int(MIN_WINDOW_S * rate_hz))
    peak_mean = float(np.max(integrated[:init_n]))
    refractory = max(1, round(REFRACTORY_S * rate_hz))

    beat_idx = []
    i = 0
    while i < n:
        threshold = THRESHOLD_FRACTION * peak_mean
        if integrated[i] > threshold:
            j = i
            while j + 1 < n and integrated[j + 1] > threshold:
                j += 1
            peak = i + int(np.argmax(integrated[i:j + 1]))
            if not beat_idx or peak - beat_idx[-1] >= refractory:
                beat_idx.append(peak)
                peak_mean = ((1 - PEAK_EMA_ALPHA) * peak_mean
                             + PEAK_EMA_ALPHA * float(integrated[peak]))
            i = j + 1
        else:
            i += 1

    beat_ts = tuple(int(ts_us[k]) for k in beat_idx)
    if len(beat_ts) < 2:
        return BeatEstimate(beat_ts, 0.0, 0.0)

    span_s = (beat_ts[-1] - beat_ts[0]) / 1e6
    bpm = 60.0 * (len(beat_ts) - 1) / span_s if span_s > 0 else 0.0

    if len(beat_ts) >= 3:
        rr = np.diff(np.asarray(beat_ts, dtype=np.float64))
        cv = float(np.std(rr) / np.mean(rr)) if np.mean(rr) > 0 else 1.0
        confidence = max(0.0, min(1.0, 1.0 - cv))
    else:
        confidence = 0.5
    return BeatEstimate(beat_ts, bpm, confidence)


def detect_beats(samples: Sequence, rate_hz: int, adc: AdcConfig) -> BeatEstimate:
    """Beat detection over stored (ts_us, code, flags) samples."""
    if not samples:
        return BeatEstimate((), 0.0, 0.0)
    codes = np.asarray([s[1] for s in samples], dtype=np.int64)
    ts = [s[0] for s in samples]
    return detect_beats_mv(dequantize(codes, adc), ts, rate_hz)


def _flatline_mask(codes: np.ndarray, min_run: int) -> np.ndarray:
    """True for samples inside a run of >= min_run identical codes."""
    n = len(codes)
    mask = np.zeros(n, dtype=bool)
    start = 0
    for i in range(1, n + 1):
        if i == n or codes[i] != codes[start]:
            if i - start >= min_run:
                mask[start:i] = True
            start = i
    return mask


def quality_window(samples: Sequence, rate_hz: int, window_len_s: float,
                   adc: AdcConfig) -> QualityReport:
    """Score one window of stored samples.

    in_range counts codes strictly inside the ADC rails; flatline counts
    samples inside runs of identical codes at least FLATLINE_RUN_S long;
    lead_off counts samples with any flag bit. The score is the product of
    the three healthy fractions, so each defect independently gates it.
    """
    if not samples:
        raise AnalyticsError("quality window must be nonempty")
    codes = np.asarray([s[1] for s in samples], dtype=np.int64)
    flags = np.asarray([s[2] for s in samples], dtype=np.int64)
    n = len(codes)

    in_range = float(np.count_nonzero((codes > 0) & (codes < adc.code_max)) / n)
    min_run = math.ceil(FLATLINE_RUN_S * rate_hz)
    flatline = float(np.count_nonzero(_flatline_mask(codes, min_run)) / n)
    lead_off = float(np.count_nonzero(flags != 0) / n)
    score = in_range * (1.0 - flatline) * (1.0 - lead_off)
    return QualityReport(
        window_start_us=int(samples[0][0]),
        window_len_s=window_len_s,
        in_range_fraction=in_range,
        flatline_fraction=flatline,
        lead_off_fraction=lead_off,
        score=score,
    )


@dataclass
class Vitals:
    ts_us: int
    bpm: float
    confidence: float
    quality: QualityReport

    def to_dict(self) -> dict:
        return {
            "ts_us": self.ts_us,
            "bpm": self.bpm,
            "confidence": self.confidence,
            "quality": self.quality.to_dict(),
        }


class SessionAnalytics:
    """Per-session streaming analytics driven by the ingest path.

    Single writer (the session's ingest thread). Produces alert
    transitions immediately and a vitals snapshot every
    `vitals_interval_s` of stream time over a rolling window.

    Quality-based alerts (Flatline, QualityLow) are only evaluated on
    windows free of lead-off flags: detachment already raises its own
    alert, and the rail-pinned signal would just echo it.
    """

    def __init__(self, session_id: str, rate_hz: int, adc: AdcConfig, *,
                 vitals_window_s: float = 10.0, vitals_interval_s: float = 2.0,
                 quality_window_s: float = 2.0):
        self.session_id = session_id
        self.rate_hz = rate_hz
        self.adc = adc
        self.quality_window_s = quality_window_s
        self.vitals_interval_us = int(vitals_interval_s * 1e6)
        self.lead_tracker = LeadAlertTracker(session_id, rate_hz)
        self.alerts: list[Alert] = []
        self._window: deque = deque(maxlen=int(vitals_window_s * rate_hz))
        self._quality_n = int(quality_window_s * rate_hz)
        self._last_vitals_ts: Optional[int] = None
        self._open_quality: dict[str, Alert] = {}

    def on_batch(self, ts_us: Sequence[int], codes: Sequence[int],
                 flags: Sequence[int]):
        """Feed one accepted batch; returns (transitions, vitals-or-None)."""
        transitions = self.lead_tracker.update(ts_us, flags)
        for event, alert in transitions:
            if event == "opened":
                self.alerts.append(alert)

        for ts, code, flag in zip(ts_us, codes, flags):
            self._window.append((ts, code, flag))

        newest = int(ts_us[-1])
        if self._last_vitals_ts is None:
            self._last_vitals_ts = int(ts_us[0])
        vitals = None
        if newest - self._last_vitals_ts >= self.vitals_interval_us:
            self._last_vitals_ts = newest
            vitals = self._evaluate(newest, transitions)
        return transitions, vitals

    def _evaluate(self, ts_us: int, transitions: list) -> Vitals:
        window = list(self._window)
        beats = detect_beats(window, self.rate_hz, self.adc)
        tail = window[-self._quality_n:]
        quality = quality_window(tail, self.rate_hz,
                                 len(tail) / self.rate_hz, self.adc)

        if quality.lead_off_fraction == 0.0:
            self._gate(KIND_FLATLINE,
                       quality.flatline_fraction >= FLATLINE_ALERT_FRACTION,
                       quality.window_start_us, ts_us, transitions)
            self._gate(KIND_QUALITY_LOW,
                       quality.score < QUALITY_LOW_SCORE,
                       quality.window_start_us, ts_us, transitions)
        return Vitals(ts_us=ts_us, bpm=beats.bpm,
                      confidence=beats.confidence, quality=quality)

    def _gate(self, kind: str, bad: bool, window_start_us: int,
              now_us: int, transitions: list) -> None:
        open_alert = self._open_quality.get(kind)
        if bad and open_alert is None:
            alert = _new_alert(self.session_id, kind, window_start_us)
            self._open_quality[kind] = alert
            self.alerts.append(alert)
            transitions.append(("opened", alert))
        elif not bad and open_alert is not None:
            open_alert.end_ts_us = now_us
            transitions.append(("closed", open_alert))
            del self._open_quality[kind]
