"""Ingest backend: sessions, patient registry, live fan-out, alert state.

Pure library layer. The HTTP server is a thin shell over this; everything
here is driven by plain method calls so the protocol semantics are testable
without sockets.

Concurrency: per-session ingestion is serialized by a session lock (one
writer per device connection), reads snapshot under the same lock, and the
patient registry uses a readers-writer lock. Stream fan-out never blocks
ingestion: each subscriber owns a bounded queue and is disconnected with a
notice if it falls more than the bound behind.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .analytics import SessionAnalytics
from .signals import AdcConfig, SignalError
from .store import SegmentMeta, WaveformStore

log = logging.getLogger("telecg.backend")

MIN_RATE_HZ = 50
MAX_RATE_HZ = 2000
DEFAULT_QUEUE_BOUND = 256


class BackendError(Exception):
    pass


class NotFoundError(BackendError):
    pass


class ValidationFailure(BackendError):
    pass


class SequenceGap(BackendError):
    """Batch seq skipped ahead; carries the ack the device needs to resend."""

    def __init__(self, next_expected_seq: int, reason: str = "sequence gap"):
        super().__init__(reason)
        self.next_expected_seq = next_expected_seq
        self.reason = reason


class RWLock:
    """Readers-writer lock, writer-preferring enough for a registry."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class PatientRegistry:
    """Patient records in one human-readable JSON file, rewritten atomically."""

    def __init__(self, data_dir: Path):
        self._path = Path(data_dir) / "patients.json"
        self._lock = RWLock()
        self._patients: dict[str, dict] = {}
        if self._path.exists():
            self._patients = json.loads(self._path.read_text())

    def _persist(self) -> None:
        tmp = self._path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self._patients, indent=2, sort_keys=True))
        os.replace(tmp, self._path)

    def upsert(self, patient_id: str, display_name: str) -> dict:
        if not patient_id:
            raise ValidationFailure("patient_id must be nonempty")
        with self._lock.write():
            existing = self._patients.get(patient_id)
            record = {
                "patient_id": patient_id,
                "display_name": display_name,
                "created_ts_us": existing["created_ts_us"] if existing
                else time.time_ns() // 1000,
            }
            self._patients[patient_id] = record
            self._persist()
            return dict(record)

    def get(self, patient_id: str) -> dict:
        with self._lock.read():
            if patient_id not in self._patients:
                raise NotFoundError(f"unknown patient {patient_id!r}")
            return dict(self._patients[patient_id])

    def exists(self, patient_id: str) -> bool:
        with self._lock.read():
            return patient_id in self._patients

    def list(self) -> list[dict]:
        with self._lock.read():
            return sorted((dict(p) for p in self._patients.values()),
                          key=lambda p: p["created_ts_us"])


_OVERFLOW = object()
_END = object()


class Subscription:
    """One live-stream subscriber: a bounded queue plus any replay backlog."""

    def __init__(self, replay: list, bound: int):
        self._replay = replay
        self._queue: queue.Queue = queue.Queue(maxsize=bound)
        self._lock = threading.Lock()  # guards overflow marking
        self.overflowed = False

    def push(self, item) -> None:
        try:
            self._queue.put_nowait(item)
        except queue.Full:
            # Slow consumer: drop it rather than stall ingestion. Make room
            # so the wake-up sentinel always fits.
            with self._lock:
                if self.overflowed:
                    return
                self.overflowed = True
            try:
                self._queue.get_nowait()
            except queue.Empty:
                pass
            try:
                self._queue.put_nowait(_OVERFLOW)
            except queue.Full:
                pass

    def events(self, poll_s: float = 1.0):
        """Yield ("event_name", payload) pairs; None on poll timeout.

        Ends after a session close or overflow notice. The None ticks let
        the transport layer emit keepalives and notice disconnects.
        """
        for name, payload in self._replay:
            yield name, payload
        while True:
            try:
                item = self._queue.get(timeout=poll_s)
            except queue.Empty:
                yield None
                continue
            if item is _END:
                yield "end", {"reason": "session closed"}
                return
            if item is _OVERFLOW:
                yield "notice", {"reason": "subscriber overflow, disconnecting"}
                return
            yield item


class StreamHub:
    """Fan-out of one session's events to all its subscribers."""

    def __init__(self, bound: int):
        self._bound = bound
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []

    def attach(self, replay: list) -> Subscription:
        sub = Subscription(replay, self._bound)
        with self._lock:
            self._subs.append(sub)
        return sub

    def detach(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, name: str, payload: dict) -> None:
        with self._lock:
            subs = list(self._subs)
        dead = []
        for sub in subs:
            sub.push((name, payload))
            if sub.overflowed:
                dead.append(sub)
        for sub in dead:
            self.detach(sub)

    def close(self) -> None:
        with self._lock:
            subs = list(self._subs)
            self._subs.clear()
        for sub in subs:
            sub.push(_END)


def _batch_payload(seq: int, start_ts_us: int, codes, flags) -> dict:
    return {"seq": seq, "start_ts_us": start_ts_us,
            "codes": [int(c) for c in codes], "flags": [int(f) for f in flags]}


class SessionRuntime:
    """All mutable state of one recording session, behind one lock."""

    def __init__(self, backend: "Backend", info: dict, last_seq: int):
        self.backend = backend
        self.info = info  # session_id, device_id, patient_id, rate, adc, ...
        self.lock = threading.RLock()
        self.last_seq = last_seq
        self.state = info["state"]
        self.adc = AdcConfig.from_dict(info["adc"])
        self.hub = StreamHub(backend.queue_bound)
        self.analytics = SessionAnalytics(
            info["session_id"], info["sample_rate_hz"], self.adc)

    @property
    def session_id(self) -> str:
        return self.info["session_id"]

    def describe(self) -> dict:
        with self.lock:
            return {**self.info, "state": self.state,
                    "last_seq_accepted": self.last_seq}

    def ingest(self, seq: int, start_ts_us: int, codes, flags) -> dict:
        with self.lock:
            if self.state != "Active":
                raise SequenceGap(self.last_seq + 1, reason="session closed")
            if len(codes) != len(flags) or not codes:
                raise ValidationFailure("codes and flags must be equal length and nonempty")
            if any(not 0 <= int(c) <= self.adc.code_max for c in codes):
                raise ValidationFailure("code out of range")
            if any(not 0 <= int(f) <= 3 for f in flags):
                raise ValidationFailure("flags out of range")

            next_expected = self.last_seq + 1
            if seq < next_expected:
                return {"accepted": True, "next_expected_seq": next_expected}
            if seq > next_expected:
                raise SequenceGap(next_expected)

            # Durability before the ack and before anything observes the
            # batch: append (fsynced) first, then publish.
            self.backend.store.append(self.session_id, seq, start_ts_us,
                                      codes, flags)
            self.last_seq = seq

            rate = self.info["sample_rate_hz"]
            ts_list = [start_ts_us + (i * 1_000_000 + rate // 2) // rate
                       for i in range(len(codes))]
            transitions, vitals = self.analytics.on_batch(ts_list, codes, flags)

            self.hub.publish("batch", _batch_payload(seq, start_ts_us, codes, flags))
            for event, alert in transitions:
                self.hub.publish("alert", {"transition": event, **alert.to_dict()})
            if vitals is not None:
                self.hub.publish("vitals", vitals.to_dict())
            return {"accepted": True, "next_expected_seq": self.last_seq + 1}

    def query(self, from_us: int, to_us: int):
        if from_us > to_us:
            raise ValidationFailure(f"inverted range: {from_us} > {to_us}")
        result = self.backend.store.read_range(self.session_id, from_us, to_us)
        if result.corruption:
            log.warning("session %s: stored data ends early: %s",
                        self.session_id, result.corruption)
        return result.samples

    def subscribe(self, from_seq: Optional[int]) -> Subscription:
        with self.lock:
            replay = []
            if from_seq is not None and from_seq <= self.last_seq:
                scan = self.backend.store.read_records(self.session_id)
                replay = [("batch", _batch_payload(r.seq, r.start_ts_us,
                                                   r.codes, r.flags))
                          for r in scan.records if r.seq >= from_seq]
            if self.state != "Active":
                sub = self.hub.attach(replay)
                sub.push(_END)
                return sub
            return self.hub.attach(replay)

    def alerts(self) -> list[dict]:
        with self.lock:
            return [a.to_dict() for a in self.analytics.alerts]

    def ack_alert(self, alert_id: str) -> Optional[dict]:
        with self.lock:
            for alert in self.analytics.alerts:
                if alert.alert_id == alert_id:
                    alert.acknowledged = True
                    return alert.to_dict()
        return None

    def close(self) -> None:
        with self.lock:
            if self.state == "Closed":
                return
            self.state = "Closed"
            self.backend.store.close_segment(self.session_id)
            self.backend._mark_closed(self.session_id)
        self.hub.close()


class Backend:
    """Top-level service state: registry, store, and session table."""

    def __init__(self, data_dir, *, queue_bound: int = DEFAULT_QUEUE_BOUND):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.queue_bound = queue_bound
        self.store = WaveformStore(self.data_dir)
        self.registry = PatientRegistry(self.data_dir)
        self._sessions: dict[str, SessionRuntime] = {}
        self._lock = threading.Lock()
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        """Idempotent startup: recover sessions from whatever disk holds."""
        with self._lock:
            if self._started:
                return
            self._started = True
        recovered = self.store.recover()
        for session_id, rec in recovered.items():
            closed = self._closed_marker(session_id).exists()
            info = {
                "session_id": session_id,
                "device_id": rec.meta.device_id,
                "patient_id": rec.meta.patient_id,
                "sample_rate_hz": rec.meta.sample_rate_hz,
                "adc": dict(rec.meta.adc),
                "state": "Closed" if closed else "Active",
                "created_ts_us": None,
            }
            runtime = SessionRuntime(self, info, rec.last_seq)
            if not closed:
                self.store.open_segment(rec.meta, rec.last_seq)
            with self._lock:
                self._sessions[session_id] = runtime
            if rec.truncated_bytes:
                log.warning("session %s: dropped %d torn bytes during recovery",
                            session_id, rec.truncated_bytes)
        if recovered:
            log.info("recovered %d session(s)", len(recovered))

    def shutdown(self) -> None:
        self.store.close()

    def _closed_marker(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.closed"

    def _mark_closed(self, session_id: str) -> None:
        self._closed_marker(session_id).touch()

    # -- patients ----------------------------------------------------------

    def upsert_patient(self, patient_id: str, display_name: str) -> dict:
        return self.registry.upsert(patient_id, display_name)

    def list_patients(self) -> list[dict]:
        return self.registry.list()

    # -- sessions ----------------------------------------------------------

    def create_session(self, device_id: str, patient_id: str,
                       sample_rate_hz: int, adc: dict) -> dict:
        if not device_id:
            raise ValidationFailure("device_id must be nonempty")
        if not isinstance(sample_rate_hz, int) or \
                not MIN_RATE_HZ <= sample_rate_hz <= MAX_RATE_HZ:
            raise ValidationFailure(
                f"sample_rate_hz must be an integer in [{MIN_RATE_HZ}, {MAX_RATE_HZ}]")
        if not self.registry.exists(patient_id):
            raise NotFoundError(f"unknown patient {patient_id!r}")
        try:
            adc_cfg = AdcConfig.from_dict(adc)
        except (SignalError, KeyError, TypeError) as exc:
            raise ValidationFailure(f"invalid adc config: {exc}") from exc

        session_id = uuid.uuid4().hex
        info = {
            "session_id": session_id,
            "device_id": device_id,
            "patient_id": patient_id,
            "sample_rate_hz": sample_rate_hz,
            "adc": adc_cfg.to_dict(),
            "state": "Active",
            "created_ts_us": time.time_ns() // 1000,
        }
        self.store.create_segment(SegmentMeta(
            session_id=session_id, device_id=device_id, patient_id=patient_id,
            sample_rate_hz=sample_rate_hz, adc=adc_cfg.to_dict()))
        runtime = SessionRuntime(self, info, last_seq=-1)
        with self._lock:
            self._sessions[session_id] = runtime
        return runtime.describe()

    def _runtime(self, session_id: str) -> SessionRuntime:
        with self._lock:
            runtime = self._sessions.get(session_id)
        if runtime is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        return runtime

    def get_session(self, session_id: str) -> dict:
        return self._runtime(session_id).describe()

    def list_sessions(self, patient_id: Optional[str] = None) -> list[dict]:
        with self._lock:
            runtimes = list(self._sessions.values())
        rows = [r.describe() for r in runtimes
                if patient_id is None or r.info["patient_id"] == patient_id]
        rows.sort(key=lambda s: (s["created_ts_us"] or 0), reverse=True)
        return rows

    def ingest_batch(self, session_id: str, seq: int, start_ts_us: int,
                     codes, flags) -> dict:
        return self._runtime(session_id).ingest(seq, start_ts_us, codes, flags)

    def query_range(self, session_id: str, from_us: int, to_us: int):
        return self._runtime(session_id).query(from_us, to_us)

    def subscribe(self, session_id: str, from_seq: Optional[int]) -> Subscription:
        return self._runtime(session_id).subscribe(from_seq)

    def unsubscribe(self, session_id: str, sub: Subscription) -> None:
        try:
            self._runtime(session_id).hub.detach(sub)
        except NotFoundError:
            pass

    def close_session(self, session_id: str) -> None:
        self._runtime(session_id).close()

    # -- alerts ------------------------------------------------------------

    def session_alerts(self, session_id: str) -> list[dict]:
        return self._runtime(session_id).alerts()

    def ack_alert(self, alert_id: str) -> dict:
        with self._lock:
            runtimes = list(self._sessions.values())
        for runtime in runtimes:
            acked = runtime.ack_alert(alert_id)
            if acked is not None:
                return acked
        raise NotFoundError(f"unknown alert {alert_id!r}")

    def health(self) -> dict:
        return {"status": "ok"}
