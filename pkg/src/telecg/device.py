"""Patient-side unit emulator.

Samples a signal source at a fixed rate, packs numbered batches, and pushes
them to the ingest server over HTTP. Transmission failures park batches in a
bounded ring buffer (drop-oldest) until the link recovers; retransmission
keeps the original seq and timestamps so replays are idempotent.

The device runs on a virtual clock derived from the sample index, so a
simulated minute takes milliseconds. `realtime=True` paces emission at the
actual sample rate for live demos.
"""

from __future__ import annotations

import random
import re
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import httpx
import numpy as np

from .signals import AdcConfig, SynthParams, generate_analog, quantize

BACKOFF_BASE_MS = 500
_DEVICE_ID_RE = re.compile(r"^[a-zA-Z0-9_-]{1,64}$")


class DeviceError(Exception):
    """Configuration or unrecoverable protocol failure."""


class TransportError(Exception):
    """Network-level send failure; the batch stays buffered for retry."""


@dataclass(frozen=True)
class DeviceConfig:
    device_id: str
    server_url: str
    sample_rate_hz: int = 250
    batch_size: int = 50
    buffer_capacity: int = 0  # samples; 0 means 60 s worth
    max_backoff_ms: int = 30_000

    def __post_init__(self):
        if not _DEVICE_ID_RE.match(self.device_id):
            raise DeviceError(
                f"device_id must be 1-64 chars of [a-zA-Z0-9_-], got {self.device_id!r}")
        if not isinstance(self.sample_rate_hz, int) or self.sample_rate_hz <= 0:
            raise DeviceError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        if not isinstance(self.batch_size, int) or self.batch_size <= 0:
            raise DeviceError(f"batch_size must be a positive integer, got {self.batch_size}")
        if self.buffer_capacity == 0:
            object.__setattr__(self, "buffer_capacity", 60 * self.sample_rate_hz)
        if self.buffer_capacity < self.batch_size:
            raise DeviceError(
                f"buffer_capacity {self.buffer_capacity} cannot hold one batch of {self.batch_size}")
        if self.max_backoff_ms <= 0:
            raise DeviceError(f"max_backoff_ms must be positive, got {self.max_backoff_ms}")


@dataclass(frozen=True)
class SampleBatch:
    session_id: str
    seq: int
    start_ts_us: int
    sample_rate_hz: int
    codes: Sequence[int]
    flags: Sequence[int]

    def __post_init__(self):
        if len(self.codes) != len(self.flags) or len(self.codes) == 0:
            raise DeviceError("codes and flags must be equal-length and nonempty")
        if not 0 <= self.seq < 2**32:
            raise DeviceError(f"seq out of u32 range: {self.seq}")


@dataclass
class TransmitReport:
    batches_sent: int = 0
    batches_dropped: int = 0
    retries: int = 0
    duration_s: float = 0.0
    session_id: str = ""
    samples_sent: int = 0

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "batches_sent": self.batches_sent,
            "batches_dropped": self.batches_dropped,
            "retries": self.retries,
            "samples_sent": self.samples_sent,
            "duration_s": self.duration_s,
        }


@dataclass(frozen=True)
class ReplaySource:
    """Pre-recorded codes/flags re-emitted as if sampled live."""

    codes: Sequence[int]
    flags: Sequence[int]

    def __post_init__(self):
        if len(self.codes) != len(self.flags):
            raise DeviceError("replay codes and flags must be equal length")


@dataclass(frozen=True)
class BatchAck:
    accepted: bool
    next_expected_seq: int
    duplicate: bool = False
    gap: bool = False


class IngestTransport(Protocol):
    def create_session(self, *, device_id: str, patient_id: str,
                       sample_rate_hz: int, adc: AdcConfig) -> str: ...

    def send_batch(self, batch: SampleBatch) -> BatchAck: ...

    def close(self) -> None: ...


class HttpTransport:
    """httpx-backed client for the ingest wire protocol."""

    def __init__(self, server_url: str, timeout_s: float = 5.0):
        self._client = httpx.Client(base_url=server_url.rstrip("/"), timeout=timeout_s)

    def create_session(self, *, device_id, patient_id, sample_rate_hz, adc) -> str:
        try:
            resp = self._client.post("/api/v1/sessions", json={
                "device_id": device_id,
                "patient_id": patient_id,
                "sample_rate_hz": sample_rate_hz,
                "adc": adc.to_dict(),
            })
        except httpx.HTTPError as exc:
            raise TransportError(f"session create failed: {exc}") from exc
        if resp.status_code != 201:
            raise DeviceError(
                f"session rejected ({resp.status_code}): {resp.text.strip()}")
        return resp.json()["session_id"]

    def send_batch(self, batch: SampleBatch) -> BatchAck:
        body = {
            "seq": batch.seq,
            "start_ts_us": batch.start_ts_us,
            "codes": [int(c) for c in batch.codes],
            "flags": [int(f) for f in batch.flags],
        }
        try:
            resp = self._client.post(
                f"/api/v1/sessions/{batch.session_id}/batches", json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"batch {batch.seq} send failed: {exc}") from exc
        if resp.status_code == 200:
            data = resp.json()
            return BatchAck(accepted=True,
                            next_expected_seq=data["next_expected_seq"],
                            duplicate=data["next_expected_seq"] > batch.seq + 1)
        if resp.status_code == 409:
            data = resp.json()
            return BatchAck(accepted=False,
                            next_expected_seq=data["next_expected_seq"], gap=True)
        if resp.status_code in (404, 422):
            raise DeviceError(
                f"batch {batch.seq} rejected ({resp.status_code}): {resp.text.strip()}")
        raise TransportError(f"batch {batch.seq}: unexpected status {resp.status_code}")

    def close(self) -> None:
        self._client.close()


def backoff_delay(attempt: int, max_ms: int, rng: Optional[random.Random] = None) -> float:
    """Exponential backoff in ms: min(500 * 2^attempt, max_ms) plus 0-10% jitter."""
    if attempt < 0:
        raise DeviceError(f"attempt must be >= 0, got {attempt}")
    base = min(BACKOFF_BASE_MS * (2 ** attempt), max_ms)
    jitter = (rng or random).uniform(0.0, 0.1 * base)
    return base + jitter


def build_batch(pending: deque, session_id: str, seq: int, rate: int,
                batch_size: int) -> Optional[SampleBatch]:
    """Pop up to batch_size (ts, code, flag) tuples off the queue front.

    Returns None on an empty queue. start_ts_us is the first sample's
    timestamp; codes[i] stays aligned with flags[i] across any split.
    """
    if not pending:
        return None
    take = min(batch_size, len(pending))
    ts0 = pending[0][0]
    codes, flags = [], []
    for _ in range(take):
        _, code, flag = pending.popleft()
        codes.append(code)
        flags.append(flag)
    return SampleBatch(session_id=session_id, seq=seq, start_ts_us=ts0,
                       sample_rate_hz=rate, codes=codes, flags=flags)


class _RingBuffer:
    """Outage buffer holding whole batches, bounded by total sample count.

    Overflow drops the oldest batches first; monitoring favors recency over
    history, and drops are counted rather than silently absorbed.
    """

    def __init__(self, capacity_samples: int):
        self.capacity = capacity_samples
        self._batches: deque[SampleBatch] = deque()
        self._samples = 0
        self.dropped_batches = 0

    def __len__(self):
        return len(self._batches)

    @property
    def sample_count(self) -> int:
        return self._samples

    def push(self, batch: SampleBatch) -> None:
        while self._batches and self._samples + len(batch.codes) > self.capacity:
            old = self._batches.popleft()
            self._samples -= len(old.codes)
            self.dropped_batches += 1
        self._batches.append(batch)
        self._samples += len(batch.codes)

    def peek(self) -> Optional[SampleBatch]:
        return self._batches[0] if self._batches else None

    def pop(self) -> SampleBatch:
        batch = self._batches.popleft()
        self._samples -= len(batch.codes)
        return batch

    def drain_all(self) -> int:
        """Discard everything; returns the number of batches thrown away.

        Unlike overflow drops these are not added to dropped_batches; the
        caller accounts for them directly.
        """
        n = len(self._batches)
        self._batches.clear()
        self._samples = 0
        return n


def _materialize(source, cfg: DeviceConfig, duration_s: float, adc: AdcConfig):
    """Turn the signal source into aligned code/flag arrays."""
    if isinstance(source, SynthParams):
        trace = generate_analog(source, cfg.sample_rate_hz, duration_s, adc=adc)
        codes = np.asarray(quantize(trace.value_mv, adc), dtype=np.int64)
        return codes.tolist(), trace.lead_state.tolist()
    if isinstance(source, ReplaySource):
        n = int(cfg.sample_rate_hz * duration_s)
        n = min(n, len(source.codes)) if duration_s > 0 else len(source.codes)
        return ([int(c) for c in source.codes[:n]],
                [int(f) for f in source.flags[:n]])
    raise DeviceError(f"unsupported source type: {type(source).__name__}")


def run_device(
    cfg: DeviceConfig,
    source,
    duration_s: float,
    *,
    patient_id: str = "unassigned",
    adc: Optional[AdcConfig] = None,
    transport: Optional[IngestTransport] = None,
    epoch_us: Optional[int] = None,
    realtime: bool = False,
    drain_timeout_s: float = 30.0,
    rng: Optional[random.Random] = None,
    sleep=time.sleep,
) -> TransmitReport:
    """Run one simulated device end to end and return its transmit report.

    Opens a session, emits floor(rate * duration) samples in contiguous
    batches, then drains whatever the outages left buffered, retrying with
    exponential backoff until `drain_timeout_s` of wall time elapses.
    """
    adc = adc or AdcConfig()
    rng = rng or random.Random()
    owns_transport = transport is None
    if transport is None:
        transport = HttpTransport(cfg.server_url)
    started = time.monotonic()
    report = TransmitReport()

    try:
        session_id = transport.create_session(
            device_id=cfg.device_id, patient_id=patient_id,
            sample_rate_hz=cfg.sample_rate_hz, adc=adc)
        report.session_id = session_id

        codes, flags = _materialize(source, cfg, duration_s, adc)
        if epoch_us is None:
            epoch_us = time.time_ns() // 1000
        rate = cfg.sample_rate_hz
        pending = deque(
            (epoch_us + (i * 1_000_000 + rate // 2) // rate, codes[i], flags[i])
            for i in range(len(codes)))

        buffer = _RingBuffer(cfg.buffer_capacity)
        seq = 0
        attempted = set()  # seqs tried at least once, for the retry count
        stream_broken = False

        def try_send_oldest() -> bool:
            """One attempt at the buffer head. True if the buffer shrank."""
            nonlocal stream_broken
            head = buffer.peek()
            if head is None:
                return False
            if head.seq in attempted:
                report.retries += 1
            attempted.add(head.seq)
            try:
                ack = transport.send_batch(head)
            except TransportError:
                return False
            if ack.accepted:
                buffer.pop()
                report.batches_sent += 1
                report.samples_sent += len(head.codes)
                return True
            if ack.gap and ack.next_expected_seq < head.seq:
                # The server wants a batch that overflow already discarded.
                # That gap can never be filled, so the rest of the stream is
                # undeliverable; count it as dropped and stop sending.
                stream_broken = True
                report.batches_dropped += buffer.drain_all()
                return False
            return False

        # Emission phase: one transmit attempt per produced batch, no sleeps;
        # the virtual clock means outages cost nothing but buffer space.
        while pending:
            batch = build_batch(pending, session_id, seq, rate, cfg.batch_size)
            seq += 1
            if stream_broken:
                report.batches_dropped += 1
                continue
            buffer.push(batch)
            while try_send_oldest():
                pass
            if realtime:
                sleep(len(batch.codes) / rate)

        # Drain phase: real backoff sleeps until the buffer empties, the
        # stream breaks, or the wall-clock budget runs out.
        attempt = 0
        drain_deadline = time.monotonic() + drain_timeout_s
        while len(buffer) and not stream_broken:
            if try_send_oldest():
                attempt = 0
                continue
            if stream_broken:
                break
            if time.monotonic() >= drain_deadline:
                report.batches_dropped += buffer.drain_all()
                break
            sleep(backoff_delay(attempt, cfg.max_backoff_ms, rng) / 1000.0)
            attempt += 1

        report.batches_dropped += buffer.dropped_batches
        report.duration_s = time.monotonic() - started
        return report
    finally:
        if owns_transport:
            transport.close()
