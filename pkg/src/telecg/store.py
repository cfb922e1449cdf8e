"""Append-only segment files for recorded sessions.

One binary file per session under the data directory, named
``<session_id>.tecg``. A file is a fixed header followed by a sequence of
batch records, each protected by its own CRC32 so that recovery after a
crash can keep the longest valid prefix and drop a torn tail.

Layout (all integers little-endian):

    header:  magic "TECG" | version u16 | meta_len u32 | meta (JSON, UTF-8)
    record:  seq u32 | start_ts_us u64 | count u16
             | codes count*u16 | flags count*u8 | crc32 u32

The CRC covers every record byte that precedes it. Codes are stored in
16-bit cells regardless of ADC resolution; bits above the session's ADC
width must be zero.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

MAGIC = b"TECG"
VERSION = 1
_HEADER_FIXED = struct.Struct("<4sHI")
_RECORD_PREFIX = struct.Struct("<IQH")
_CRC = struct.Struct("<I")

SEGMENT_SUFFIX = ".tecg"


class StoreError(Exception):
    """Storage failure or contract violation."""


class SeqRegressionError(StoreError):
    """Append attempted with a sequence number that is not last + 1."""


@dataclass(frozen=True)
class SegmentMeta:
    session_id: str
    device_id: str
    patient_id: str
    sample_rate_hz: int
    adc: dict  # {vref_v, bits, baseline_v}

    def to_json(self) -> bytes:
        return json.dumps(
            {
                "session_id": self.session_id,
                "device_id": self.device_id,
                "patient_id": self.patient_id,
                "sample_rate_hz": self.sample_rate_hz,
                "adc": self.adc,
            },
            sort_keys=True,
        ).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> "SegmentMeta":
        d = json.loads(raw.decode("utf-8"))
        return cls(
            session_id=d["session_id"],
            device_id=d["device_id"],
            patient_id=d["patient_id"],
            sample_rate_hz=int(d["sample_rate_hz"]),
            adc=d["adc"],
        )


@dataclass
class Record:
    seq: int
    start_ts_us: int
    codes: list[int]
    flags: list[int]


def sample_ts_us(start_ts_us: int, i: int, rate_hz: int) -> int:
    """Timestamp of the i-th sample after start: start + i * 10^6/rate, nearest us."""
    return start_ts_us + (i * 1_000_000 + rate_hz // 2) // rate_hz


def encode_record(rec: Record) -> bytes:
    count = len(rec.codes)
    if count < 1:
        raise StoreError("record must hold at least one sample")
    if count != len(rec.flags):
        raise StoreError("codes and flags lengths differ")
    if count > 0xFFFF:
        raise StoreError("record too large for 16-bit count")
    body = _RECORD_PREFIX.pack(rec.seq, rec.start_ts_us, count)
    body += struct.pack(f"<{count}H", *rec.codes)
    body += bytes(rec.flags)
    return body + _CRC.pack(zlib.crc32(body))


def encode_header(meta: SegmentMeta) -> bytes:
    blob = meta.to_json()
    return _HEADER_FIXED.pack(MAGIC, VERSION, len(blob)) + blob


@dataclass
class ScanResult:
    meta: SegmentMeta | None
    records: list[Record]
    valid_end: int  # byte offset of the end of the last valid record
    corruption: str | None  # set when the file held a torn or corrupt tail

    @property
    def last_seq(self) -> int:
        return self.records[-1].seq if self.records else -1


def scan_segment(path: Path, collect: bool = True) -> ScanResult:
    """Walk a segment file, validating every record CRC in order.

    Stops at the first torn or corrupt record; everything before it is the
    valid prefix. With collect=False only offsets and the last seq are
    tracked (recovery does not need the payloads).
    """
    records: list[Record] = []
    last: Record | None = None
    with open(path, "rb") as f:
        head = f.read(_HEADER_FIXED.size)
        if len(head) < _HEADER_FIXED.size:
            raise StoreError(f"{path.name}: truncated header")
        magic, version, meta_len = _HEADER_FIXED.unpack(head)
        if magic != MAGIC:
            raise StoreError(f"{path.name}: bad magic {magic!r}")
        if version != VERSION:
            raise StoreError(f"{path.name}: unsupported version {version}")
        meta_raw = f.read(meta_len)
        if len(meta_raw) < meta_len:
            raise StoreError(f"{path.name}: truncated metadata")
        meta = SegmentMeta.from_json(meta_raw)

        offset = _HEADER_FIXED.size + meta_len
        corruption = None
        while True:
            prefix = f.read(_RECORD_PREFIX.size)
            if not prefix:
                break
            if len(prefix) < _RECORD_PREFIX.size:
                corruption = f"torn record prefix at offset {offset}"
                break
            seq, start_ts_us, count = _RECORD_PREFIX.unpack(prefix)
            payload_len = count * 2 + count
            rest = f.read(payload_len + _CRC.size)
            if count < 1 or len(rest) < payload_len + _CRC.size:
                corruption = f"torn record body at offset {offset}"
                break
            (crc_stored,) = _CRC.unpack(rest[payload_len:])
            if zlib.crc32(prefix + rest[:payload_len]) != crc_stored:
                corruption = f"crc mismatch at offset {offset}"
                break
            if last is not None and seq <= last.seq:
                corruption = f"sequence regression at offset {offset}"
                break
            codes = list(struct.unpack(f"<{count}H", rest[: count * 2]))
            flags = list(rest[count * 2 : payload_len])
            last = Record(seq, start_ts_us, codes, flags)
            if collect:
                records.append(last)
            offset += _RECORD_PREFIX.size + payload_len + _CRC.size

    if not collect and last is not None:
        records = [last]
    return ScanResult(meta=meta, records=records, valid_end=offset, corruption=corruption)


@dataclass
class ReadResult:
    samples: list[tuple[int, int, int]]  # (ts_us, code, flags), ascending
    corruption: str | None = None


@dataclass
class RecoveredSession:
    meta: SegmentMeta
    last_seq: int
    truncated_bytes: int


class _Writer:
    def __init__(self, path: Path, meta: SegmentMeta, last_seq: int, new: bool):
        self.path = path
        self.meta = meta
        self.last_seq = last_seq
        self.closed = False
        self._f = open(path, "ab")
        if new:
            self._f.write(encode_header(meta))
            self._flush()

    def append(self, rec: Record) -> None:
        if self.closed:
            raise StoreError(f"segment {self.meta.session_id} is closed")
        expected = self.last_seq + 1
        if rec.seq != expected:
            raise SeqRegressionError(
                f"segment {self.meta.session_id}: got seq {rec.seq}, expected {expected}"
            )
        bits = int(self.meta.adc["bits"])
        limit = 1 << bits
        for c in rec.codes:
            if not 0 <= c < limit:
                raise StoreError(f"code {c} does not fit {bits} bits")
        self._f.write(encode_record(rec))
        self._flush()
        self.last_seq = rec.seq

    def _flush(self) -> None:
        # Durability before the ingest ack: flush Python buffers, then fsync.
        self._f.flush()
        os.fsync(self._f.fileno())

    def close(self) -> None:
        if not self.closed:
            self._f.close()
            self.closed = True


class WaveformStore:
    """Segment files for all sessions under one data directory."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._writers: dict[str, _Writer] = {}
        self._lock = threading.Lock()

    def segment_path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}{SEGMENT_SUFFIX}"

    def create_segment(self, meta: SegmentMeta) -> None:
        path = self.segment_path(meta.session_id)
        if path.exists():
            raise StoreError(f"segment already exists: {path.name}")
        with self._lock:
            self._writers[meta.session_id] = _Writer(path, meta, last_seq=-1, new=True)

    def open_segment(self, meta: SegmentMeta, last_seq: int) -> None:
        """Resume appending to a recovered segment."""
        path = self.segment_path(meta.session_id)
        if not path.exists():
            raise StoreError(f"segment missing: {path.name}")
        with self._lock:
            self._writers[meta.session_id] = _Writer(path, meta, last_seq=last_seq, new=False)

    def append(self, session_id: str, seq: int, start_ts_us: int,
               codes: list[int], flags: list[int]) -> None:
        with self._lock:
            writer = self._writers.get(session_id)
        if writer is None:
            raise StoreError(f"no open segment for session {session_id}")
        writer.append(Record(seq, start_ts_us, codes, flags))

    def last_seq(self, session_id: str) -> int:
        with self._lock:
            writer = self._writers.get(session_id)
        if writer is None:
            raise StoreError(f"no open segment for session {session_id}")
        return writer.last_seq

    def close_segment(self, session_id: str) -> None:
        with self._lock:
            writer = self._writers.pop(session_id, None)
        if writer is not None:
            writer.close()

    def close(self) -> None:
        with self._lock:
            writers = list(self._writers.values())
            self._writers.clear()
        for w in writers:
            w.close()

    # -- read paths (independent handles; safe while a writer is appending) --

    def read_records(self, session_id: str) -> ScanResult:
        return scan_segment(self.segment_path(session_id))

    def read_range(self, session_id: str, from_us: int, to_us: int) -> ReadResult:
        """All stored samples with timestamp in [from_us, to_us), ascending.

        Per-sample timestamps are expanded from each record's start as
        start + i * 10^6/rate rounded to the nearest microsecond. A corrupt
        tail is reported, not raised; the valid prefix is still returned.
        """
        scan = self.read_records(session_id)
        rate = scan.meta.sample_rate_hz
        out: list[tuple[int, int, int]] = []
        for rec in scan.records:
            for i, (code, flag) in enumerate(zip(rec.codes, rec.flags)):
                ts = sample_ts_us(rec.start_ts_us, i, rate)
                if from_us <= ts < to_us:
                    out.append((ts, code, flag))
        if scan.corruption:
            logger.warning("session %s: %s", session_id, scan.corruption)
        return ReadResult(samples=out, corruption=scan.corruption)

    def recover(self) -> dict[str, RecoveredSession]:
        """Scan every segment, truncate torn tails, return resume points.

        An unreadable segment is skipped with a warning so one bad file
        cannot take down the rest of the data directory.
        """
        recovered: dict[str, RecoveredSession] = {}
        for path in sorted(self.data_dir.glob(f"*{SEGMENT_SUFFIX}")):
            try:
                scan = scan_segment(path, collect=False)
            except (StoreError, OSError, json.JSONDecodeError) as exc:
                logger.warning("segment %s unavailable: %s", path.name, exc)
                continue
            size = path.stat().st_size
            truncated = size - scan.valid_end
            if truncated > 0:
                logger.warning(
                    "segment %s: dropping %d trailing bytes (%s)",
                    path.name, truncated, scan.corruption,
                )
                with open(path, "r+b") as f:
                    f.truncate(scan.valid_end)
            recovered[scan.meta.session_id] = RecoveredSession(
                meta=scan.meta,
                last_seq=scan.records[-1].seq if scan.records else -1,
                truncated_bytes=truncated,
            )
        return recovered

    def export_text(self, session_id: str, fp) -> ReadResult:
        """Dump a session as '(ts_us code flags)' lines."""
        result = self.read_range(session_id, 0, 1 << 63)
        for ts, code, flag in result.samples:
            fp.write(f"{ts} {code} {flag}\n")
        return result
