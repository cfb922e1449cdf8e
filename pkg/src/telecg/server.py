"""HTTP shell over the backend: REST ingest/query plus SSE live streams.

Endpoints are plain sync handlers (the backend is lock-based, not async),
so FastAPI runs them on its worker thread pool; the pool is widened at
startup because every live stream subscriber parks one thread.
"""

from __future__ import annotations

import json
import logging
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

import anyio.to_thread
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .backend import Backend, NotFoundError, SequenceGap, ValidationFailure

log = logging.getLogger("telecg.server")

WORKER_THREADS = 100
# Short enough that a dropped client is noticed (the next write fails) well
# inside a graceful-shutdown window.
KEEPALIVE_EVERY_POLLS = 5


class AdcIn(BaseModel):
    vref_v: float = 3.3
    bits: int = 12
    baseline_v: float = 1.65


class PatientIn(BaseModel):
    patient_id: str
    display_name: str = ""


class SessionIn(BaseModel):
    device_id: str
    patient_id: str
    sample_rate_hz: int
    adc: AdcIn


class BatchIn(BaseModel):
    seq: int = Field(ge=0, lt=2**32)
    start_ts_us: int = Field(ge=0, lt=2**64)
    codes: list[int]
    flags: list[int]


def _sse_frame(name: str, payload: dict) -> str:
    return f"event: {name}\ndata: {json.dumps(payload)}\n\n"


def create_app(backend: Backend, ui_dir: Optional[Path] = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        limiter = anyio.to_thread.current_default_thread_limiter()
        limiter.total_tokens = max(limiter.total_tokens, WORKER_THREADS)
        backend.start()
        yield
        backend.shutdown()

    app = FastAPI(title="telecg", lifespan=lifespan)
    app.state.backend = backend

    @app.exception_handler(NotFoundError)
    async def not_found(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(ValidationFailure)
    async def invalid(request: Request, exc: ValidationFailure):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(SequenceGap)
    async def gap(request: Request, exc: SequenceGap):
        return JSONResponse(status_code=409, content={
            "accepted": False,
            "next_expected_seq": exc.next_expected_seq,
            "reason": exc.reason,
        })

    @app.get("/api/v1/health")
    def health():
        return backend.health()

    @app.post("/api/v1/patients")
    def upsert_patient(body: PatientIn):
        return backend.upsert_patient(body.patient_id, body.display_name)

    @app.get("/api/v1/patients")
    def list_patients():
        return backend.list_patients()

    @app.post("/api/v1/sessions", status_code=201)
    def create_session(body: SessionIn):
        return backend.create_session(
            device_id=body.device_id, patient_id=body.patient_id,
            sample_rate_hz=body.sample_rate_hz, adc=body.adc.model_dump())

    @app.get("/api/v1/sessions")
    def list_sessions(patient_id: Optional[str] = None):
        return backend.list_sessions(patient_id)

    @app.get("/api/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return backend.get_session(session_id)

    @app.post("/api/v1/sessions/{session_id}/batches")
    def ingest_batch(session_id: str, body: BatchIn):
        return backend.ingest_batch(session_id, body.seq, body.start_ts_us,
                                    body.codes, body.flags)

    @app.get("/api/v1/sessions/{session_id}/samples")
    def query_samples(session_id: str,
                      from_us: int = Query(default=0, ge=0),
                      to_us: int = Query(default=2**63 - 1, ge=0)):
        info = backend.get_session(session_id)
        samples = backend.query_range(session_id, from_us, to_us)
        return {
            "sample_rate_hz": info["sample_rate_hz"],
            "adc": info["adc"],
            "samples": [[ts, code, flag] for ts, code, flag in samples],
        }

    @app.get("/api/v1/sessions/{session_id}/stream")
    def stream(session_id: str,
               from_seq: Optional[int] = Query(default=None, ge=0)):
        sub = backend.subscribe(session_id, from_seq)

        def frames():
            idle = 0
            try:
                for item in sub.events(poll_s=1.0):
                    if item is None:
                        idle += 1
                        if idle >= KEEPALIVE_EVERY_POLLS:
                            idle = 0
                            yield ": keepalive\n\n"
                        continue
                    idle = 0
                    name, payload = item
                    yield _sse_frame(name, payload)
                    if name in ("end", "notice"):
                        return
            finally:
                backend.unsubscribe(session_id, sub)

        return StreamingResponse(frames(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache",
                                          "X-Accel-Buffering": "no"})

    @app.get("/api/v1/sessions/{session_id}/alerts")
    def session_alerts(session_id: str):
        return backend.session_alerts(session_id)

    @app.post("/api/v1/alerts/{alert_id}/ack")
    def ack_alert(alert_id: str):
        return backend.ack_alert(alert_id)

    @app.delete("/api/v1/sessions/{session_id}")
    def close_session(session_id: str):
        backend.close_session(session_id)
        return Response(status_code=204)

    if ui_dir is None:
        bundled = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
        ui_dir = bundled if bundled.is_dir() else None
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
