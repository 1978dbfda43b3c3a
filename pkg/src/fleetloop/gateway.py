"""HTTP gateway: the runtime's external surface.

Request and response bodies travel inside a versioned wire envelope;
unknown kinds and versions are rejected, never ignored. The event feed is
server-sent events, every consumer receiving the same total order from any
starting seq.
"""

from __future__ import annotations

import threading
import time
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .errors import (
    AlreadyAnswered,
    EmptyFilter,
    EmptyText,
    RuntimeNotReady,
    SeqOutOfRange,
    UnknownClarification,
)
from .memory import StructuredFilter
from .model import canonical_json
from .runtime import Runtime, ScenarioDriver

WIRE_VERSION = 1

REQUEST_KINDS = frozenset(
    {"submit_instruction", "answer_clarification", "memory_semantic", "memory_structured"}
)


class EnvelopeError(Exception):
    def __init__(self, message: str, correlation_id=None):
        super().__init__(message)
        self.correlation_id = correlation_id


def open_envelope(doc: dict, expected_kind: str) -> tuple:
    if not isinstance(doc, dict):
        raise EnvelopeError("body must be a JSON object")
    cid = doc.get("correlation_id")
    if doc.get("version") != WIRE_VERSION:
        raise EnvelopeError(f"unsupported wire version {doc.get('version')!r}", cid)
    kind = doc.get("kind")
    if kind not in REQUEST_KINDS:
        raise EnvelopeError(f"unknown message kind {kind!r}", cid)
    if kind != expected_kind:
        raise EnvelopeError(f"kind {kind!r} not accepted on this endpoint", cid)
    return doc.get("body") or {}, cid


def seal(kind: str, correlation_id, body) -> dict:
    return {"version": WIRE_VERSION, "kind": kind, "correlation_id": correlation_id, "body": body}


def _error_response(status: int, message: str, correlation_id=None) -> JSONResponse:
    return JSONResponse(
        status_code=status, content=seal("error", correlation_id, {"message": message})
    )


class RuntimeService:
    """A live runtime plus the lock and pacing thread the gateway shares.

    Every external call serializes against the tick loop, so gateway
    sessions can be concurrent while the runtime stays single-streamed.
    """

    def __init__(self, runtime: Runtime, driver: Optional[ScenarioDriver] = None,
                 tick_rate: float = 20.0):
        self.runtime = runtime
        self.driver = driver
        self.tick_rate = tick_rate
        self.lock = threading.RLock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def step(self, ticks: int = 1) -> None:
        with self.lock:
            for _ in range(ticks):
                if self.driver is not None:
                    self.driver.pump()
                self.runtime.tick()

    def start(self) -> None:
        if self._thread is not None:
            return
        period = 1.0 / self.tick_rate

        def loop():
            while not self._stop.is_set():
                started = time.monotonic()
                self.step()
                remainder = period - (time.monotonic() - started)
                if remainder > 0:
                    self._stop.wait(remainder)

        self._thread = threading.Thread(target=loop, name="fleetloop-ticker", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None


def make_app(service: RuntimeService) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app):
        yield
        service.stop()

    app = FastAPI(title="fleetloop gateway", lifespan=lifespan)
    # the console is served from its own origin; no credentials involved
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    runtime = service.runtime

    @app.exception_handler(EnvelopeError)
    async def _envelope_error(request: Request, exc: EnvelopeError):
        return _error_response(400, str(exc), exc.correlation_id)

    @app.post("/instructions")
    async def submit_instruction(request: Request):
        body, cid = open_envelope(await request.json(), "submit_instruction")
        text = body.get("text", "")
        if not text.strip():
            return _error_response(400, "instruction text must be non-empty", cid)
        try:
            with service.lock:
                task_id = runtime.submit_instruction(
                    text,
                    priority=int(body.get("priority", 0)),
                    explicit_robot=body.get("explicit_robot"),
                    tau_override=body.get("tau_override"),
                )
        except RuntimeNotReady as exc:
            return _error_response(503, str(exc), cid)
        return seal("response", cid, {"task_id": task_id})

    @app.post("/clarifications/{clarification_id}")
    async def answer_clarification(clarification_id: str, request: Request):
        body, cid = open_envelope(await request.json(), "answer_clarification")
        try:
            with service.lock:
                runtime.answer_clarification(clarification_id, body.get("answer", ""))
        except UnknownClarification as exc:
            return _error_response(404, f"unknown clarification: {exc}", cid)
        except AlreadyAnswered as exc:
            return _error_response(409, f"already answered: {exc}", cid)
        except RuntimeNotReady as exc:
            return _error_response(503, str(exc), cid)
        return seal("response", cid, {"accepted": True})

    @app.get("/fleet")
    async def fleet_snapshot():
        with service.lock:
            robots = [r.to_doc() for r in runtime.fleet.snapshot()]
        return seal("response", None, {"robots": robots})

    @app.get("/anchors")
    async def anchors():
        with service.lock:
            docs = [
                {
                    "name": a.name,
                    "pose": a.pose.to_doc(),
                    "registered_by": a.registered_by.value,
                }
                for _, a in sorted(runtime.memory.anchors.items())
            ]
        return seal("response", None, {"anchors": docs})

    @app.post("/memory/semantic")
    async def memory_semantic(request: Request):
        body, cid = open_envelope(await request.json(), "memory_semantic")
        scope = StructuredFilter.from_doc(body["scope"]) if body.get("scope") else None
        try:
            with service.lock:
                results = runtime.memory.retrieve_semantic(
                    body.get("query", ""), int(body.get("k", 5)), scope
                )
        except EmptyText as exc:
            return _error_response(400, f"empty query: {exc}", cid)
        except ValueError as exc:
            return _error_response(400, str(exc), cid)
        return seal("response", cid, {"results": [r.to_doc() for r in results]})

    @app.post("/memory/structured")
    async def memory_structured(request: Request):
        body, cid = open_envelope(await request.json(), "memory_structured")
        try:
            flt = StructuredFilter.from_doc(body.get("filter", {}))
            with service.lock:
                results = runtime.memory.retrieve_structured(flt)
        except EmptyFilter as exc:
            return _error_response(400, f"empty filter: {exc}", cid)
        except (KeyError, ValueError) as exc:
            return _error_response(400, f"bad filter: {exc}", cid)
        return seal("response", cid, {"results": [r.to_doc() for r in results]})

    @app.get("/tasks")
    async def tasks():
        with service.lock:
            docs = [
                runtime.orchestrator.tasks[tid].record.to_doc()
                for tid in runtime.orchestrator.order
            ]
        return seal("response", None, {"tasks": docs})

    @app.get("/events")
    async def events(from_seq: int = 0, follow: bool = False):
        log = runtime.log
        try:
            log.read_from(from_seq)  # range validation up front
        except SeqOutOfRange as exc:
            return _error_response(416, str(exc), None)

        def stream():
            cursor = from_seq
            while True:
                batch = log.read_from(cursor)
                for event in batch:
                    payload = seal("event", None, event.to_doc())
                    yield f"data: {canonical_json(payload)}\n\n"
                cursor += len(batch)
                if not follow:
                    if not batch:
                        break
                    continue
                if not log.wait_beyond(cursor, timeout=0.5):
                    yield ": keepalive\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
