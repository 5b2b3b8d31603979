"""Minimal HTTP facade over the engine and the feedback loop.

Instantiation requests are served concurrently from stats snapshots. Every
mutation (serve records and events) goes through one writer thread, so the
feedback loop keeps a single-writer discipline. The facade itself does no
computation beyond delegation.
"""

from __future__ import annotations

import json
import logging
import queue
import re
import threading
from concurrent.futures import Future
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from .config import Assembly
from .engine import Context, PageInstance, make_instance_id, render_json
from .errors import DuplicateInstance, PageOptError
from .feedback import Event, FeedbackLoop
from .layout import render_html
from .potl import ChoiceDoF
from .resolvers import ArmKey

log = logging.getLogger(__name__)

_STATS = re.compile(r"^/v1/stats/(?P<dof>[^/]+)$")


class PageOptService:
    """Library-level service object; :func:`make_server` wraps it in HTTP."""

    def __init__(self, assembly: Assembly, loop: FeedbackLoop | None = None):
        self.assembly = assembly
        cfg = assembly.config
        self.loop = loop or FeedbackLoop(index_capacity=cfg.index_capacity, dedup_window=cfg.dedup_window,
                                         event_log=cfg.event_log)
        self._jobs: queue.Queue[tuple[Callable[[], Any], Future] | None] = queue.Queue()
        self._writer = threading.Thread(target=self._drain, name="feedback-writer", daemon=True)
        self._writer.start()

    def _drain(self) -> None:
        while True:
            job = self._jobs.get()
            try:
                if job is None:
                    return
                fn, fut = job
                try:
                    fut.set_result(fn())
                except BaseException as exc:  # noqa: BLE001 - handed back to the caller
                    fut.set_exception(exc)
            finally:
                self._jobs.task_done()

    def _submit(self, fn: Callable[[], Any]) -> Future:
        fut: Future = Future()
        self._jobs.put((fn, fut))
        return fut

    def flush(self) -> None:
        """Block until every queued mutation has been applied."""
        self._jobs.join()

    def close(self) -> None:
        self._jobs.put(None)
        self._writer.join()
        self.loop.close()

    # -- operations

    def instantiate(self, request_id: str, user_id: str | None = None,
                    extra: dict[str, str] | None = None) -> PageInstance:
        cfg = self.assembly.config
        engine = self.assembly.engine
        if self.loop.index.seen(make_instance_id(engine.model.source_digest, request_id, cfg.seed)):
            raise DuplicateInstance(f"request {request_id!r} already served")
        ctx = Context(request_id, user_id, cfg.now, cfg.seed, dict(extra or {}))
        instance = engine.instantiate(ctx, self.loop.snapshot())
        self._submit(lambda: self.loop.record_serve(instance)).result()
        return instance

    def enqueue_event(self, event: Event) -> None:
        self._submit(lambda: self.loop.ingest_event(event))

    def stats(self, dof_id: str) -> dict[str, Any] | None:
        """Arm table of one DoF; a choice lists every alternative, played or not."""
        engine = self.assembly.engine
        if dof_id not in {d.id for d in engine.dofs}:
            return None
        dof = engine.descriptor(dof_id).dof
        arms = [ArmKey.choice(dof_id, a.id) for a in dof.alternatives] if isinstance(dof, ChoiceDoF) else ()
        return self.loop.stats_for(dof_id, include=arms)

    def health(self) -> dict[str, Any]:
        snap = self.loop.snapshot()
        return {"status": "ok", "generation": snap.generation, "serves": self.loop.serves,
                "dead_letters": len(self.loop.dead_letters), "queued": self._jobs.qsize()}

    def instance_body(self, instance: PageInstance) -> bytes:
        body = render_json(instance)
        a = self.assembly
        if a.layout is not None and a.binding is not None:
            doc = json.loads(body)
            doc["html"] = render_html(a.layout, a.binding, instance)
            body = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return body.encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    service: PageOptService  # set on the subclass built by make_server
    server_version = "pageopt/1"

    def log_message(self, fmt: str, *args: Any) -> None:
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, payload: Any = None, raw: bytes | None = None) -> None:
        body = raw if raw is not None else json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, message: str) -> None:
        self._send(status, {"error": code, "message": message})

    def _json_body(self) -> Any:
        ctype = self.headers.get("Content-Type", "").split(";")[0].strip().lower()
        if ctype != "application/json":
            raise _HttpError(HTTPStatus.UNSUPPORTED_MEDIA_TYPE, "content_type", "expected application/json")
        length = int(self.headers.get("Content-Length") or 0)
        try:
            return json.loads(self.rfile.read(length).decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise _HttpError(HTTPStatus.BAD_REQUEST, "bad_json", str(exc)) from None

    def do_GET(self) -> None:  # noqa: N802 - http.server API
        try:
            if self.path == "/v1/healthz":
                return self._send(HTTPStatus.OK, self.service.health())
            m = _STATS.match(self.path)
            if m:
                stats = self.service.stats(m.group("dof"))
                if stats is None:
                    return self._error(HTTPStatus.NOT_FOUND, "unknown_dof", m.group("dof"))
                return self._send(HTTPStatus.OK, stats)
            self._error(HTTPStatus.NOT_FOUND, "not_found", self.path)
        except Exception as exc:  # noqa: BLE001
            log.exception("GET %s failed", self.path)
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, type(exc).__name__, str(exc))

    def do_POST(self) -> None:  # noqa: N802 - http.server API
        try:
            if self.path == "/v1/instantiate":
                return self._instantiate()
            if self.path == "/v1/events":
                return self._event()
            self._error(HTTPStatus.NOT_FOUND, "not_found", self.path)
        except _HttpError as exc:
            self._error(exc.status, exc.code, exc.message)
        except DuplicateInstance as exc:
            self._error(HTTPStatus.CONFLICT, "duplicate_request", str(exc))
        except PageOptError as exc:
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, type(exc).__name__, str(exc))
        except Exception as exc:  # noqa: BLE001
            log.exception("POST %s failed", self.path)
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, type(exc).__name__, str(exc))

    def _instantiate(self) -> None:
        body = self._json_body()
        if not isinstance(body, dict) or not isinstance(body.get("request_id"), str) or not body["request_id"]:
            raise _HttpError(HTTPStatus.BAD_REQUEST, "bad_request", "request_id (string) is required")
        user_id = body.get("user_id")
        extra = body.get("extra") or {}
        if user_id is not None and not isinstance(user_id, str):
            raise _HttpError(HTTPStatus.BAD_REQUEST, "bad_request", "user_id must be a string")
        if not isinstance(extra, dict) or not all(isinstance(v, str) for v in extra.values()):
            raise _HttpError(HTTPStatus.BAD_REQUEST, "bad_request", "extra must map strings to strings")
        instance = self.service.instantiate(body["request_id"], user_id, extra)
        self._send(HTTPStatus.OK, raw=self.service.instance_body(instance))

    def _event(self) -> None:
        body = self._json_body()
        try:
            event = Event.from_json(body)
        except (ValueError, TypeError) as exc:
            raise _HttpError(HTTPStatus.BAD_REQUEST, "bad_event", str(exc)) from None
        self.service.enqueue_event(event)
        self._send(HTTPStatus.ACCEPTED, {"queued": True})


class _HttpError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status, self.code, self.message = int(status), code, message


def make_server(service: PageOptService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server
