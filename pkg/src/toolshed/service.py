"""HTTP surfaces: the tool registry service and the session/demo service.

The registry app (`toolshed serve`) speaks the binary envelope protocol on
POST /sessions/{id}/call, so a remote harness exercises the same codec an
in-process one does. The session app (`harness sessions`) is what the
browser console consumes: create a session, post a message, stream NDJSON
events, abort.
"""

from __future__ import annotations

import base64
import itertools
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .engine import (
    LocalSession,
    Policy,
    RolloutConfig,
    ScriptedPolicy,
    run_rollout,
)
from .errors import BadArgs, DecodeError, ToolshedError
from .fixtures import SceneFixture, fixture_from_doc, fixture_to_doc
from .registry import Registry, ScalePolicy, autoscale_decide
from .wire import Envelope, ToolRequest, ToolResult, encode_envelope, decode_envelope


# ---------------------------------------------------------------------------
# pydantic I/O models

class CreateSessionBody(BaseModel):
    fixture_id: str | None = None
    image: str | None = None       # base64 PNG
    fixture: dict | None = None    # inline fixture document
    seed: int = 0


class SessionCreated(BaseModel):
    session_id: str


class MessageBody(BaseModel):
    text: str


class MessageAccepted(BaseModel):
    accepted: bool
    turn: int


class AbortReply(BaseModel):
    ok: bool
    was_active: bool


# ---------------------------------------------------------------------------
# registry service (toolshed serve)

def create_registry_app(registry: Registry) -> FastAPI:
    app = FastAPI(title="toolshed registry")

    @app.exception_handler(BadArgs)
    async def _bad_args(_req: Request, exc: BadArgs):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(DecodeError)
    async def _decode_err(_req: Request, exc: DecodeError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/stats")
    def stats() -> dict:
        return registry.stats_snapshot().to_json()

    @app.get("/scaling")
    def scaling(high: int = 8, low: int = 1, max_actors: int = 8) -> dict:
        policy = ScalePolicy(high_watermark=high, low_watermark=low,
                             max_actors=max_actors)
        snap = registry.stats_snapshot()
        out = {}
        for name in registry.tools():
            decision = autoscale_decide(snap.per_tool[name], registry.spec(name), policy)
            out[name] = {"action": decision.action.value, "delta": decision.delta}
        return out

    @app.post("/sessions", response_model=SessionCreated)
    def create_session(body: CreateSessionBody) -> SessionCreated:
        fixture = fixture_from_doc(body.fixture) if body.fixture else None
        sid = registry.create_session(fixture=fixture, seed=body.seed)
        return SessionCreated(session_id=sid)

    @app.post("/sessions/{sid}/call")
    async def call(sid: str, request: Request) -> Response:
        payload = await request.body()
        env = decode_envelope(payload)
        if env.session_id != sid:
            raise BadArgs(f"envelope session {env.session_id!r} != path {sid!r}")
        out = registry.call_wire(payload)
        return Response(content=out, media_type="application/octet-stream")

    return app


# ---------------------------------------------------------------------------
# session service (harness sessions)

@dataclass
class _SessionState:
    sid: str
    fixture: SceneFixture | None
    local: LocalSession
    events: list[dict] = field(default_factory=list)
    cond: threading.Condition = field(default_factory=threading.Condition)
    active: bool = False
    abort_requested: bool = False
    turn_count: int = 0
    seq: Iterator[int] = field(default_factory=lambda: itertools.count(1))


def _png_b64(att) -> dict:
    return {
        "name": att.name,
        "png_base64": base64.b64encode(att.data).decode(),
        "width": att.width,
        "height": att.height,
    }


def _shape_event(kind: str, payload: Any) -> dict:
    if kind != "tool_result":
        return dict(payload)
    result: ToolResult | None = payload.get("result")
    doc = {
        "tool": payload["tool"],
        "method": payload["method"],
        "status": payload["status"],
        "text": payload["text"],
        "image": None,
        "variables": [],
    }
    if result is not None:
        if result.image is not None:
            doc["image"] = _png_b64(result.image)
        doc["variables"] = sorted(result.variables)
    return doc


class SessionService:
    """Owns demo sessions and their event logs; one rollout at a time each."""

    def __init__(self, registry: Registry, fixtures: list[SceneFixture],
                 policy: Policy | None = None,
                 cfg: RolloutConfig | None = None):
        self.registry = registry
        self.fixtures = {f.id: f for f in fixtures}
        self.policy = policy
        self.cfg = cfg or RolloutConfig()
        self._sessions: dict[str, _SessionState] = {}
        self._lock = threading.Lock()

    # -- session plumbing --------------------------------------------------

    def create(self, body: CreateSessionBody) -> str:
        sources = [s for s in (body.fixture_id, body.image, body.fixture) if s]
        if len(sources) != 1:
            raise BadArgs("provide exactly one of fixture_id, image, fixture")
        if body.fixture_id is not None:
            fixture = self.fixtures.get(body.fixture_id)
            if fixture is None:
                raise KeyError(body.fixture_id)
        elif body.fixture is not None:
            fixture = fixture_from_doc(body.fixture)
        else:
            from PIL import Image
            import io

            raw = base64.b64decode(body.image or "")
            img = np.asarray(Image.open(io.BytesIO(raw)).convert("RGB"), dtype=np.uint8)
            fixture = SceneFixture(id="uploaded", image=img)
        local = LocalSession(self.registry, fixture=fixture, seed=body.seed)
        state = _SessionState(sid=local.session_id, fixture=fixture, local=local)
        with self._lock:
            self._sessions[state.sid] = state
        return state.sid

    def _state(self, sid: str) -> _SessionState:
        with self._lock:
            if sid not in self._sessions:
                raise KeyError(sid)
            return self._sessions[sid]

    def _append(self, state: _SessionState, kind: str, payload: Any) -> None:
        with state.cond:
            state.events.append({
                "type": kind,
                "payload": _shape_event(kind, payload),
                "seq": next(state.seq),
            })
            state.cond.notify_all()

    # -- message / rollout ---------------------------------------------------

    def message(self, sid: str, text: str) -> int:
        state = self._state(sid)
        with state.cond:
            if state.active:
                raise BadArgs("a rollout is already running for this session")
            state.active = True
            state.abort_requested = False
            state.turn_count += 1
            turn = state.turn_count

        if self.policy is not None:
            policy, cfg = self.policy, self.cfg
        else:
            # manual mode: the submitted text IS the assistant action
            policy = ScriptedPolicy([text])
            cfg = RolloutConfig(t_max=1, n_group=1,
                                timeout_ms=self.cfg.timeout_ms, seed=self.cfg.seed)

        def runner() -> None:
            try:
                run_rollout(
                    text, state.local, policy, cfg,
                    on_event=lambda kind, payload: self._append(state, kind, payload),
                    should_abort=lambda: state.abort_requested,
                )
            except ToolshedError as exc:
                self._append(state, "aborted", {"reason": f"rollout error: {exc}"})
            finally:
                with state.cond:
                    state.active = False
                    state.cond.notify_all()

        threading.Thread(target=runner, name=f"rollout-{sid}", daemon=True).start()
        return turn

    def abort(self, sid: str) -> bool:
        state = self._state(sid)
        with state.cond:
            was_active = state.active
            state.abort_requested = True
        if not was_active:
            self._append(state, "aborted", {"reason": "user abort"})
        return was_active

    def events(self, sid: str, after: int) -> Iterator[str]:
        state = self._state(sid)
        idx_sent = after
        while True:
            with state.cond:
                pending = [e for e in state.events if e["seq"] > idx_sent]
                if not pending and not state.active:
                    return
                if not pending:
                    state.cond.wait(timeout=0.5)
                    continue
            for e in pending:
                idx_sent = e["seq"]
                yield json.dumps(e, sort_keys=True) + "\n"


def create_session_app(service: SessionService) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="toolshed sessions")
    # the console is typically served from a different origin (file:// or a
    # static server); the session API is local-demo surface, so allow all
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(KeyError)
    async def _unknown(_req: Request, exc: KeyError):
        return JSONResponse(status_code=404,
                            content={"error": f"unknown session or fixture: {exc.args[0]}"})

    @app.exception_handler(BadArgs)
    async def _bad(_req: Request, exc: BadArgs):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/fixtures")
    def fixtures() -> list[dict]:
        return [
            {"id": f.id, "task": f.qa.task if f.qa else None,
             "question": f.qa.question if f.qa else None}
            for f in service.fixtures.values()
        ]

    @app.get("/stats")
    def stats() -> dict:
        return service.registry.stats_snapshot().to_json()

    @app.post("/sessions", response_model=SessionCreated)
    def create(body: CreateSessionBody) -> SessionCreated:
        return SessionCreated(session_id=service.create(body))

    @app.post("/sessions/{sid}/message", response_model=MessageAccepted)
    def message(sid: str, body: MessageBody) -> MessageAccepted:
        turn = service.message(sid, body.text)
        return MessageAccepted(accepted=True, turn=turn)

    @app.post("/sessions/{sid}/abort", response_model=AbortReply)
    def abort(sid: str) -> AbortReply:
        return AbortReply(ok=True, was_active=service.abort(sid))

    @app.get("/sessions/{sid}/events")
    def events(sid: str, after: int = Query(default=0, ge=0)) -> StreamingResponse:
        service._state(sid)  # 404 before the stream starts
        return StreamingResponse(service.events(sid, after),
                                 media_type="application/x-ndjson")

    return app


# ---------------------------------------------------------------------------
# remote registry client (harness side)

class RemoteSession:
    """SessionHandle over HTTP; same wire envelopes as local dispatch."""

    def __init__(self, base_url: str, client, fixture: SceneFixture | None = None,
                 seed: int = 0):
        self._base = base_url.rstrip("/")
        self._client = client
        doc = fixture_to_doc(fixture) if fixture is not None else None
        resp = client.post(f"{self._base}/sessions",
                           json={"fixture": doc, "seed": seed})
        resp.raise_for_status()
        self.session_id = resp.json()["session_id"]
        self._seq = itertools.count(1)

    def call_tool(self, tool: str, method: str, args: dict, timeout_ms: int) -> ToolResult:
        req = ToolRequest(tool=tool, method=method, args=args, timeout_ms=timeout_ms)
        env = Envelope.wrap(self.session_id, next(self._seq), req)
        resp = self._client.post(
            f"{self._base}/sessions/{self.session_id}/call",
            content=encode_envelope(env),
            headers={"content-type": "application/octet-stream"},
            timeout=max(60.0, timeout_ms / 1000.0 + 30.0),
        )
        resp.raise_for_status()
        body = decode_envelope(resp.content).body
        if not isinstance(body, ToolResult):
            raise DecodeError("expected a tool result envelope")
        return body

    def close(self) -> None:
        pass


def registry_reachable(base_url: str, timeout_s: float = 5.0) -> bool:
    import httpx

    try:
        resp = httpx.get(f"{base_url.rstrip('/')}/stats", timeout=timeout_s)
        return resp.status_code == 200
    except httpx.HTTPError:
        return False
