import base64
import io
import json
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from conftest import build_registry
from toolshed.engine import RolloutConfig
from toolshed.fixtures import fixture_to_doc
from toolshed.service import (
    RemoteSession,
    SessionService,
    create_registry_app,
    create_session_app,
    registry_reachable,
)
from toolshed.wire import (
    Envelope,
    Status,
    ToolRequest,
    ToolResult,
    VariableRef,
    decode_envelope,
    encode_envelope,
)

SAM_TEXT = ('<think>segment it</think><tool_call>{"name": "sam2.segment_from_point", '
            '"arguments": {"image": "$image", "x": 0.5, "y": 0.5}}</tool_call>')
ANSWER_TEXT = "<think>done</think><answer>yes</answer>"


@pytest.fixture(scope="module")
def reg():
    registry = build_registry()
    yield registry
    registry.close()


@pytest.fixture(scope="module")
def reg_client(reg):
    return TestClient(create_registry_app(reg))


@pytest.fixture()
def svc_client(reg, desk_fixtures):
    service = SessionService(reg, list(desk_fixtures))
    return TestClient(create_session_app(service))


def events_of(client: TestClient, sid: str, after: int = 0) -> list[dict]:
    resp = client.get(f"/sessions/{sid}/events", params={"after": after})
    assert resp.status_code == 200
    return [json.loads(line) for line in resp.text.splitlines() if line]


def wait_idle(client: TestClient, sid: str) -> None:
    # a stream that starts past every event only returns once the rollout ends
    client.get(f"/sessions/{sid}/events", params={"after": 1_000_000})


# ---------------------------------------------------------------------------
# registry app


class TestRegistryApp:
    def test_stats_shape(self, reg_client):
        stats = reg_client.get("/stats").json()
        assert "point1" in stats and "sam2" in stats
        assert set(stats["point1"]) >= {"dispatched", "completed", "queue_depth",
                                        "workers", "recycled"}

    def test_scaling_idle_holds(self, reg_client):
        out = reg_client.get("/scaling").json()
        assert set(out) == set(reg_client.get("/stats").json())
        for decision in out.values():
            assert decision == {"action": "hold", "delta": 0}

    def test_call_round_trip(self, reg_client, desk_fixtures):
        doc = fixture_to_doc(desk_fixtures[0])
        sid = reg_client.post("/sessions", json={"fixture": doc, "seed": 0}).json()["session_id"]
        req = ToolRequest("point1", "detect_one",
                          {"image": VariableRef("image"), "obj_name": "red box"})
        payload = encode_envelope(Envelope.wrap(sid, 1, req))
        resp = reg_client.post(f"/sessions/{sid}/call", content=payload)
        assert resp.status_code == 200
        body = decode_envelope(resp.content).body
        assert isinstance(body, ToolResult)
        assert body.status is Status.OK
        assert "red box" in body.text

    def test_session_mismatch_rejected(self, reg_client):
        sid = reg_client.post("/sessions", json={}).json()["session_id"]
        env = Envelope.wrap("someone-else", 1, ToolRequest("point1", "detect_one", {}))
        resp = reg_client.post(f"/sessions/{sid}/call", content=encode_envelope(env))
        assert resp.status_code == 400
        assert "!= path" in resp.json()["error"]

    def test_seq_must_increase(self, reg_client):
        sid = reg_client.post("/sessions", json={}).json()["session_id"]
        req = ToolRequest("point1", "detect_one", {"obj_name": "x"})

        def call(seq):
            env = Envelope.wrap(sid, seq, req)
            return reg_client.post(f"/sessions/{sid}/call", content=encode_envelope(env))

        assert call(5).status_code == 200
        dup = call(5)
        assert dup.status_code == 400
        assert "does not increase past 5" in dup.json()["error"]
        assert call(6).status_code == 200

    def test_garbage_payload(self, reg_client):
        sid = reg_client.post("/sessions", json={}).json()["session_id"]
        resp = reg_client.post(f"/sessions/{sid}/call", content=b"\x00\x01junk")
        assert resp.status_code == 400

    def test_unknown_session(self, reg_client):
        env = Envelope.wrap("ghost", 1, ToolRequest("point1", "detect_one", {}))
        resp = reg_client.post("/sessions/ghost/call", content=encode_envelope(env))
        assert resp.status_code == 400
        assert "unknown session" in resp.json()["error"]


class TestRemoteSession:
    def test_call_tool(self, reg_client, desk_fixtures):
        session = RemoteSession("http://testserver", reg_client,
                                fixture=desk_fixtures[0], seed=0)
        res = session.call_tool("point1", "detect_one",
                                {"image": VariableRef("image"), "obj_name": "red box"},
                                timeout_ms=5000)
        assert res.status is Status.OK
        assert "red box" in res.text
        # seq advances internally, a second call still goes through
        res2 = session.call_tool("point1", "detect_all",
                                 {"image": VariableRef("image"), "obj_name": "blue ball"},
                                 timeout_ms=5000)
        assert res2.status is Status.OK
        session.close()


# ---------------------------------------------------------------------------
# session app (manual mode: posted text is the assistant turn)


class TestSessionLifecycle:
    def test_fixture_listing(self, svc_client, desk_fixtures):
        listing = svc_client.get("/fixtures").json()
        assert len(listing) == len(desk_fixtures)
        assert listing[0]["id"] == "desk-01"
        assert listing[0]["task"] == "choice"
        assert listing[0]["question"]

    def test_create_requires_one_source(self, svc_client):
        assert svc_client.post("/sessions", json={}).status_code == 400
        both = svc_client.post("/sessions", json={
            "fixture_id": "desk-01", "image": "aGk="})
        assert both.status_code == 400
        assert "exactly one" in both.json()["error"]

    def test_unknown_fixture_404(self, svc_client):
        resp = svc_client.post("/sessions", json={"fixture_id": "desk-99"})
        assert resp.status_code == 404
        assert "desk-99" in resp.json()["error"]

    def test_create_from_inline_doc(self, svc_client, desk_fixtures):
        doc = fixture_to_doc(desk_fixtures[1])
        resp = svc_client.post("/sessions", json={"fixture": doc})
        assert resp.status_code == 200
        assert resp.json()["session_id"]

    def test_create_from_png_upload(self, svc_client):
        img = Image.fromarray(np.full((6, 8, 3), 140, dtype=np.uint8))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        b64 = base64.b64encode(buf.getvalue()).decode()
        sid = svc_client.post("/sessions", json={"image": b64}).json()["session_id"]
        svc_client.post(f"/sessions/{sid}/message", json={"text": ANSWER_TEXT})
        kinds = [e["type"] for e in events_of(svc_client, sid)]
        assert kinds == ["think", "answer"]

    def test_message_events_in_order(self, svc_client):
        sid = svc_client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        accepted = svc_client.post(f"/sessions/{sid}/message", json={"text": SAM_TEXT})
        assert accepted.json() == {"accepted": True, "turn": 1}
        events = events_of(svc_client, sid)
        assert [e["type"] for e in events] == ["think", "tool_call", "tool_result"]
        assert [e["seq"] for e in events] == [1, 2, 3]
        tool_ev = events[2]["payload"]
        assert tool_ev["tool"] == "sam2"
        assert tool_ev["status"] == "Ok"
        assert "segmentation_mask" in tool_ev["variables"]
        png = base64.b64decode(tool_ev["image"]["png_base64"])
        overlay = Image.open(io.BytesIO(png))
        assert overlay.size == (tool_ev["image"]["width"], tool_ev["image"]["height"])

    def test_resume_skips_consumed_events(self, svc_client):
        sid = svc_client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        svc_client.post(f"/sessions/{sid}/message", json={"text": SAM_TEXT})
        all_events = events_of(svc_client, sid)
        last = all_events[-1]["seq"]
        tail = events_of(svc_client, sid, after=1)
        assert [e["seq"] for e in tail] == [e["seq"] for e in all_events][1:]
        assert events_of(svc_client, sid, after=last) == []

    def test_turns_accumulate(self, svc_client):
        sid = svc_client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        assert svc_client.post(f"/sessions/{sid}/message",
                               json={"text": ANSWER_TEXT}).json()["turn"] == 1
        wait_idle(svc_client, sid)
        assert svc_client.post(f"/sessions/{sid}/message",
                               json={"text": ANSWER_TEXT}).json()["turn"] == 2
        wait_idle(svc_client, sid)
        kinds = [e["type"] for e in events_of(svc_client, sid)]
        assert kinds == ["think", "answer", "think", "answer"]

    def test_sessions_are_independent(self, svc_client):
        a = svc_client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        b = svc_client.post("/sessions", json={"fixture_id": "desk-02"}).json()["session_id"]
        svc_client.post(f"/sessions/{a}/message",
                        json={"text": "<think>a</think><answer>alpha</answer>"})
        svc_client.post(f"/sessions/{b}/message",
                        json={"text": "<think>b</think><answer>beta</answer>"})
        ev_a, ev_b = events_of(svc_client, a), events_of(svc_client, b)
        assert [e["seq"] for e in ev_a] == [1, 2]
        assert [e["seq"] for e in ev_b] == [1, 2]
        assert ev_a[1]["payload"]["text"] == "alpha"
        assert ev_b[1]["payload"]["text"] == "beta"

    def test_unknown_session_404(self, svc_client):
        assert svc_client.get("/sessions/nope/events").status_code == 404
        assert svc_client.post("/sessions/nope/message",
                               json={"text": "x"}).status_code == 404
        assert svc_client.post("/sessions/nope/abort").status_code == 404

    def test_negative_after_rejected(self, svc_client):
        sid = svc_client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        assert svc_client.get(f"/sessions/{sid}/events",
                              params={"after": -1}).status_code == 422

    def test_cross_origin_allowed(self, svc_client):
        resp = svc_client.get("/fixtures", headers={"origin": "http://localhost:5173"})
        assert resp.headers["access-control-allow-origin"] == "*"


class TestAbort:
    def test_idle_abort_emits_event(self, svc_client):
        sid = svc_client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        reply = svc_client.post(f"/sessions/{sid}/abort").json()
        assert reply == {"ok": True, "was_active": False}
        events = events_of(svc_client, sid)
        assert [e["type"] for e in events] == ["aborted"]
        assert events[0]["payload"]["reason"] == "user abort"

    def test_abort_mid_rollout(self, reg, desk_fixtures):
        gate = threading.Event()
        entered = threading.Event()

        def stalling_policy(history, turn_index):
            entered.set()
            assert gate.wait(timeout=5.0)
            return SAM_TEXT

        service = SessionService(reg, list(desk_fixtures), policy=stalling_policy,
                                 cfg=RolloutConfig(t_max=8, n_group=1))
        client = TestClient(create_session_app(service))
        sid = client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        client.post(f"/sessions/{sid}/message", json={"text": "segment the box"})
        assert entered.wait(timeout=5.0)
        reply = client.post(f"/sessions/{sid}/abort").json()
        assert reply["was_active"] is True
        gate.set()
        events = events_of(client, sid)
        # the pending tool call never runs: think, then the abort notice
        assert [e["type"] for e in events] == ["think", "aborted"]
        assert events[-1]["payload"]["reason"] == "user abort"

    def test_second_message_while_active_rejected(self, reg, desk_fixtures):
        gate = threading.Event()

        def slow_policy(history, turn_index):
            gate.wait(timeout=5.0)
            return ANSWER_TEXT

        service = SessionService(reg, list(desk_fixtures), policy=slow_policy)
        client = TestClient(create_session_app(service))
        sid = client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        assert client.post(f"/sessions/{sid}/message",
                           json={"text": "go"}).status_code == 200
        busy = client.post(f"/sessions/{sid}/message", json={"text": "again"})
        assert busy.status_code == 400
        assert "already running" in busy.json()["error"]
        gate.set()
        wait_idle(client, sid)

    def test_policy_crash_reports_rollout_error(self, reg, desk_fixtures):
        def broken_policy(history, turn_index):
            raise ValueError("model fell over")

        service = SessionService(reg, list(desk_fixtures), policy=broken_policy)
        client = TestClient(create_session_app(service))
        sid = client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        client.post(f"/sessions/{sid}/message", json={"text": "go"})
        events = events_of(client, sid)
        assert [e["type"] for e in events] == ["aborted"]
        assert "rollout error" in events[0]["payload"]["reason"]
        assert "model fell over" in events[0]["payload"]["reason"]


class TestScriptedService:
    def test_policy_mode_runs_full_loop(self, reg, desk_fixtures):
        from toolshed.engine import ScriptedPolicy

        service = SessionService(
            reg, list(desk_fixtures),
            policy=ScriptedPolicy([SAM_TEXT, ANSWER_TEXT]),
            cfg=RolloutConfig(t_max=4, n_group=1))
        client = TestClient(create_session_app(service))
        sid = client.post("/sessions", json={"fixture_id": "desk-01"}).json()["session_id"]
        client.post(f"/sessions/{sid}/message", json={"text": "is there a red box?"})
        kinds = [e["type"] for e in events_of(client, sid)]
        assert kinds == ["think", "tool_call", "tool_result", "think", "answer"]


# ---------------------------------------------------------------------------
# reachability probe (used by the CLI before remote runs)


class TestReachability:
    def test_unreachable_port(self):
        assert registry_reachable("http://127.0.0.1:9", timeout_s=0.5) is False

    def test_live_server(self, reg):
        import uvicorn

        config = uvicorn.Config(create_registry_app(reg), host="127.0.0.1",
                                port=0, log_level="warning")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 10.0
        while not server.started:
            assert time.monotonic() < deadline, "server did not start"
            time.sleep(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        try:
            assert registry_reachable(f"http://127.0.0.1:{port}") is True
        finally:
            server.should_exit = True
            thread.join(timeout=5.0)
