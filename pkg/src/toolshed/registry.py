"""Tool router: named worker pools with resource accounting and sessions.

Every dispatch round-trips its request and result through the wire protocol,
so in-process tools exercise exactly the path a remote tool server would.
Dispatch never blocks on tool execution; callers get a future. Each worker
serves one request at a time; a worker that times out or faults is marked
dead and replaced, leaving other pools untouched.
"""

from __future__ import annotations

import itertools
import queue as queue_mod
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .errors import AlreadyRegistered, BadArgs, NotConfigured, ResourceExhausted, ToolFailure
from .fixtures import SceneFixture
from .tools.context import ToolContext
from .wire import (
    Attachment,
    Envelope,
    Status,
    ToolRequest,
    ToolResult,
    decode_envelope,
    encode_envelope,
    image_attachment,
    resolve_arguments,
)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    num_actors: int = 1
    resources: dict[str, float] = field(default_factory=dict)
    queue_cap: int = 64
    default_timeout_ms: int = 30_000

    def __post_init__(self):
        if not self.name:
            raise BadArgs("tool name must be nonempty")
        if self.num_actors < 1:
            raise BadArgs(f"num_actors must be >= 1, got {self.num_actors}")
        if self.queue_cap < 1:
            raise BadArgs(f"queue_cap must be >= 1, got {self.queue_cap}")
        if self.default_timeout_ms <= 0:
            raise BadArgs("default_timeout_ms must be positive")
        for res, units in self.resources.items():
            if units <= 0:
                raise BadArgs(f"resource {res!r} requires positive units, got {units}")


class WorkerState(Enum):
    IDLE = "idle"
    BUSY = "busy"
    DEAD = "dead"


@dataclass
class ToolStats:
    dispatched: int = 0
    completed: int = 0
    failed: int = 0
    timed_out: int = 0
    queue_depth: int = 0
    workers: int = 0
    workers_busy: int = 0
    recycled: int = 0
    mean_queue_wait_ms: float = 0.0
    mean_service_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "dispatched": self.dispatched,
            "completed": self.completed,
            "failed": self.failed,
            "timed_out": self.timed_out,
            "queue_depth": self.queue_depth,
            "workers": self.workers,
            "workers_busy": self.workers_busy,
            "recycled": self.recycled,
            "mean_queue_wait_ms": round(self.mean_queue_wait_ms, 3),
            "mean_service_ms": round(self.mean_service_ms, 3),
        }


@dataclass
class RouterStats:
    per_tool: dict[str, ToolStats] = field(default_factory=dict)

    def totals(self) -> ToolStats:
        agg = ToolStats()
        for st in self.per_tool.values():
            agg.dispatched += st.dispatched
            agg.completed += st.completed
            agg.failed += st.failed
            agg.timed_out += st.timed_out
            agg.queue_depth += st.queue_depth
            agg.workers += st.workers
            agg.workers_busy += st.workers_busy
            agg.recycled += st.recycled
        return agg

    def to_json(self) -> dict:
        return {name: st.to_json() for name, st in sorted(self.per_tool.items())}


# ---------------------------------------------------------------------------
# elastic scaling: a pure decision rule, never an actuation loop

class ScaleAction(Enum):
    UP = "scale_up"
    DOWN = "scale_down"
    HOLD = "hold"


@dataclass(frozen=True)
class ScaleDecision:
    action: ScaleAction
    delta: int = 0


@dataclass(frozen=True)
class ScalePolicy:
    high_watermark: int
    low_watermark: int
    max_actors: int

    def __post_init__(self):
        if not (0 <= self.low_watermark < self.high_watermark):
            raise BadArgs("watermarks must satisfy 0 <= low < high")


def autoscale_decide(stats: ToolStats, spec: ToolSpec, policy: ScalePolicy) -> ScaleDecision:
    """Queue-depth thresholding; never scales below the configured baseline."""
    actors = stats.workers or spec.num_actors
    if stats.queue_depth > policy.high_watermark and actors < policy.max_actors:
        return ScaleDecision(ScaleAction.UP, 1)
    if stats.queue_depth < policy.low_watermark and actors > spec.num_actors:
        return ScaleDecision(ScaleAction.DOWN, 1)
    return ScaleDecision(ScaleAction.HOLD, 0)


# ---------------------------------------------------------------------------

class ResourceLedger:
    """Fractional resource accounting. capacity=None admits everything."""

    def __init__(self, capacity: dict[str, float] | None = None):
        self.capacity = dict(capacity) if capacity is not None else None
        self.allocated: dict[str, float] = {}
        self._lock = threading.Lock()

    def admit(self, resources: dict[str, float], n: int) -> None:
        with self._lock:
            if self.capacity is not None:
                for res, units in resources.items():
                    want = self.allocated.get(res, 0.0) + units * n
                    have = self.capacity.get(res, 0.0)
                    if want > have + 1e-9:
                        raise ResourceExhausted(
                            f"resource {res!r}: need {want:.3g}, capacity {have:.3g}"
                        )
            for res, units in resources.items():
                self.allocated[res] = self.allocated.get(res, 0.0) + units * n

    def release(self, resources: dict[str, float], n: int) -> None:
        with self._lock:
            for res, units in resources.items():
                self.allocated[res] = max(0.0, self.allocated.get(res, 0.0) - units * n)


@dataclass
class _Job:
    request: ToolRequest
    session_id: str
    resolved_args: dict[str, Any]
    future: Future
    enqueued_at: float


class _Session:
    def __init__(self, session_id: str, fixture: SceneFixture | None, seed: int,
                 ttl_s: float | None, now: float):
        self.id = session_id
        self.fixture = fixture
        self.seed = seed
        self.ttl_s = ttl_s
        self.created = now
        self.last_used = now
        self.variables: dict[str, Any] = {}
        self.lock = threading.Lock()
        self._seq = itertools.count(1)
        self.last_wire_seq = 0  # highest seq seen on the client channel

    def next_seq(self) -> int:
        return next(self._seq)


class _Pool:
    def __init__(self, spec: ToolSpec, impl: Callable):
        self.spec = spec
        self.impl = impl
        self.queue: queue_mod.Queue[_Job] = queue_mod.Queue(maxsize=spec.queue_cap)
        self.stopping = False
        self.worker_states: dict[int, WorkerState] = {}
        self.threads: list[threading.Thread] = []
        self._slot_ids = itertools.count()


class Registry:
    """The tool router. Thread-safe; dispatch is non-blocking."""

    def __init__(self, capacity: dict[str, float] | None = None,
                 session_ttl_s: float | None = None,
                 clock: Callable[[], float] = time.monotonic):
        self.ledger = ResourceLedger(capacity)
        self.session_ttl_s = session_ttl_s
        self._clock = clock
        self._pools: dict[str, _Pool] = {}
        self._sessions: dict[str, _Session] = {}
        self._stats: dict[str, ToolStats] = {}
        self._wait_sums: dict[str, list[float]] = {}  # [wait_sum, wait_n, svc_sum, svc_n]
        self._lock = threading.Lock()
        self._session_counter = itertools.count(1)

    # -- registration ------------------------------------------------------

    def register_tool(self, spec: ToolSpec, impl: Callable) -> str:
        with self._lock:
            if spec.name in self._pools:
                raise AlreadyRegistered(spec.name)
        self.ledger.admit(spec.resources, spec.num_actors)
        pool = _Pool(spec, impl)
        with self._lock:
            if spec.name in self._pools:
                self.ledger.release(spec.resources, spec.num_actors)
                raise AlreadyRegistered(spec.name)
            self._pools[spec.name] = pool
            self._stats[spec.name] = ToolStats(workers=spec.num_actors)
            self._wait_sums[spec.name] = [0.0, 0.0, 0.0, 0.0]
        for _ in range(spec.num_actors):
            self._spawn_worker(pool)
        return spec.name

    def _spawn_worker(self, pool: _Pool) -> None:
        slot = next(pool._slot_ids)
        pool.worker_states[slot] = WorkerState.IDLE
        t = threading.Thread(
            target=self._worker_loop, args=(pool, slot),
            name=f"toolshed-{pool.spec.name}-{slot}", daemon=True,
        )
        pool.threads.append(t)
        t.start()

    # -- sessions ----------------------------------------------------------

    def create_session(self, fixture: SceneFixture | None = None, seed: int = 0,
                       ttl_s: float | None = None) -> str:
        now = self._clock()
        sid = f"s{next(self._session_counter):06d}"
        ttl = ttl_s if ttl_s is not None else self.session_ttl_s
        sess = _Session(sid, fixture, seed, ttl, now)
        if fixture is not None:
            # policies reference the scene image as "$image" from turn one
            sess.variables["image"] = image_attachment("image", fixture.image)
        with self._lock:
            self._sessions[sid] = sess
        return sid

    def session_variables(self, session_id: str) -> dict[str, Any]:
        sess = self._session(session_id)
        with sess.lock:
            return dict(sess.variables)

    def set_session_variable(self, session_id: str, name: str, value: Any) -> None:
        sess = self._session(session_id)
        with sess.lock:
            sess.variables[name] = value

    def _session(self, session_id: str) -> _Session:
        with self._lock:
            sess = self._sessions.get(session_id)
        if sess is None:
            raise BadArgs(f"unknown session {session_id!r}")
        return sess

    def gc_sessions(self, now: float | None = None) -> int:
        now = self._clock() if now is None else now
        reclaimed = 0
        with self._lock:
            for sid in list(self._sessions):
                sess = self._sessions[sid]
                if sess.ttl_s is not None and now - sess.last_used > sess.ttl_s:
                    del self._sessions[sid]
                    reclaimed += 1
        return reclaimed

    # -- dispatch ----------------------------------------------------------

    def dispatch(self, req: ToolRequest, session_id: str) -> Future:
        """Enqueue a request; returns a future resolving to a ToolResult."""
        fut: Future = Future()
        with self._lock:
            stats = self._stats.setdefault(req.tool, ToolStats())
            stats.dispatched += 1
            pool = self._pools.get(req.tool)
        try:
            sess = self._session(session_id)
        except BadArgs as exc:
            self._finish(req.tool, fut, ToolResult.fail(Status.BAD_ARGS, str(exc)))
            return fut
        sess.last_used = self._clock()

        if pool is None:
            self._finish(req.tool, fut,
                         ToolResult.fail(Status.UNKNOWN_TOOL, f"unknown tool: {req.tool}"))
            return fut
        with sess.lock:
            store = dict(sess.variables)
        try:
            resolved = resolve_arguments(req.args, store)
        except BadArgs as exc:
            self._finish(req.tool, fut,
                         ToolResult.fail(Status.BAD_ARGS, f"unknown session variable: {exc}"))
            return fut

        job = _Job(req, session_id, resolved, fut, self._clock())
        try:
            pool.queue.put_nowait(job)
        except queue_mod.Full:
            self._finish(req.tool, fut, ToolResult.fail(Status.TOOL_ERROR, "overloaded"))
            return fut
        with self._lock:
            self._stats[req.tool].queue_depth = pool.queue.qsize()
        return fut

    def call(self, req: ToolRequest, session_id: str) -> ToolResult:
        """Blocking convenience wrapper over dispatch."""
        return self.dispatch(req, session_id).result()

    def call_wire(self, payload: bytes) -> bytes:
        """Serve one encoded request envelope, returning the result envelope.

        Enforces strictly increasing client seq per session on top of what
        the codec itself validates.
        """
        env = decode_envelope(payload)
        if not isinstance(env.body, ToolRequest):
            raise BadArgs(f"expected a tool request envelope, got {env.kind.value}")
        sess = self._session(env.session_id)
        with sess.lock:
            if env.seq <= sess.last_wire_seq:
                raise BadArgs(
                    f"seq {env.seq} does not increase past {sess.last_wire_seq}")
            sess.last_wire_seq = env.seq
        result = self.call(env.body, env.session_id)
        attachments: dict[str, Attachment] = {}
        if result.image is not None:
            attachments[result.image.name] = result.image
        for v in result.variables.values():
            if isinstance(v, Attachment):
                attachments[v.name] = v
        out = Envelope.wrap(env.session_id, sess.next_seq(), result,
                            list(attachments.values()))
        return encode_envelope(out)

    def _finish(self, tool: str, fut: Future, result: ToolResult) -> None:
        with self._lock:
            stats = self._stats.setdefault(tool, ToolStats())
            if result.status is Status.OK:
                stats.completed += 1
            elif result.status is Status.TIMEOUT:
                stats.timed_out += 1
            else:
                stats.failed += 1
        fut.set_result(result)

    # -- worker ------------------------------------------------------------

    def _worker_loop(self, pool: _Pool, slot: int) -> None:
        name = pool.spec.name
        while not pool.stopping:
            try:
                job = pool.queue.get(timeout=0.05)
            except queue_mod.Empty:
                continue
            started = self._clock()
            with self._lock:
                st = self._stats[name]
                st.queue_depth = pool.queue.qsize()
                st.workers_busy += 1
                pool.worker_states[slot] = WorkerState.BUSY
                sums = self._wait_sums[name]
                sums[0] += (started - job.enqueued_at) * 1000.0
                sums[1] += 1
                st.mean_queue_wait_ms = sums[0] / sums[1]

            outcome: dict[str, Any] = {}
            runner = threading.Thread(
                target=self._execute, args=(pool, job, outcome),
                name=f"toolshed-{name}-{slot}-run", daemon=True,
            )
            runner.start()
            runner.join(timeout=job.request.timeout_ms / 1000.0)

            recycle = False
            if runner.is_alive():
                result = ToolResult.fail(
                    Status.TIMEOUT,
                    f"{name}.{job.request.method} exceeded {job.request.timeout_ms} ms",
                )
                recycle = True
            else:
                result = outcome.get("result")
                recycle = outcome.get("fault", False)
                if result is None:
                    result = ToolResult.fail(Status.TOOL_ERROR, "tool fault: no result")
                    recycle = True

            if result.status is Status.OK and result.variables:
                self._merge_variables(job.session_id, result.variables)

            finished = self._clock()
            with self._lock:
                st = self._stats[name]
                st.workers_busy -= 1
                sums = self._wait_sums[name]
                sums[2] += (finished - started) * 1000.0
                sums[3] += 1
                st.mean_service_ms = sums[2] / sums[3]
                pool.worker_states[slot] = WorkerState.IDLE
            self._finish(name, job.future, result)

            if recycle and not pool.stopping:
                with self._lock:
                    pool.worker_states[slot] = WorkerState.DEAD
                    self._stats[name].recycled += 1
                self._spawn_worker(pool)
                return  # this slot is dead; its replacement serves the queue

    def _execute(self, pool: _Pool, job: _Job, outcome: dict) -> None:
        """Runs on a disposable thread so the slot can abandon it on timeout."""
        try:
            sess = self._session(job.session_id)
            # round-trip through the wire: identical path to a remote tool server
            req_env = Envelope.wrap(job.session_id, sess.next_seq(), job.request)
            wire_req = decode_envelope(encode_envelope(req_env)).body
            with sess.lock:
                snapshot = dict(sess.variables)
            ctx = ToolContext(
                session_id=job.session_id,
                fixture=sess.fixture,
                variables=snapshot,
                seed=sess.seed,
            )
            result = pool.impl(ctx, wire_req.method, job.resolved_args)
            attachments: dict[str, Attachment] = {}
            if result.image is not None:
                attachments[result.image.name] = result.image
            for v in result.variables.values():
                if isinstance(v, Attachment):
                    attachments[v.name] = v
            res_env = Envelope.wrap(
                job.session_id, sess.next_seq(), result, list(attachments.values())
            )
            outcome["result"] = decode_envelope(encode_envelope(res_env)).body
        except BadArgs as exc:
            outcome["result"] = ToolResult.fail(Status.BAD_ARGS, str(exc))
        except ToolFailure as exc:
            outcome["result"] = ToolResult.fail(Status.TOOL_ERROR, str(exc))
        except NotConfigured as exc:
            outcome["result"] = ToolResult.fail(Status.TOOL_ERROR, f"not configured: {exc}")
        except Exception as exc:  # fault: kills this worker
            outcome["result"] = ToolResult.fail(
                Status.TOOL_ERROR, f"tool fault: {type(exc).__name__}: {exc}"
            )
            outcome["fault"] = True

    def _merge_variables(self, session_id: str, variables: dict[str, Any]) -> None:
        try:
            sess = self._session(session_id)
        except BadArgs:
            return  # session expired mid-flight; drop the write
        with sess.lock:
            sess.variables.update(variables)

    # -- stats / lifecycle ---------------------------------------------------

    def stats_snapshot(self) -> RouterStats:
        with self._lock:
            snap = RouterStats()
            for tool, st in self._stats.items():
                pool = self._pools.get(tool)
                copy = ToolStats(**vars(st))
                if pool is not None:
                    copy.queue_depth = pool.queue.qsize()
                    copy.workers = sum(
                        1 for s in pool.worker_states.values() if s is not WorkerState.DEAD
                    )
                snap.per_tool[tool] = copy
            return snap

    def spec(self, name: str) -> ToolSpec:
        with self._lock:
            if name not in self._pools:
                raise BadArgs(f"unknown tool: {name}")
            return self._pools[name].spec

    def tools(self) -> list[str]:
        with self._lock:
            return sorted(self._pools)

    def close(self) -> None:
        with self._lock:
            pools = list(self._pools.values())
        for pool in pools:
            pool.stopping = True
        for pool in pools:
            for t in pool.threads:
                t.join(timeout=1.0)
            self.ledger.release(pool.spec.resources, pool.spec.num_actors)
        with self._lock:
            self._pools.clear()

    def __enter__(self) -> "Registry":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def specs_from_config(config: dict) -> list[ToolSpec]:
    """Build ToolSpecs from the YAML schema: tool-name -> settings map."""
    specs = []
    if not isinstance(config, dict):
        raise BadArgs("tool config must be a mapping of tool name to settings")
    for name, settings in config.items():
        if not isinstance(settings, dict):
            raise BadArgs(f"tool {name!r}: settings must be a mapping")
        specs.append(ToolSpec(
            name=name,
            num_actors=int(settings.get("num_actors", 1)),
            resources={k: float(v) for k, v in settings.get("resources", {}).items()},
            queue_cap=int(settings.get("queue_cap", 64)),
            default_timeout_ms=int(settings.get("default_timeout_ms", 30_000)),
        ))
    return specs
