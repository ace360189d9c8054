"""Multi-turn rollout loop: query policy, parse tags, run tools, repeat.

The loop queries the policy at most t_max times. Each assistant message is
scanned for <think>, <tool_call>, and <answer> blocks (non-nesting,
case-sensitive). An answer ends the rollout. Otherwise tool calls execute
sequentially in textual order, each result appended to the history before
the next policy query. Malformed blocks become tool-turn diagnostics the
policy can read and recover from; they never abort the rollout.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

from .errors import BadArgs, RolloutError
from .wire import Status, ToolRequest, ToolResult, args_from_json

TAGS = ("think", "tool_call", "answer")


class Role(str, Enum):
    USER = "User"
    ASSISTANT = "Assistant"
    TOOL = "Tool"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str
    images: tuple[str, ...] = ()  # content digests of attached images
    tool: str | None = None      # "tool.method" on tool turns
    status: str | None = None    # wire status, or "Malformed" for diagnostics


@dataclass(frozen=True)
class ToolCall:
    tool: str
    method: str
    args_json: str


@dataclass(frozen=True)
class Diagnostic:
    position: int
    reason: str


@dataclass(frozen=True)
class Block:
    kind: str        # one of TAGS
    content: str
    start: int
    end: int
    closed: bool


@dataclass
class ParsedAction:
    """Total parse of one assistant message. Block offsets are disjoint and
    ordered; equality ignores offsets so re-parsing serialized output is
    stable."""

    blocks: list[Block] = field(default_factory=list)
    thinks: list[str] = field(default_factory=list)
    tool_calls: list[ToolCall] = field(default_factory=list)
    answer: str | None = None
    malformed: list[Diagnostic] = field(default_factory=list)

    def tags(self) -> list[str]:
        return [b.kind for b in self.blocks if b.closed]

    def serialize(self) -> str:
        out = []
        for b in self.blocks:
            if b.closed:
                out.append(f"<{b.kind}>{b.content}</{b.kind}>")
            else:
                out.append(f"<{b.kind}>{b.content}")
        return "".join(out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParsedAction):
            return NotImplemented
        return (
            [(b.kind, b.content, b.closed) for b in self.blocks]
            == [(b.kind, b.content, b.closed) for b in other.blocks]
            and self.thinks == other.thinks
            and self.tool_calls == other.tool_calls
            and self.answer == other.answer
            and [d.reason for d in self.malformed] == [d.reason for d in other.malformed]
        )


def parse_actions(raw: str) -> ParsedAction:
    """Scan for tag blocks; never raises. Text outside tags is ignored."""
    parsed = ParsedAction()
    pos = 0
    n = len(raw)
    while pos < n:
        nxt: tuple[int, str] | None = None
        for tag in TAGS:
            i = raw.find(f"<{tag}>", pos)
            if i != -1 and (nxt is None or i < nxt[0]):
                nxt = (i, tag)
        if nxt is None:
            break
        start, tag = nxt
        open_end = start + len(tag) + 2
        close_idx = raw.find(f"</{tag}>", open_end)
        if close_idx == -1:
            content = raw[open_end:]
            parsed.blocks.append(Block(tag, content, start, n, closed=False))
            parsed.malformed.append(Diagnostic(start, f"unclosed <{tag}> tag"))
            break
        content = raw[open_end:close_idx]
        end = close_idx + len(tag) + 3
        parsed.blocks.append(Block(tag, content, start, end, closed=True))
        pos = end

        if tag == "think":
            parsed.thinks.append(content)
        elif tag == "answer":
            if parsed.answer is None:
                parsed.answer = content
        else:
            call, reason = _parse_call_body(content)
            if call is not None:
                parsed.tool_calls.append(call)
            else:
                parsed.malformed.append(Diagnostic(start, reason))
    return parsed


def _parse_call_body(content: str) -> tuple[ToolCall | None, str]:
    try:
        obj = json.loads(content)
    except json.JSONDecodeError as exc:
        return None, f"tool_call body is not valid JSON: {exc.msg}"
    if not isinstance(obj, dict):
        return None, "tool_call body must be a JSON object"
    name = obj.get("name")
    if not isinstance(name, str) or "." not in name:
        return None, 'tool_call "name" must be a "tool.method" string'
    arguments = obj.get("arguments")
    if not isinstance(arguments, dict):
        return None, 'tool_call "arguments" must be a JSON object'
    tool, method = name.split(".", 1)
    return ToolCall(tool, method, json.dumps(arguments, sort_keys=True)), ""


# ---------------------------------------------------------------------------
# policies

class Policy(Protocol):
    def __call__(self, history: list[Turn], turn_index: int) -> str: ...


class ScriptedPolicy:
    """Replays canned assistant messages, optionally keyed by turn index.

    Turns past the script's end repeat the last message, so exhaustion
    behavior (a policy that never answers) is scriptable with one line.
    """

    def __init__(self, entries: list[Any]):
        if not entries:
            raise BadArgs("scripted policy needs at least one entry")
        by_turn: dict[int, str] = {}
        implicit = 0
        for e in entries:
            if isinstance(e, str):
                by_turn[implicit] = e
                implicit += 1
            elif isinstance(e, dict) and "text" in e:
                idx = int(e["turn"]) if "turn" in e else implicit
                by_turn[idx] = str(e["text"])
                implicit = max(implicit, idx) + 1
            else:
                raise BadArgs(f"bad scripted policy entry: {e!r}")
        self._by_turn = by_turn
        self._max_turn = max(by_turn)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedPolicy":
        entries = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                entries.append(json.loads(line))
        return cls(entries)

    def __call__(self, history: list[Turn], turn_index: int) -> str:
        idx = turn_index
        while idx >= 0:
            if idx in self._by_turn:
                return self._by_turn[idx]
            idx -= 1
        return self._by_turn[self._max_turn]


class RemoteChatPolicy:
    """POSTs the dialogue to a chat endpoint; transport failures are rollout
    errors, not absent answers."""

    def __init__(self, endpoint: str, timeout_s: float = 60.0):
        self.endpoint = endpoint
        self.timeout_s = timeout_s

    def __call__(self, history: list[Turn], turn_index: int) -> str:
        import httpx

        payload = {
            "turn": turn_index,
            "messages": [
                {"role": t.role.value, "text": t.text, "images": list(t.images)}
                for t in history
            ],
        }
        try:
            resp = httpx.post(self.endpoint, json=payload, timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()["text"]
        except Exception as exc:
            raise RolloutError(f"policy transport failure: {exc}") from exc


# ---------------------------------------------------------------------------
# session access

class SessionHandle(Protocol):
    session_id: str

    def call_tool(self, tool: str, method: str, args: dict, timeout_ms: int) -> ToolResult: ...
    def close(self) -> None: ...


class LocalSession:
    """Session bound to an in-process registry."""

    def __init__(self, registry, fixture=None, seed: int = 0):
        self._registry = registry
        self.session_id = registry.create_session(fixture=fixture, seed=seed)

    def call_tool(self, tool: str, method: str, args: dict, timeout_ms: int) -> ToolResult:
        req = ToolRequest(tool=tool, method=method, args=args, timeout_ms=timeout_ms)
        return self._registry.call(req, self.session_id)

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# the loop

@dataclass(frozen=True)
class RolloutConfig:
    t_max: int = 10
    n_group: int = 5
    timeout_ms: int = 30_000
    seed: int = 0

    def __post_init__(self):
        if self.t_max < 1:
            raise BadArgs(f"t_max must be >= 1, got {self.t_max}")
        if self.n_group < 1:
            raise BadArgs(f"n_group must be >= 1, got {self.n_group}")


@dataclass
class RolloutResult:
    history: list[Turn]
    answer: str | None
    turns_used: int
    tool_call_count: int
    tags: list[str] = field(default_factory=list)
    aborted: bool = False
    failed: bool = False
    error: str = ""
    policy_ms: list[float] = field(default_factory=list)
    tool_ms: list[float] = field(default_factory=list)


EventFn = Callable[[str, Any], None]


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _tool_turn(result: ToolResult, tool: str, method: str) -> Turn:
    images = (_digest(result.image.data),) if result.image is not None else ()
    text = f"[{tool}.{method}] {result.status.value}: {result.text}"
    return Turn(Role.TOOL, text, images, tool=f"{tool}.{method}",
                status=result.status.value)


def run_rollout(question: str, session: SessionHandle, policy: Policy,
                cfg: RolloutConfig, on_event: EventFn | None = None,
                should_abort: Callable[[], bool] | None = None) -> RolloutResult:
    import time as _time

    emit = on_event or (lambda kind, payload: None)
    history: list[Turn] = [Turn(Role.USER, question)]
    result = RolloutResult(history=history, answer=None, turns_used=0, tool_call_count=0)

    for turn_index in range(cfg.t_max):
        if should_abort is not None and should_abort():
            result.aborted = True
            emit("aborted", {"reason": "user abort"})
            return result

        t0 = _time.perf_counter()
        try:
            raw = policy(history, turn_index)
        except RolloutError:
            raise
        except Exception as exc:
            raise RolloutError(f"policy failure: {exc}") from exc
        result.policy_ms.append((_time.perf_counter() - t0) * 1000.0)
        result.turns_used = turn_index + 1

        history.append(Turn(Role.ASSISTANT, raw))
        parsed = parse_actions(raw)
        result.tags.extend(parsed.tags())
        for think in parsed.thinks:
            emit("think", {"text": think})

        if parsed.answer is not None:
            result.answer = parsed.answer
            emit("answer", {"text": parsed.answer})
            return result

        # execute tool calls and surface diagnostics in textual block order
        call_iter = iter(parsed.tool_calls)
        for block in parsed.blocks:
            if block.kind != "tool_call":
                continue
            if should_abort is not None and should_abort():
                result.aborted = True
                emit("aborted", {"reason": "user abort"})
                return result
            call = _parse_call_body(block.content)[0] if block.closed else None
            if call is not None:
                call = next(call_iter)  # same call, keeps list/block order aligned
                emit("tool_call", {"tool": call.tool, "method": call.method,
                                   "args": json.loads(call.args_json)})
                t0 = _time.perf_counter()
                tool_result = _execute_call(session, call, cfg.timeout_ms)
                result.tool_ms.append((_time.perf_counter() - t0) * 1000.0)
                result.tool_call_count += 1
                history.append(_tool_turn(tool_result, call.tool, call.method))
                emit("tool_result", {"tool": call.tool, "method": call.method,
                                     "status": tool_result.status.value,
                                     "text": tool_result.text,
                                     "result": tool_result})
            else:
                reason = _block_reason(block, parsed.malformed)
                history.append(Turn(Role.TOOL, f"[malformed tool_call] {reason}",
                                    status="Malformed"))
                emit("tool_result", {"tool": None, "method": None,
                                     "status": "Malformed", "text": reason,
                                     "result": None})

        # an unclosed think/answer consumes to end of text; report it too
        if parsed.blocks and not parsed.blocks[-1].closed and parsed.blocks[-1].kind != "tool_call":
            reason = _block_reason(parsed.blocks[-1], parsed.malformed)
            history.append(Turn(Role.TOOL, f"[malformed block] {reason}",
                                status="Malformed"))
            emit("tool_result", {"tool": None, "method": None,
                                 "status": "Malformed", "text": reason,
                                 "result": None})
    return result


def _block_reason(block: Block, diags: list[Diagnostic]) -> str:
    for d in diags:
        if d.position == block.start:
            return d.reason
    return "malformed tool_call"


def _execute_call(session: SessionHandle, call: ToolCall, timeout_ms: int) -> ToolResult:
    args = args_from_json(json.loads(call.args_json))
    try:
        return session.call_tool(call.tool, call.method, args, timeout_ms)
    except Exception as exc:
        raise RolloutError(f"tool transport failure: {exc}") from exc


@dataclass
class GroupSlot:
    rollout_idx: int
    result: RolloutResult | None
    failed: bool = False
    error: str = ""


def run_group(question: str, session_factory: Callable[[int], SessionHandle],
              policy: Policy, cfg: RolloutConfig,
              max_parallel: int | None = None) -> list[GroupSlot]:
    """N independent rollouts with distinct seeds; slot order is by rollout
    index regardless of completion order. A RolloutError fails only its slot."""

    def one(idx: int) -> GroupSlot:
        session = session_factory(cfg.seed + idx)
        try:
            res = run_rollout(question, session, policy, cfg)
            return GroupSlot(idx, res)
        except RolloutError as exc:
            return GroupSlot(idx, None, failed=True, error=str(exc))
        finally:
            session.close()

    workers = max_parallel or cfg.n_group
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, range(cfg.n_group)))
