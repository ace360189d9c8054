"""Batch runner: rollout groups over a fixture dataset, scoring, traces.

Trace records are append-only JSONL, one record per rollout, written in
(sample, rollout index) order so equal-seed runs produce byte-identical
files. Timing lives under a single "timing" key that golden comparisons
drop before diffing.
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .engine import (
    LocalSession,
    Policy,
    Role,
    RolloutConfig,
    Turn,
    parse_actions,
    run_group,
)
from .errors import BadArgs, ScoreError
from .fixtures import QASpec, SceneFixture
from .grpo import group_advantages
from .rewards import (
    GraspKeypoints,
    Region,
    binary_reward,
    combine_with_format,
    format_score,
    mace_score,
    miou_reward,
    nndc_reward,
    pose_hull_iou_reward,
)

FAILURE_KINDS = ("Timeout", "ToolError", "malformed", "exhausted")


@dataclass
class TraceRecord:
    sample_id: str
    rollout_idx: int
    turns: list[dict[str, Any]]
    answer: str | None
    reward: float
    advantage: float | None
    failed: bool = False
    aborted: bool = False
    error: str = ""
    timing: dict[str, list[float]] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "sample_id": self.sample_id,
            "rollout_idx": self.rollout_idx,
            "turns": self.turns,
            "answer": self.answer,
            "reward": self.reward,
            "advantage": self.advantage,
            "failed": self.failed,
            "aborted": self.aborted,
            "error": self.error,
            "timing": self.timing,
        }
        return json.dumps(doc, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        doc = json.loads(line)
        try:
            return cls(
                sample_id=doc["sample_id"],
                rollout_idx=doc["rollout_idx"],
                turns=doc["turns"],
                answer=doc["answer"],
                reward=doc["reward"],
                advantage=doc["advantage"],
                failed=doc.get("failed", False),
                aborted=doc.get("aborted", False),
                error=doc.get("error", ""),
                timing=doc.get("timing", {}),
            )
        except KeyError as exc:
            raise ScoreError(f"trace record missing field {exc}") from exc


@dataclass
class BatchReport:
    samples: int = 0
    rollouts: int = 0
    mean_reward: float = 0.0
    per_task: dict[str, dict[str, float]] = field(default_factory=dict)
    answer_histogram: dict[str, int] = field(default_factory=dict)
    tool_usage: dict[str, int] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "samples": self.samples,
            "rollouts": self.rollouts,
            "mean_reward": self.mean_reward,
            "per_task": self.per_task,
            "answer_histogram": self.answer_histogram,
            "tool_usage": self.tool_usage,
            "failures": self.failures,
        }
        return json.dumps(doc, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# answer scoring

def _parse_json_answer(text: str) -> Any | None:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return None


def _as_xy(v: Any) -> tuple[float, float] | None:
    if (isinstance(v, (list, tuple)) and len(v) == 2
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)):
        return float(v[0]), float(v[1])
    return None


def _as_xy_list(v: Any) -> list[tuple[float, float]] | None:
    if not isinstance(v, list):
        return None
    pts = [_as_xy(p) for p in v]
    if any(p is None for p in pts):
        return None
    return pts  # type: ignore[return-value]


def score_answer(qa: QASpec, answer: str | None) -> float:
    """Accuracy term for one rollout; unparseable or missing answers score 0."""
    if answer is None:
        return 0.0
    if qa.task == "choice":
        return binary_reward(answer, qa.answer or "")
    parsed = _parse_json_answer(answer)
    if qa.task == "boxes":
        if not isinstance(parsed, list):
            return 0.0
        boxes = []
        for b in parsed:
            if not (isinstance(b, (list, tuple)) and len(b) == 4
                    and all(isinstance(c, (int, float)) for c in b)):
                return 0.0
            boxes.append(tuple(float(c) for c in b))
        if not boxes:
            return 0.0
        return miou_reward(boxes, list(qa.boxes or ()))
    if qa.task == "point":
        pt = _as_xy(parsed)
        if pt is None or qa.region is None:
            return 0.0
        return nndc_reward(pt, qa.region)
    if qa.task == "pose":
        corners = _as_xy_list(parsed)
        if corners is None:
            return 0.0
        return pose_hull_iou_reward(corners, list(qa.corners or ()))
    if qa.task == "grasp":
        kp = _parse_grasp(parsed)
        if kp is None or qa.grasp is None or qa.gripper_width is None:
            return 0.0
        # MACE lives on a 0..100 scale; rewards stay in [0, 1]
        return mace_score(kp, qa.grasp, qa.gripper_width).score / 100.0
    raise BadArgs(f"unknown task kind: {qa.task}")


_GRASP_KEYS = ("center", "left_base", "right_base", "left_tip", "right_tip")


def _parse_grasp(parsed: Any) -> GraspKeypoints | None:
    if isinstance(parsed, dict):
        pts = [_as_xy(parsed.get(k)) for k in _GRASP_KEYS]
    elif isinstance(parsed, list) and len(parsed) == 5:
        pts = [_as_xy(p) for p in parsed]
    else:
        return None
    if any(p is None for p in pts):
        return None
    return GraspKeypoints(*pts)  # type: ignore[arg-type]


def trace_tags(turns: Iterable[dict[str, Any]]) -> list[str]:
    tags: list[str] = []
    for t in turns:
        if t.get("role") == Role.ASSISTANT.value:
            tags.extend(parse_actions(t["text"]).tags())
    return tags


def score_record_reward(qa: QASpec, answer: str | None,
                        turns: Iterable[dict[str, Any]]) -> float:
    r_acc = score_answer(qa, answer)
    r_fmt = format_score(trace_tags(turns))
    return combine_with_format(r_acc, r_fmt)


# ---------------------------------------------------------------------------
# balancing

def balance_answers(fixtures: list[SceneFixture], seed: int = 0) -> list[SceneFixture]:
    """Largest subset of choice fixtures with equal per-answer counts.

    Selection within the majority classes is seeded; output preserves the
    input order of the survivors.
    """
    for f in fixtures:
        if f.qa.task != "choice":
            raise BadArgs(f"balance_answers needs choice tasks, got {f.qa.task!r} in {f.id}")
    by_class: dict[str, list[int]] = {}
    for i, f in enumerate(fixtures):
        by_class.setdefault(f.qa.answer or "", []).append(i)
    if len(by_class) < 2:
        raise BadArgs("cannot balance a single answer class")
    minority = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for cls in sorted(by_class):
        idx = by_class[cls]
        if len(idx) == minority:
            keep.update(idx)
        else:
            chosen = rng.choice(len(idx), size=minority, replace=False)
            keep.update(idx[i] for i in chosen)
    return [f for i, f in enumerate(fixtures) if i in keep]


# ---------------------------------------------------------------------------
# batch execution

def _turn_doc(t: Turn) -> dict[str, Any]:
    return {
        "role": t.role.value,
        "text": t.text,
        "tool": t.tool,
        "status": t.status,
        "digests": list(t.images),
    }


class TraceWriter:
    """Single serialization point for trace appends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        # truncate: a rerun with the same --out replaces the old traces
        self._fh = open(self.path, "w", encoding="utf-8")

    def write(self, record: TraceRecord) -> None:
        line = record.to_json() + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def _classify_failures(records: list[TraceRecord]) -> Counter:
    c: Counter = Counter({k: 0 for k in FAILURE_KINDS})
    for r in records:
        for t in r.turns:
            st = t.get("status")
            if st == "Timeout":
                c["Timeout"] += 1
            elif st in ("ToolError", "BadArgs", "UnknownTool"):
                c["ToolError"] += 1
            elif st == "Malformed":
                c["malformed"] += 1
        if r.answer is None and not r.aborted:
            c["exhausted"] += 1
    return c


def _histogram_key(qa: QASpec, answer: str | None) -> str:
    if answer is None:
        return "<none>"
    if qa.task == "choice":
        return answer.strip().lower()
    return "<answered>"


def _build_report(records: list[TraceRecord],
                  qa_by_id: dict[str, QASpec]) -> BatchReport:
    report = BatchReport(failures={k: 0 for k in FAILURE_KINDS})
    if not records:
        return report
    report.samples = len({r.sample_id for r in records})
    report.rollouts = len(records)
    report.mean_reward = float(np.mean([r.reward for r in records]))

    per_task: dict[str, list[float]] = {}
    hist: Counter = Counter()
    usage: Counter = Counter()
    for r in records:
        qa = qa_by_id[r.sample_id]
        per_task.setdefault(qa.task, []).append(r.reward)
        hist[_histogram_key(qa, r.answer)] += 1
        for t in r.turns:
            tool = t.get("tool")
            if tool:
                usage[tool.split(".", 1)[0]] += 1
    report.per_task = {
        task: {"count": len(v), "mean_reward": float(np.mean(v))}
        for task, v in sorted(per_task.items())
    }
    report.answer_histogram = dict(sorted(hist.items()))
    report.tool_usage = dict(sorted(usage.items()))
    report.failures = dict(_classify_failures(records))
    return report


def local_session_factory(registry) -> Callable[[SceneFixture, int], LocalSession]:
    def make(fixture: SceneFixture, seed: int) -> LocalSession:
        return LocalSession(registry, fixture=fixture, seed=seed)
    return make


def run_batch(fixtures: list[SceneFixture], policy: Policy, cfg: RolloutConfig,
              session_factory: Callable[[SceneFixture, int], Any],
              out_path: str | Path,
              parallel: int | None = None,
              on_record: Callable[[TraceRecord], None] | None = None,
              ) -> BatchReport:
    """One rollout group per fixture; groups run in dataset order so the
    trace file is reproducible byte-for-byte (timing aside)."""
    writer = TraceWriter(out_path)
    records: list[TraceRecord] = []
    qa_by_id = {f.id: f.qa for f in fixtures}
    try:
        for fixture in fixtures:
            def make_session(seed: int, _fx=fixture):
                return session_factory(_fx, seed)

            slots = run_group(fixture.qa.question, make_session, policy, cfg,
                              max_parallel=parallel)
            rewards: list[float] = []
            partial: list[TraceRecord] = []
            for slot in slots:
                if slot.failed or slot.result is None:
                    rec = TraceRecord(fixture.id, slot.rollout_idx, [], None,
                                      0.0, None, failed=True, error=slot.error)
                else:
                    res = slot.result
                    turns = [_turn_doc(t) for t in res.history]
                    reward = score_record_reward(fixture.qa, res.answer, turns)
                    rec = TraceRecord(
                        fixture.id, slot.rollout_idx, turns, res.answer,
                        reward, None, aborted=res.aborted,
                        timing={"policy_ms": res.policy_ms, "tool_ms": res.tool_ms},
                    )
                rewards.append(rec.reward)
                partial.append(rec)
            if len(rewards) >= 2:
                adv = group_advantages(rewards)
                for rec, a in zip(partial, adv):
                    rec.advantage = float(a)
            for rec in partial:
                writer.write(rec)
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
    finally:
        writer.close()
    return _build_report(records, qa_by_id)


def read_traces(path: str | Path) -> list[TraceRecord]:
    records = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(TraceRecord.from_json(line))
        except json.JSONDecodeError as exc:
            raise ScoreError(f"bad trace line {n}: {exc.msg}") from exc
    return records


def score_traces(path: str | Path, fixtures: list[SceneFixture]) -> BatchReport:
    """Re-score stored traces from their recorded turns; pure, so recomputed
    rewards must match the stored values exactly."""
    qa_by_id = {f.id: f.qa for f in fixtures}
    records = read_traces(path)
    for r in records:
        qa = qa_by_id.get(r.sample_id)
        if qa is None:
            raise ScoreError(f"trace references unknown sample: {r.sample_id}")
        if r.failed:
            recomputed = 0.0
        else:
            recomputed = score_record_reward(qa, r.answer, r.turns)
        if recomputed != r.reward:
            raise ScoreError(
                f"stored reward {r.reward!r} != recomputed {recomputed!r} "
                f"for {r.sample_id}#{r.rollout_idx}")
    return _build_report(records, qa_by_id)


def strip_timing(path: str | Path) -> list[str]:
    """Trace lines with the timing key removed, for golden comparisons."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        doc.pop("timing", None)
        out.append(json.dumps(doc, sort_keys=True))
    return out
