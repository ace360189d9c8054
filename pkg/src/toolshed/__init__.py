"""Tool-orchestration runtime for multi-turn spatial-reasoning rollouts."""

from .engine import (
    LocalSession,
    ParsedAction,
    RolloutConfig,
    RolloutResult,
    ScriptedPolicy,
    Turn,
    parse_actions,
    run_group,
    run_rollout,
)
from .errors import (
    BadArgs,
    DecodeError,
    EncodeError,
    LoadError,
    NotConfigured,
    ResourceExhausted,
    RolloutError,
    ScoreError,
    ToolFailure,
    ToolshedError,
)
from .fixtures import SceneFixture, load_dataset, save_dataset
from .grpo import LossParams, RolloutGroup, group_advantages, grpo_loss
from .harness import BatchReport, TraceRecord, balance_answers, run_batch, score_traces
from .registry import (
    Registry,
    ScaleDecision,
    ScalePolicy,
    ToolSpec,
    autoscale_decide,
    specs_from_config,
)
from .tools import DEFAULT_TOOL_CONFIG, build_toolbox
from .wire import (
    Attachment,
    Envelope,
    Point2,
    Status,
    ToolRequest,
    ToolResult,
    VariableRef,
    decode_envelope,
    encode_envelope,
)

__version__ = "0.1.0"

__all__ = [
    "Attachment",
    "BadArgs",
    "BatchReport",
    "DEFAULT_TOOL_CONFIG",
    "DecodeError",
    "EncodeError",
    "Envelope",
    "LoadError",
    "LocalSession",
    "LossParams",
    "NotConfigured",
    "ParsedAction",
    "Point2",
    "Registry",
    "ResourceExhausted",
    "RolloutConfig",
    "RolloutError",
    "RolloutGroup",
    "RolloutResult",
    "ScaleDecision",
    "ScalePolicy",
    "SceneFixture",
    "ScoreError",
    "ScriptedPolicy",
    "Status",
    "ToolFailure",
    "ToolRequest",
    "ToolResult",
    "ToolSpec",
    "ToolshedError",
    "TraceRecord",
    "Turn",
    "VariableRef",
    "autoscale_decide",
    "balance_answers",
    "build_toolbox",
    "decode_envelope",
    "encode_envelope",
    "group_advantages",
    "grpo_loss",
    "load_dataset",
    "parse_actions",
    "run_batch",
    "run_group",
    "run_rollout",
    "save_dataset",
    "score_traces",
    "specs_from_config",
]
