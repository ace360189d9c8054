"""Execution context handed to every tool invocation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import BadArgs, ToolFailure
from ..fixtures import SceneFixture
from ..wire import Attachment, attachment_value


@dataclass
class ToolContext:
    """What a tool sees: the bound fixture, a snapshot of session variables,
    and the session's deterministic seed."""

    session_id: str
    fixture: SceneFixture | None = None
    variables: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def require_fixture(self) -> SceneFixture:
        if self.fixture is None:
            raise ToolFailure("session has no bound scene")
        return self.fixture

    def value(self, name: str) -> Any:
        """Session variable decoded to a plain numpy/python value."""
        if name not in self.variables:
            raise BadArgs(f"unknown session variable {name!r}")
        v = self.variables[name]
        return attachment_value(v) if isinstance(v, Attachment) else v

    def rng(self, *salt: object) -> np.random.Generator:
        """Deterministic generator keyed on session seed plus call-site salt."""
        key = "\x1f".join([str(self.seed)] + [str(s) for s in salt])
        digest = hashlib.sha256(key.encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))
