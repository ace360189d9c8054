"""Shared exception types."""


class ToolshedError(Exception):
    """Base class for all errors raised by this package."""


class EncodeError(ToolshedError):
    """Envelope violates an invariant or exceeds a cap during encoding."""


class DecodeError(ToolshedError):
    """Byte stream is not a valid frame. Carries the offending position."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at byte {position})"
        super().__init__(message)
        self.position = position


class BadArgs(ToolshedError):
    """Caller-supplied arguments violate a precondition."""


class AlreadyRegistered(ToolshedError):
    """A tool with this name is already registered."""


class ResourceExhausted(ToolshedError):
    """The resource ledger cannot admit the requested allocation."""


class LoadError(ToolshedError):
    """A fixture dataset failed validation. Lists every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__("dataset invalid:\n" + "\n".join(f"  - {v}" for v in violations))
        self.violations = violations


class ScoreError(ToolshedError):
    """A trace references a sample that cannot be resolved."""


class RolloutError(ToolshedError):
    """Policy transport failed. Distinct from a rollout that ends without an answer."""


class NotConfigured(ToolshedError):
    """A live-hardware stub was invoked without real hardware behind it."""


class ToolFailure(ToolshedError):
    """Domain-level tool failure (e.g. nothing to segment). Becomes a
    ToolError-status result on the wire, never a transport fault."""
