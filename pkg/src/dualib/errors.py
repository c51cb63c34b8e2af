"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DualibError(Exception):
    """Base class for every domain error raised by this package."""


class ConfigError(DualibError):
    pass


class PersistenceError(DualibError):
    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class CorruptionError(PersistenceError):
    """A library or checkpoint file does not parse; ``key_path`` names the bad field."""

    def __init__(self, path, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(path, f"corrupt at {key_path or '<root>'}: {message}")


class IntegrityError(DualibError):
    """A loaded value violates a data-model invariant."""

    def __init__(self, invariant: str, message: str):
        self.invariant = invariant
        super().__init__(f"[{invariant}] {message}")


class Level0GuardError(DualibError):
    pass


class SceneError(DualibError):
    pass


class UnanswerableInstance(SceneError):
    pass


class ToolError(DualibError):
    """Raised by a Level-0 tool implementation; surfaces in traces with the tool name."""


class ProviderError(DualibError):
    """Any provider failure. Resumable: the pipeline keeps the last checkpoint."""


class TransportError(ProviderError):
    pass


class MalformedReplyError(ProviderError):
    def __init__(self, role: str, message: str, raw: str = ""):
        self.role = role
        self.raw = raw
        super().__init__(f"{role}: {message}")


class ScriptMissError(ProviderError):
    pass


class EmbeddingError(ProviderError):
    pass


class AlignmentError(DualibError):
    def __init__(self, orphans):
        self.orphans = sorted(orphans)
        super().__init__(f"question ids without a counterpart: {', '.join(self.orphans)}")


class UndefinedMetricError(DualibError):
    pass


class FingerprintMismatchError(DualibError):
    pass


class PipelineInterrupted(DualibError):
    def __init__(self, checkpoint, cause: BaseException):
        self.checkpoint = str(checkpoint)
        self.cause = cause
        super().__init__(
            f"run interrupted ({cause}); resume with: dualib resume --checkpoint {self.checkpoint}"
        )
