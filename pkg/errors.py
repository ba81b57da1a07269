from __future__ import annotations


class PlaytestError(Exception):
    """Root of every error raised by the framework."""


# ---------- knowledge graph ----------
class KindConflict(PlaytestError):
    def __init__(self, name: str, existing: str, requested: str):
        super().__init__(f"node {name!r} is {existing}, not {requested}")
        self.name = name
        self.existing = existing
        self.requested = requested


class EmptyPattern(PlaytestError):
    pass


class UnknownNode(PlaytestError):
    pass


class MalformedDocument(PlaytestError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


# ---------- extraction ----------
class ScriptFailure(PlaytestError):
    pass


# ---------- gateway ----------
class ProviderError(PlaytestError):
    def __init__(self, message: str, raw_body: str = ""):
        super().__init__(message)
        self.raw_body = raw_body


class ProviderTimeout(ProviderError):
    pass


class SchemaError(PlaytestError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnboundPlaceholder(PlaytestError):
    def __init__(self, name: str):
        super().__init__(f"placeholder {{{name}}} is not bound")
        self.name = name


class ToolRoundsExceeded(PlaytestError):
    pass


class UnregisteredTool(PlaytestError):
    pass


# ---------- pipeline ----------
class MalformedLog(PlaytestError):
    pass


class DeltaInconsistent(PlaytestError):
    pass


class ImpactMismatch(PlaytestError):
    def __init__(self, item: str, missing: list[str], extra: list[str]):
        super().__init__(f"inferred items for {item!r} disagree with the traversal: missing {missing}, extra {extra}")
        self.item = item
        self.missing = missing
        self.extra = extra


class VocabularyViolation(PlaytestError):
    def __init__(self, steps: list[str]):
        super().__init__(f"steps outside the action vocabulary: {steps}")
        self.steps = steps


# ---------- environments ----------
class UnknownEnvironment(PlaytestError):
    pass


class UnknownVersion(PlaytestError):
    pass


class VersionExists(PlaytestError):
    pass


class UnknownEntry(PlaytestError):
    pass


class PlanningError(PlaytestError):
    pass


# ---------- harness ----------
class EmptyTraces(PlaytestError):
    pass


class ConfigError(PlaytestError):
    pass


def error_record(where, exc: Exception) -> dict:
    """Serializable record for errors collected by batch operations."""
    return {"at": where, "error": type(exc).__name__, "message": str(exc)}
