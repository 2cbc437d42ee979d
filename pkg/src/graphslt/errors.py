"""Exception hierarchy shared by every graphslt module."""

from __future__ import annotations


class GraphSLTError(Exception):
    """Base class for all library errors."""


class DimensionError(GraphSLTError, ValueError):
    """Operand shapes are incompatible."""


class VocabularyError(GraphSLTError, KeyError):
    """A token or id is outside the vocabulary."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ContractError(GraphSLTError, ValueError):
    """A precondition of an operation was violated."""


class BoundsError(GraphSLTError, IndexError):
    """An index lies outside the valid range."""


class ParseError(GraphSLTError, ValueError):
    """Malformed serialized input.

    ``line`` and ``field`` locate the offending position when known.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaVersionError(ParseError):
    """Serialized record carries a schema version this build cannot read."""


class ConfigError(GraphSLTError, ValueError):
    """Inconsistent configuration, e.g. protocol and checkpoint disagree."""


class TrainingError(GraphSLTError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, step: int | None = None, batch_id: str | None = None):
        self.step = step
        self.batch_id = batch_id
        super().__init__(message)
