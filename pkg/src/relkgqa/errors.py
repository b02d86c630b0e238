"""Exception hierarchy shared by every module."""

from __future__ import annotations


class KGError(Exception):
    """Base class for all errors raised by relkgqa."""


class GraphParseError(KGError, ValueError):
    """A triple file line could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None) -> None:
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class EmptyGraphError(KGError, ValueError):
    """The input contained no triples."""


class UnknownEntityError(KGError, LookupError):
    """An entity id or name is not present in the graph."""


class UnknownRelationError(KGError, LookupError):
    """A relation id or name is not present in the graph."""


class UsageError(KGError, ValueError):
    """An operation was called with arguments that violate its contract."""


class UnreachableSeedsError(KGError):
    """Seed entities cannot be connected within the expansion radius."""


class SamplingError(KGError):
    """Query sampling ran out of retries or eligible entities."""


class ExtractionError(KGError, ValueError):
    """No registered question template matches the text."""
