"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MolrError(Exception):
    """Base class for all library errors."""


class ParseError(MolrError, ValueError):
    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnexpectedCharacter(ParseError):
    pass


class UnmatchedRingClosure(ParseError):
    pass


class UnmatchedParenthesis(ParseError):
    pass


class ValenceExceeded(ParseError):
    pass


class EmptyInput(ParseError):
    pass


class UnknownElement(ParseError):
    pass


class MalformedRecord(ParseError):
    pass


class EmptyCorpus(MolrError, ValueError):
    pass


class InvalidMap(MolrError, ValueError):
    pass


class InvalidPermutation(MolrError, ValueError):
    pass


class ShapeMismatch(MolrError, ValueError):
    pass


class SegmentOutOfRange(MolrError, IndexError):
    pass


class EmptySegment(MolrError, ValueError):
    pass


class NonScalarLoss(MolrError, ValueError):
    pass


class ConfigError(MolrError, ValueError):
    pass


class EmptyGraph(MolrError, ValueError):
    pass


class EmptySide(MolrError, ValueError):
    pass


class BatchTooSmall(MolrError, ValueError):
    pass


class VersionMismatch(MolrError):
    pass


class CorruptWeights(MolrError):
    pass


class TruthMissing(MolrError, IndexError):
    pass


class EmptyRanks(MolrError, ValueError):
    pass


class SingleClass(MolrError, ValueError):
    pass


class TooLarge(MolrError, ValueError):
    pass


class SizeOutOfRange(MolrError, ValueError):
    pass


class TrainingError(MolrError):
    pass


class DataError(MolrError):
    """Bad record in an input file; ``line`` is 1-based."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path, self.line = path, line
        where = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(where + message)
