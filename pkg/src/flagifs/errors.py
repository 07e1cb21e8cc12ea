"""Exception types shared across the package."""

from __future__ import annotations


class FlagIFSError(Exception):
    """Base class for every error raised by this package."""


class SingularMatrix(FlagIFSError):
    pass


class ModuliCollision(FlagIFSError):
    pass


class ComplexPair(FlagIFSError):
    pass


class DimensionMismatch(FlagIFSError):
    pass


class ExhaustedFuture(FlagIFSError):
    pass


class ConfigError(FlagIFSError):
    """Invalid IFS or experiment definition.

    ``where`` names the offending field (dotted path) and ``line`` the
    source line when the document was parsed from text.
    """

    def __init__(self, message, where=None, line=None):
        self.message = message
        self.where = where
        self.line = line
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if where:
            parts.append(where)
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NoFixedPoint(FlagIFSError):
    pass


class NotInCone(FlagIFSError):
    pass


class NotManeuverable(FlagIFSError):
    def __init__(self, message, cell=None, signs=None):
        self.cell = cell
        self.signs = signs
        super().__init__(message)


class WitnessMiss(FlagIFSError):
    pass


class NotReached(FlagIFSError):
    def __init__(self, kmax, message=None):
        self.kmax = kmax
        super().__init__(message or f"target not reached within {kmax} symbols")


class RadiusCollapse(FlagIFSError):
    pass


class ConeExit(FlagIFSError):
    pass


class ContractionLost(FlagIFSError):
    pass


class ContractFailure(FlagIFSError):
    """An improve step produced a record but a stated contract failed
    after the budget cap was reached."""
