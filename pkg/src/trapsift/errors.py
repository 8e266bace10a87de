"""Exception types shared across the package."""

from __future__ import annotations


class TrapsiftError(Exception):
    """Base class for every error raised by trapsift."""


class ManifestParseError(TrapsiftError):
    """Malformed manifest document, with location when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class IntegrityError(TrapsiftError):
    """Referential integrity violation: dangling or duplicate ids."""

    def __init__(self, message: str, ids: tuple[str, ...] = ()):
        if ids:
            message = f"{message}: {', '.join(ids)}"
        super().__init__(message)
        self.ids = ids


class ValidationError(TrapsiftError):
    """A value violates a documented invariant."""


class ConfigError(TrapsiftError):
    """Inconsistent or incomplete configuration for an operation."""


class JoinError(TrapsiftError):
    """Scores and labels share no image ids (likely wrong split/run pairing)."""


class DecodeError(TrapsiftError):
    """Image bytes could not be decoded."""


class BackendError(TrapsiftError):
    """An inference backend failed to load or run."""


class BenchAborted(BackendError):
    """Backend failed mid-benchmark; carries the partial report."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class UnsupportedFeatureError(TrapsiftError):
    """The platform lacks a required capability (e.g. memory introspection)."""
