"""Exception types raised by the toolkit.

All subclass :class:`ValueError` so callers that only know the builtin
contract keep working; the CLI maps them to exit codes.
"""

from __future__ import annotations


class AuditError(Exception):
    """Base class for toolkit errors."""


class ConfigError(AuditError, ValueError):
    """An experiment or schema configuration is invalid."""


class DatasetFormatError(AuditError, ValueError):
    """A CSV file cannot be read under its schema configuration."""


class InsufficientDataError(AuditError, ValueError):
    """A dataset is too small (or too uniform) for the requested sampling."""
