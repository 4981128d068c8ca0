"""Exception hierarchy.

Two families matter to callers: ``ConfigError`` (bad arguments or settings,
CLI exit code 1) and ``DataError`` (bad inputs or files, CLI exit code 2).
"""

from __future__ import annotations


class DistillkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DistillkitError, ValueError):
    """Invalid configuration value or usage."""


class UsageError(ConfigError):
    """API misuse, e.g. consuming a forward tape twice."""


class DataError(DistillkitError, ValueError):
    """Invalid input data."""


class TooShortError(DataError):
    """Input shorter than the minimum length an operation needs."""


class EmptyAfterVadError(DataError):
    """Voice activity detection removed every frame."""


class DegenerateInputError(DataError):
    """Zero-norm vector or similar degenerate numeric input."""


class MissingIdError(DataError, KeyError):
    """Utterance id not present in a store or archive."""

    def __init__(self, ids):
        if isinstance(ids, str):
            ids = [ids]
        self.ids = list(ids)
        shown = ", ".join(self.ids[:10])
        more = f" (+{len(self.ids) - 10} more)" if len(self.ids) > 10 else ""
        super().__init__(f"missing id(s): {shown}{more}")

    def __str__(self):
        return self.args[0]


class FormatError(DataError):
    """Malformed binary file.

    ``offset`` is the byte position where parsing failed; ``record`` the
    zero-based record index being parsed, if any.
    """

    def __init__(self, message, offset, record=None):
        self.offset = offset
        self.record = record
        where = f"byte offset {offset}"
        if record is not None:
            where = f"record {record}, {where}"
        super().__init__(f"{message} ({where})")
