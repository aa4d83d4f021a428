# app/errors.py
"""
Exception types raised by the intersection library.

Library code raises these; the CLI entry points turn them into
`SystemExit("❌ ...")`. Every error is also a ValueError.
"""

from __future__ import annotations


class CoopIntersectError(ValueError):
    """Base class for all library errors."""


class ConfigError(CoopIntersectError):
    """Bad configuration key or value. `key_path` is dotted, e.g. 'qp.lam'."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class GeometryError(CoopIntersectError):
    pass


class CommandOutOfReach(CoopIntersectError):
    """A command velocity lies outside the one-step reachable band."""


class QpBuildError(CoopIntersectError):
    pass


class MechanismError(CoopIntersectError):
    pass


class TruncatedLogError(CoopIntersectError):
    """Event log has no terminating 'end' event."""


class UnknownControllerError(CoopIntersectError):
    pass
