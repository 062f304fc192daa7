"""Exception hierarchy shared by every module."""

from __future__ import annotations


class EntropyForgeError(Exception):
    """Base class for all library errors."""


class ParameterError(EntropyForgeError, ValueError):
    """Arguments violate an operation's preconditions."""


class RegimeError(EntropyForgeError):
    """The request is too large for exact enumeration and no sampling budget was given."""


class ConsistencyError(EntropyForgeError):
    """An adversary or transcript left the support it is required to stay in."""


class ProtocolError(EntropyForgeError):
    """A protocol message arrived out of order or was malformed."""
