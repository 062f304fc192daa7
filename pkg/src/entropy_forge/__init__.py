"""Exact entropy accounting, inversion attacks and a hash-based commitment scheme at toy scale."""

from __future__ import annotations

from .errors import ConsistencyError, EntropyForgeError, ParameterError, ProtocolError, RegimeError
from .rng import SeedStream

__all__ = [
    "ConsistencyError",
    "EntropyForgeError",
    "ParameterError",
    "ProtocolError",
    "RegimeError",
    "SeedStream",
]

__version__ = "0.1.0"
