"""Deterministic co-simulation of power circuits, communication networks and
virtual power-hardware-in-the-loop setups."""

from .errors import CosimError
from .timebase import NS_PER_S, format_seconds, from_seconds, to_seconds
from .trace import LogEntry, Trace

__version__ = "0.1.0"

__all__ = ["CosimError", "LogEntry", "NS_PER_S", "Trace", "format_seconds", "from_seconds", "to_seconds"]
