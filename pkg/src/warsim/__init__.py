"""Deterministic, replayable multi-agent simulation of historical conflicts."""

from __future__ import annotations

__version__ = "0.1.0"
