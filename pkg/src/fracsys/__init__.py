"""Coupled time-fractional diffusion systems on an interval."""
from __future__ import annotations

__version__ = "0.1.0"
