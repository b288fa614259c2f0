"""Error categories surfaced through the command line."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration, preset, or argument combination."""


class DataFormatError(ValueError):
    """Malformed or inconsistent data file."""
