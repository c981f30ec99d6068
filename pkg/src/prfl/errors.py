"""Shared exception types.

ConfigError means the declarative inputs were bad and nothing ran.
InvariantError means a protocol invariant broke mid-simulation; outputs from
such a run must not be trusted. The CLI maps them to exit codes 2 and 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class InvariantError(RuntimeError):
    """A runtime protocol invariant was violated."""
