"""Shared exception types, so error contracts are testable by class."""

from __future__ import annotations


class ShapeError(ValueError):
    """Operand shapes violate an operation's dimension contract."""


class ContractError(ValueError):
    """A non-shape precondition was violated (scalar-ness, ranges, pairing)."""


class DegenerateInputError(ValueError):
    """Input is mathematically degenerate (zero-norm vector in a cosine)."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataParseError(ValueError):
    """Malformed on-disk data; message carries a byte offset when known."""


class TrainingAbortError(RuntimeError):
    """Non-finite loss or gradient encountered; names the offending term."""


class UndefinedMetricError(ValueError):
    """Metric undefined for this input (single-class ground truth in BER)."""
