"""Semantic exception hierarchy shared by every module.

The three leaf classes map one-to-one onto the command-line exit codes:
usage errors exit 1, data-format errors exit 2, numerical failures exit 3.
"""


class MarginLabError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(MarginLabError, ValueError):
    """The caller violated an API contract (bad shapes, bad parameters)."""

    exit_code = 1


class DataError(MarginLabError, ValueError):
    """Input data is malformed or inconsistent (non-finite logits,
    misaligned audits, unparseable files)."""

    exit_code = 2


class NumericalError(MarginLabError, ArithmeticError):
    """A computation failed numerically (degenerate fit, divergence,
    undefined statistic)."""

    exit_code = 3
