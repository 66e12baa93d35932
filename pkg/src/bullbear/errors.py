"""Exception types shared across the package.

Everything raised on purpose derives from :class:`BullbearError` so callers
(and the CLI exit-code mapping) can distinguish our failures from bugs.
Genuine I/O problems propagate as the builtin ``FileNotFoundError`` /
``OSError``.
"""

from __future__ import annotations


class BullbearError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BullbearError):
    """A run configuration is malformed, inconsistent, or incomplete."""


class DataError(BullbearError):
    """Input market data is unusable for the requested operation."""


class ParseError(DataError):
    """A data file is structurally malformed.

    Carries the 1-based line number and 0-based column index of the first
    offending cell so the message pinpoints the problem.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class EmptySeries(DataError):
    """Fewer than two usable rows remain after parsing/cleaning."""


class InsufficientData(DataError):
    """Not enough observations for the requested estimate."""


class OutOfRange(DataError):
    """A date or index falls outside the available data span."""


class InvalidParams(BullbearError):
    """Generator or model parameters violate their documented domain."""


class ShapeMismatch(BullbearError):
    """An array argument has the wrong shape for the target structure."""


class InvalidShape(BullbearError):
    """A network architecture specification is malformed."""


class Infeasible(BullbearError):
    """The allocation constraint set is empty."""


class Degenerate(BullbearError):
    """The optimization problem has no meaningful solution."""


class ZeroVolatility(BullbearError):
    """A Sharpe-style ratio was requested where volatility is zero."""


class EpisodeDone(BullbearError):
    """step() was called on a finished episode."""


class EmptyBatch(BullbearError):
    """A network update was requested with an empty batch."""


class InsufficientSamples(BullbearError):
    """The replay buffer holds fewer transitions than the requested sample."""


class DegenerateCurve(BullbearError):
    """An equity curve is too short or ill-formed for the requested metric."""
