"""Exception hierarchy shared across the package.

Every lawlab-specific failure derives from :class:`LawLabError` so callers
(and the CLI) can distinguish our diagnostics from programming errors.
"""


class LawLabError(Exception):
    """Base class for all lawlab errors."""


class ParseError(LawLabError):
    """A data row could not be turned into a valid record."""

    def __init__(self, row: int, reason: str):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class SchemaError(LawLabError):
    """Input data is missing required columns/fields."""


class MissingArch(LawLabError):
    """Detailed FLOP accounting was requested for a record without an architecture."""


class UnknownArch(LawLabError):
    """An arch_id was not found in the architecture table."""


class MissingNonembedCount(LawLabError):
    """The non-embedding parameter convention was requested for a record that lacks it."""


class DomainError(LawLabError):
    """A numeric argument is outside the mathematical domain of an operation."""


class ConfigError(LawLabError):
    """An experiment configuration is invalid or internally inconsistent.

    ``section`` carries the dotted path of the offending config entry when known.
    """

    def __init__(self, message: str, section: str | None = None):
        self.section = section
        super().__init__(message if section is None else f"{section}: {message}")


class ObjectiveMismatch(LawLabError):
    """The requested optimizer cannot minimize the configured objective kind."""


class NonFinite(LawLabError):
    """Objective or gradient is NaN/Inf at the initialization point."""


class EmptyInit(LawLabError):
    """An initialization strategy produced no starting points."""


class DegenerateResamples(LawLabError):
    """Bootstrap resampling failed to produce enough non-degenerate datasets."""


class OutOfRange(LawLabError):
    """Interpolation target lies outside the curve hull (no extrapolation)."""


class NoInteriorMinimum(LawLabError):
    """An isoFLOP profile has no interior minimum (flat/monotone or boundary vertex)."""


class Degenerate(LawLabError):
    """A regression has no spread in its abscissa."""


class EmptySplit(LawLabError):
    """A train/holdout split left one side empty."""


class EmptyReports(LawLabError):
    """A plot was requested with no reports."""


class HashMismatch(LawLabError):
    """A report was produced from a different configuration than the one supplied."""
