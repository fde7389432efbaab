"""Exception hierarchy.

Each class carries the CLI exit code of its category so the command line
layer can map failures without a lookup table.
"""


class MGTCError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(MGTCError, ValueError):
    """Inconsistent or missing configuration (bad ratio, missing seed, ...)."""

    exit_code = 2
    category = "usage"


class FormatError(MGTCError, ValueError):
    exit_code = 3
    category = "format"


class UnsupportedFormatError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class ShapeError(MGTCError, ValueError):
    exit_code = 3
    category = "shape"


class BoundsError(MGTCError, IndexError):
    exit_code = 3
    category = "shape"


class OutOfRangeError(MGTCError, ValueError):
    """Requested frame span does not fit in the source clip."""

    exit_code = 3
    category = "format"


class FeasibilityError(MGTCError, ValueError):
    exit_code = 4
    category = "feasibility"

    def __init__(self, message, max_ratio=None):
        super().__init__(message)
        self.max_ratio = max_ratio


class NumericError(MGTCError, ArithmeticError):
    exit_code = 1
    category = "numeric"
