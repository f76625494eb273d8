"""Exception taxonomy shared by every module.

Validation failures (bad shapes, parameters, file formats, data) map to CLI
exit code 1; numeric/runtime failures (NaN gradients, degenerate statistics
discovered mid-computation) map to exit code 2.
"""


class ValidationError(ValueError):
    """Base for errors that mean the inputs were invalid."""


class ShapeError(ValidationError):
    """Tensor or dataset extents do not satisfy an operation's contract."""


class ParameterError(ValidationError):
    """A scalar argument (probability, band edge, factor) is out of range."""


class FormatError(ValidationError):
    """A serialized container violates its binary format; names the field."""


class DataError(ValidationError):
    """Dataset-level violation: bad labels, out-of-bounds events, empty input."""


class DegenerateDataError(DataError):
    """Statistic is undefined for this input (constant data, p_e == 1, ...)."""


class ConfigError(ValidationError):
    """Configuration file or flag set is invalid; names the offending key."""


class NumericError(RuntimeError):
    """Base for runtime numeric failures."""


class OptimizerError(NumericError):
    """Non-finite gradient or moment encountered; names the tensor."""


class UsageError(RuntimeError):
    """API misuse: non-scalar loss, re-used tape, and similar."""
