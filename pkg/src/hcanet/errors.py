"""Exception hierarchy shared across the toolkit.

Each class maps to one CLI exit code (see ``cli.EXIT_CODES``): configuration
and usage problems exit 2, file/format problems exit 3, numerical failures
exit 4.
"""


class HcanetError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(HcanetError):
    """Tensor extents are inconsistent with the operation's contract."""


class ContractError(HcanetError):
    """An operation was invoked outside its stated precondition."""


class ConfigError(HcanetError):
    """Invalid configuration value or combination."""


class FormatError(HcanetError):
    """Malformed or truncated file (cube, checkpoint, manifest)."""


class MetricError(HcanetError):
    """A metric is undefined for the given inputs (e.g. all-zero reference)."""


class NumericsError(HcanetError):
    """NaN/Inf encountered, divergence, or a failed gradient check."""
