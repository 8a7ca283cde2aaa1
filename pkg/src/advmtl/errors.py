"""Exception taxonomy shared by all modules.

Each class maps to one failure category so callers (and the CLI exit-code
table) can react without string matching.
"""


class AdvMtlError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AdvMtlError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(AdvMtlError):
    """A configuration value is missing, malformed, or inconsistent."""


class InputError(AdvMtlError):
    """Runtime input (sentence, task id, split) violates a precondition."""


class ContractError(AdvMtlError):
    """An API contract was violated (e.g. backward on a non-scalar node)."""


class DataFormatError(AdvMtlError):
    """A corpus file could not be parsed; message carries file and line."""


class NumericError(AdvMtlError):
    """Training produced NaN/Inf; message names the offending tensor."""
