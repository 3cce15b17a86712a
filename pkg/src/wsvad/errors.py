"""Exception types shared across the package."""


class WsvadError(Exception):
    """Base class for all package-specific errors."""


class ContractError(WsvadError):
    """A caller violated a documented precondition or invariant."""


class DimensionError(ContractError):
    """Array shapes are incompatible with the requested operation."""


class DomainError(ContractError):
    """An input value lies outside the mathematical domain of an operation."""


class FormatError(WsvadError):
    """A file does not conform to its declared binary or JSON layout."""


class NumericsError(WsvadError):
    """A computation produced NaN or Inf; the current step must be aborted."""


class ConfigError(WsvadError):
    """A configuration document could not be parsed or validated."""
