"""Exception types shared across the package."""


class LgrinError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LgrinError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(LgrinError):
    """Invalid model, training, or run configuration."""


class DataError(LgrinError):
    """Dataset loading or validation failure; names the offending file/line."""


class SplitError(LgrinError):
    """Cross-validation split cannot be formed (e.g. class smaller than k)."""


class ContractError(LgrinError):
    """An internal precondition was violated by the caller."""


class NumericalError(LgrinError):
    """Non-finite values or a failed gradient check during computation."""
