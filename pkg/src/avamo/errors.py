"""Exception types shared across the package."""


class AvamoError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(AvamoError, ValueError):
    """A domain object violated one of its invariants."""


class ManifestError(ValidationError):
    """A manifest file or entry could not be parsed or validated."""


class ConfigError(AvamoError, ValueError):
    """A run configuration contained unknown or invalid fields."""


class DimensionError(AvamoError, ValueError):
    """An array argument had an incompatible shape."""


class RoutingError(AvamoError, ValueError):
    """An instruction representation was fed to the wrong task branch."""


class DataError(AvamoError, ValueError):
    """A dataset-level precondition failed (missing donor, bad file)."""


class InputError(AvamoError, ValueError):
    """A user-supplied argument was rejected."""


class NumericalError(AvamoError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class ClientError(AvamoError, RuntimeError):
    """An external annotation client failed."""


class ContractError(ClientError):
    """An external annotation client returned out-of-contract data."""
