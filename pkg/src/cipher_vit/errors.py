"""Exception hierarchy. Every error carries a short category used by the CLI."""


class CipherVitError(Exception):
    """Base class; `category` feeds the CLI's `error[<category>]: ...` messages."""

    category = "error"


class DimensionError(CipherVitError):
    """Tensor shapes incompatible with the requested operation."""

    category = "dimension"


class GeometryError(CipherVitError):
    """Image geometry incompatible with the block/patch grid."""

    category = "geometry"


class ParameterError(CipherVitError):
    """A scalar argument is out of its valid range."""

    category = "parameter"


class FormatError(CipherVitError):
    """On-disk data does not match its declared format."""

    category = "format"


class StateError(CipherVitError):
    """Operation invalid for the object's current state (e.g. double injection)."""

    category = "state"


class ContractError(CipherVitError):
    """A documented API contract was violated by the caller."""

    category = "contract"


class ConfigError(CipherVitError):
    """Bad or unknown keys in a run configuration file."""

    category = "config"


class TrainingDiverged(CipherVitError):
    """Loss became non-finite or ran away; names the offending step."""

    category = "divergence"

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
