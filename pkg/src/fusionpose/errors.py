"""Exception types shared across the package."""


class FusionPoseError(Exception):
    """Base class for all package errors."""


class DimensionError(FusionPoseError, ValueError):
    """Operands have incompatible shapes; message names both shapes."""


class ContractError(FusionPoseError, ValueError):
    """An API precondition was violated (e.g. non-scalar loss node)."""


class InvalidInputError(FusionPoseError, ValueError):
    """Input data is structurally invalid (empty point set, bad range, ...)."""


class EmptyCropError(FusionPoseError, ValueError):
    """A 3D crop produced zero points; the instance is skipped that frame."""


class ConfigError(FusionPoseError, ValueError):
    """Run configuration is malformed or inconsistent."""


class CheckpointMismatchError(FusionPoseError, ValueError):
    """Checkpoint contents do not match the configured model."""
