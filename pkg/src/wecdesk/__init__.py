"""wecdesk: desk-scale three-tether wave energy converter control lab."""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    IntegrationDivergedError,
    LifecycleError,
    SingularGeometryError,
    TuningFailedError,
    WecdeskError,
)

__all__ = [
    "__version__",
    "WecdeskError",
    "ConfigError",
    "SingularGeometryError",
    "IntegrationDivergedError",
    "TuningFailedError",
    "CheckpointError",
    "LifecycleError",
]
