"""Exception types shared across the package."""


class WecdeskError(Exception):
    """Base class for all package errors."""


class ConfigError(WecdeskError):
    """Invalid configuration value, file, or schema."""


class SingularGeometryError(WecdeskError):
    """Tether geometry degenerated (attachment at or through an anchor)."""


class IntegrationDivergedError(WecdeskError):
    """Plant state became non-finite during integration."""

    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class TuningFailedError(WecdeskError):
    """Controller tuning could not produce a usable result."""


class CheckpointError(WecdeskError):
    """Checkpoint file is malformed, corrupted, or incompatible."""


class LifecycleError(WecdeskError):
    """Operation called in the wrong object state (e.g. step before reset)."""
