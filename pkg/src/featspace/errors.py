"""Exception types shared across the package."""


class FeatspaceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FeatspaceError):
    """A parameter or configuration value is invalid."""


class DataError(FeatspaceError):
    """Input data or a data file is malformed or unusable."""


class TrainingError(FeatspaceError):
    """Model training cannot proceed (e.g. single-class data)."""


class AttackError(FeatspaceError):
    """An attack precondition is violated or the attack cannot run."""
