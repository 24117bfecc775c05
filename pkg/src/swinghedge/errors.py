"""Exception types shared across the package."""


class SwingError(Exception):
    """Base class for all package errors."""


class ConfigError(SwingError):
    """Invalid configuration: bad key, inconsistent dates, non-PSD correlation, ..."""


class DomainError(SwingError, ValueError):
    """Operation called outside its domain (bad date, window off the grid, ...)."""


class InfeasibilityError(SwingError):
    """A volume state that cannot satisfy the contract constraints was queried."""


class ArchiveError(SwingError):
    """Archive file is corrupt, has the wrong version, or does not match the config."""
