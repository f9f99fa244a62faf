"""Exception hierarchy shared by every module."""


class LongCtlError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(LongCtlError, ValueError):
    """Inputs outside the mathematical or physical domain of an operation."""

    exit_code = 4


class ConfigError(LongCtlError):
    """Invalid or unreadable configuration."""

    exit_code = 2


class CheckpointError(LongCtlError):
    """Corrupt, truncated or version-mismatched checkpoint file."""

    exit_code = 3
