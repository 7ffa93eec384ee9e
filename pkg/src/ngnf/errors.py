"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class NgnfError(Exception):
    exit_code = 3


class ConfigError(NgnfError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DomainError(NgnfError, ValueError):
    """Non-finite or otherwise inadmissible numeric input."""


class DegenerateTimeError(DomainError):
    """Elapsed time tau <= 0, where the transition density is a Dirac mass."""


class RangeError(NgnfError, ValueError):
    """Query outside the time window covered by a checkpoint."""

    exit_code = 2  # a bad request rather than a numerical failure


class AssemblyError(NgnfError, ArithmeticError):
    """Non-finite entry while assembling the Galerkin system."""


class IntegrationError(NgnfError, ArithmeticError):
    """Adaptive step size fell below the configured minimum."""


class CheckpointError(NgnfError, OSError):
    exit_code = 4


class TruncatedFileError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    """Checkpoint was written for a different flow architecture."""
