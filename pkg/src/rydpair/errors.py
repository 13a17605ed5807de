"""Error types shared across the package.

The command line maps these onto exit codes: configuration problems
exit 2, physical validity violations exit 3, numerical failures exit 4.
"""


class RydpairError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(RydpairError):
    """Malformed or inconsistent configuration input."""

    exit_code = 2


class ResolutionError(ConfigError):
    """A requested grid is too coarse for the requested physics."""


class ValidityError(RydpairError):
    """Parameters fall outside the window where the effective pair model holds."""

    exit_code = 3


class DomainError(ValidityError):
    """A derived quantity does not exist for these inputs."""


class ConvergenceError(RydpairError):
    """An iterative numerical procedure failed to converge."""

    exit_code = 4


class NoRootError(ConvergenceError):
    """A root hunt found no sign change in its bracket."""


class MatchingError(ConvergenceError):
    """Fit of the interior solution onto the local pole basis is too poor to trust."""


class OrthogonalityError(ConvergenceError):
    """Assembled continuum basis fails the orthonormality check."""


class LowSignalError(ConvergenceError):
    """An observable fell below the level needed for a reliable readout."""
