"""Exception types shared across the package."""


class VacantLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(VacantLabError):
    """Invalid lattice or experiment configuration."""


class ParameterError(VacantLabError):
    """An operation was called with out-of-range or inconsistent parameters."""


class ResourceLimitError(VacantLabError):
    """A size or memory guard tripped before the computation started."""


class SolverError(VacantLabError):
    """A linear solve did not reach the requested residual tolerance."""
