"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: I/O -> 2, config -> 3, numerical -> 4.
"""


class LumaFluxError(Exception):
    pass


class DimensionError(LumaFluxError, ValueError):
    """Array extents do not line up."""


class DomainError(LumaFluxError, ValueError):
    """Sample values outside the valid domain of an operation."""


class TagError(LumaFluxError, ValueError):
    """Image carries the wrong color-space tag for this operation."""


class ConfigError(LumaFluxError, ValueError):
    """Invalid configuration value."""


class EvaluationError(LumaFluxError, RuntimeError):
    """A numeric evaluation produced a non-finite result."""


class FitError(LumaFluxError, RuntimeError):
    """An optimization run failed or diverged."""
