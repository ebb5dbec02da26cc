"""Exception types shared across the toolkit.

``ValueError`` is used for plain invalid arguments; the classes below mark
data-dependent failures that the CLI maps to exit code 1.
"""


class ToolkitError(Exception):
    """Base class for data/diagnostic errors raised by toolkit operations."""


class UndefinedMetricError(ToolkitError):
    """A metric is mathematically undefined for the given inputs."""


class WindowTooShortError(ToolkitError):
    """The recorded time window does not cover the required flight times."""


class DivergenceError(ToolkitError):
    """An iterative solver produced a non-finite objective."""


class GeometryMismatchError(ToolkitError):
    """Two files describe inconsistent geometries or shapes."""


class BasisSupportError(ToolkitError):
    """Kernel support is too small for the sampling density."""
