"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes: format errors (malformed
files) exit 2, validation errors (well-formed but invalid values) exit 3,
and compute errors exit 4.
"""


class SatkitError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SatkitError, ValueError):
    """An argument violates a documented precondition."""


class BehindCameraError(SatkitError):
    """Projection requested for a point at or behind the camera plane."""


class InvalidAnnotationError(SatkitError):
    """A person annotation violates scene invariants (e.g. depth <= 0)."""


class DegenerateGeometryError(SatkitError):
    """Input geometry is too degenerate for the requested operation."""


class UndefinedMetricError(SatkitError):
    """A metric is mathematically undefined for the given inputs."""


class InfeasibleMatchError(SatkitError):
    """No injective assignment exists (more targets than candidates)."""


class SceneFormatError(SatkitError):
    """Malformed JSON or a schema violation in an input file."""


class SceneValidationError(SatkitError):
    """A parsed input whose values violate documented invariants."""
