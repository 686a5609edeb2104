"""Exception types shared across the package."""


class StochFsiError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StochFsiError):
    """Invalid run configuration or non-compliant initial data."""


class GeometryDegenerateError(StochFsiError):
    """A map lost injectivity (non-positive Jacobian) where positivity is required."""


class StepFailureError(StochFsiError):
    """Nonlinear fluid solve failed to converge.

    Carries the last iterate and its residual so the driver can retry
    with a smaller time step.
    """

    def __init__(self, message, u_last=None, v_last=None, residual=None, iterations=None):
        super().__init__(message)
        self.u_last = u_last
        self.v_last = v_last
        self.residual = residual
        self.iterations = iterations


class SnapshotFormatError(StochFsiError):
    """Snapshot file is unreadable or its schema does not match."""
