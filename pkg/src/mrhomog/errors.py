"""Exception hierarchy.

ValidationError-derived errors map to CLI exit code 1, NumericalError-derived
ones to exit code 2.
"""


class MrhomogError(Exception):
    """Base class."""


class ValidationError(MrhomogError):
    """Bad input or configuration."""


class ArgumentError(ValidationError, ValueError):
    pass


class ConfigurationError(ValidationError):
    pass


class StateError(ValidationError):
    """An operation was called before its inputs were complete."""


class PreconditionError(ValidationError):
    pass


class GeometryResolutionError(ValidationError):
    """Mesh too coarse to resolve the inclusion."""


class DimensionError(ValidationError):
    pass


class NumericalError(MrhomogError):
    pass


class SingularSystemError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    """Picard iteration did not converge; carries the iterate history."""

    def __init__(self, message, history=None, report=None):
        super().__init__(message)
        self.history = history or []
        self.report = report
