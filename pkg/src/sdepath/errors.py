"""Exception types shared across the package."""


class SdePathError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SdePathError, ValueError):
    """An argument is outside its documented range (e.g. dt <= 0)."""


class NonFiniteInputError(SdePathError, ValueError):
    """A state or coefficient evaluation received a NaN/inf input."""


class OrderingError(SdePathError, ValueError):
    """Partition times would become non-increasing or overshoot the horizon."""


class StepOverflowError(SdePathError, ArithmeticError):
    """A one-step update produced a non-finite state."""

    def __init__(self, step_index, message=None):
        self.step_index = step_index
        super().__init__(message or f"non-finite state after step {step_index}")


class SolverError(SdePathError, ArithmeticError):
    """The implicit-step fixed-point iteration failed to converge.

    Usually a sign that dt is too large relative to the drift stiffness.
    """


class RunawayError(SdePathError, RuntimeError):
    """The integration exceeded the step-count safety cap."""


class ZeroStepError(SdePathError, ValueError):
    """No time budget is left for a step (remaining horizon below tolerance)."""


class UnsupportedConfigurationError(SdePathError, ValueError):
    """The requested combination of method and problem is not supported."""


class ConfigurationError(SdePathError, ValueError):
    """An experiment or diagnostic configuration is invalid or incomplete."""


class ExperimentError(SdePathError, RuntimeError):
    """A Monte Carlo experiment failed (e.g. too many failed samples)."""


class DegenerateNormalizerError(SdePathError, ZeroDivisionError):
    """The relative-error normalizer max_n |y(tau_n)| is zero."""
