"""Exception hierarchy shared by all mfkit modules."""


class MFKitError(Exception):
    """Base class for every error raised by mfkit."""


class ConfigurationError(MFKitError, ValueError):
    """Invalid parameters, inconsistent grids or missing model ingredients."""


class DomainError(MFKitError, ValueError):
    """An operation received a measure it is not defined on."""


class DegenerateInputError(DomainError):
    """Input is well-formed but degenerate (e.g. all atoms coincide)."""


class EvaluationError(MFKitError, ArithmeticError):
    """A cost or functional evaluated to a non-finite value."""

    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


class SimulationBlowUp(EvaluationError):
    """The particle integrator produced NaN or Inf.

    ``location`` is a ``(scenario, particle, step)`` triple.
    """


class SolverError(MFKitError, RuntimeError):
    """The policy optimizer diverged."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = [] if trace is None else list(trace)
