class CaseFormatError(ValueError):
    """Input file could not be parsed or does not match its schema."""


class CaseValidationError(ValueError):
    """Parsed data violates a model invariant."""


class TopologyError(CaseValidationError):
    """Network is not a connected radial tree."""


class ScenarioError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Iterative solver stopped without meeting its tolerance.

    ``diagnostic`` carries whatever partial result the solver produced.
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class InfeasibleError(RuntimeError):
    pass


class EquilibriumError(RuntimeError):
    """A phase failed inside the fixed-point loop."""

    def __init__(self, message, hour=None, iteration=None):
        super().__init__(message)
        self.hour = hour
        self.iteration = iteration
