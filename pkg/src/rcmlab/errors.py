"""Exception types shared by all modules."""


class ConfigurationError(ValueError):
    """Invalid law, threshold family, or experiment configuration."""


class DomainError(ValueError):
    """An argument lies outside the region where the operation is defined."""


class PreconditionError(RuntimeError):
    """A structural hypothesis (density, sparseness, census) fails on this sample."""


class NumericalError(ArithmeticError):
    """Floating-point breakdown, e.g. non-positive curvature inside CG."""


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
