"""Exception hierarchy shared across the package."""


class SBFRError(Exception):
    """Base class for all errors raised by sbfr."""


class DomainError(SBFRError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SimulationExplosionError(SBFRError, FloatingPointError):
    """A simulated state became non-finite."""

    def __init__(self, step, index=None):
        self.step = step
        self.index = index
        where = f"step {step}" if index is None else f"step {step} (path {index})"
        super().__init__(f"non-finite state encountered at {where}")


class WeightOverflowError(SBFRError, FloatingPointError):
    """The reverse-process weight left the representable floating point range."""

    def __init__(self, step, index=None):
        self.step = step
        self.index = index
        where = f"step {step}" if index is None else f"step {step} (path {index})"
        super().__init__(f"reverse weight overflow at {where}")


class InsufficientOverlapError(SBFRError):
    """No forward/reverse pair fell inside the mollifier support."""

    def __init__(self, message="no forward/reverse pairs matched; increase epsilon or the sample size"):
        super().__init__(message)


class ConvergenceError(SBFRError):
    """An iteration hit its cap before reaching the tolerance."""

    def __init__(self, message, result=None, last_increment=None):
        super().__init__(message)
        self.result = result
        self.last_increment = last_increment


class ConfigError(SBFRError):
    """Invalid run configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class PathologicalEnvelopeError(SBFRError):
    """Rejection sampling acceptance rate is too small to be usable."""
