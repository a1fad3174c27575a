"""
Exception types shared by the gradient-flow laboratory.

Every error raised on purpose by the package derives from LabError so that the
command line front end can report it without a traceback.
"""


class LabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain of a mathematical map."""


class ConfigurationError(LabError, ValueError):
    """
    Invalid experiment or check configuration.

    Args:
        problems: list of (field, message) pairs, one per offending field
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("", problems)]
        self.problems = list(problems)
        self.fields = [name for name, _ in self.problems if name]
        text = "; ".join(f"{name}: {msg}" if name else msg for name, msg in self.problems)
        super().__init__(f"Invalid configuration: {text}")


class StructuralError(LabError, RuntimeError):
    """A construction that must exist could not be certified."""


class ConvergenceError(LabError, RuntimeError):
    """An inner solver stopped above its tolerance."""

    def __init__(self, message, residual, iterations, step_index=None):
        self.residual = float(residual)
        self.iterations = int(iterations)
        self.step_index = step_index
        super().__init__(message)

    def at_step(self, step_index):
        """Return a copy tagged with the time index where it happened."""
        return ConvergenceError(
            f"step {step_index}: {self.args[0]}",
            self.residual,
            self.iterations,
            step_index=step_index,
        )


class UnsupportedError(LabError, NotImplementedError):
    """The requested evaluation is not available for this object."""
