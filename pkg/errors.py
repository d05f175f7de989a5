"""
Error types shared by the numerical modules and the CLI
"""
from typing import Optional


class MsrdsError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(MsrdsError, ValueError):
    """Run configuration could not be parsed or validated."""


class NumericalError(MsrdsError, RuntimeError):
    """A numerical routine failed to produce a trustworthy result."""


class IntegrationDivergedError(NumericalError):
    """Non-finite state encountered while integrating an ODE."""

    def __init__(self, time: float, message: Optional[str] = None):
        self.time = time
        super().__init__(message or f"Integration diverged at t={time!r}")


class StiffnessError(NumericalError):
    """Adaptive step size fell below the underflow threshold."""

    def __init__(self, time: float, step: float):
        self.time = time
        self.step = step
        super().__init__(f"Step size underflow (h={step:.3e}) at t={time!r}; problem looks stiff")


class EigensolverFailedError(NumericalError):
    """Shifted QR iteration did not converge."""


class SimulationDivergedError(NumericalError):
    """A particle left the blow-up guard during Euler-Maruyama stepping."""

    def __init__(self, step_index: int, time: float):
        self.step_index = step_index
        self.time = time
        super().__init__(f"Particle blow-up at step {step_index} (t={time!r})")


class InadmissibleStateError(MsrdsError, ValueError):
    """Moment data that no square-integrable random vector can have."""


class OutputError(MsrdsError, OSError):
    """Result file could not be written."""
