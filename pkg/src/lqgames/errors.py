"""Exception types shared across the package."""

from __future__ import annotations


class LqError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LqError):
    """Malformed or inconsistent configuration input."""


class InfeasibleGain(LqError):
    """A minimizer gain left the feasible set (inner maximization unbounded or
    value matrix indefinite)."""

    def __init__(self, step: int, eigenvalue: float, what: str = "disturbance margin"):
        self.step = step
        self.eigenvalue = eigenvalue
        self.what = what
        super().__init__(
            f"gain infeasible at step {step}: {what} eigenvalue {eigenvalue:.3e}"
        )


class SingularLambda(LqError):
    """The Nash recursion hit a (numerically) singular closed-loop operator."""

    def __init__(self, step: int, smin: float):
        self.step = step
        self.smin = smin
        super().__init__(f"recursion operator singular at step {step}: s_min={smin:.3e}")


class SingularMatrix(LqError):
    """A matrix that an update rule must invert is numerically singular."""


class RiskFeasibility(LqError):
    """Risk-sensitive objective undefined: a log-det argument is not positive
    definite for the given risk parameter."""

    def __init__(self, step: int, margin: float):
        self.step = step
        self.margin = margin
        super().__init__(
            f"risk-sensitive cost undefined at step {step}: margin {margin:.3e}"
        )


class AttenuationFeasibility(LqError):
    """Attenuation-level feasibility violated: gamma^2 I - D^T P D (or the
    initial-state condition) is not positive definite."""

    def __init__(self, step: int, margin: float):
        self.step = step
        self.margin = margin
        super().__init__(
            f"attenuation infeasible at step {step}: margin {margin:.3e}"
        )


class AssumptionViolated(LqError):
    """The mapped game fails the standing positivity assumption at its saddle."""
