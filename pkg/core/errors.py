"""
Error types shared by every analysis.
Numerical violations are never raised; they are recorded in a Verdict.
"""

from typing import Optional, Sequence


class StabilityError(Exception):
    """Root of all errors raised by the toolkit."""


class InputError(StabilityError, ValueError):
    """Invalid input: dimension mismatch, malformed expression, bad grid, unknown system."""


class ConstructionRefused(InputError):
    """A constructive procedure cannot run because a prerequisite verdict failed."""


class BlowUp(StabilityError, RuntimeError):
    """
    A trajectory crossed the overflow guard.

    Args:
        t_star: Time at which the guard was crossed
        state: Last state before the guard, if known
        index: Index of the trajectory inside its batch, if any
    """

    def __init__(self, t_star: float, state: Optional[Sequence[float]] = None, index: Optional[int] = None):
        self.t_star = float(t_star)
        self.state = None if state is None else [float(v) for v in state]
        self.index = index
        super().__init__(f"State norm exceeded the overflow guard at t={self.t_star:.6g}")
