"""
Three-valued outcome of a property check.
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

HORIZON_CAP = 100.0
DEFAULT_TOL = 1e-9
GRID_DIVISIONS = 64


class VerdictStatus(str, Enum):
    FALSIFIED = "Falsified"
    SUPPORTED = "SupportedUpTo"
    INCONCLUSIVE = "Inconclusive"


class Budget(BaseModel):
    """Sampling and integration budget spent by one analysis."""
    model_config = ConfigDict(frozen=True)

    samples: int = Field(default=64, ge=1, description="Initial states per radius")
    signals: int = Field(default=8, ge=1, description="Disturbance signals per initial state")
    horizon: float = Field(default=HORIZON_CAP, gt=0, description="Simulation horizon cap")
    tol: float = Field(default=DEFAULT_TOL, ge=1e-12, le=1e-3, description="Integrator tolerance")
    grid_step: Optional[float] = Field(default=None, gt=0, description="Disturbance grid step; horizon/64 if unset")
    seed: int = Field(default=0, description="Seed of every random stream")
    jobs: int = Field(default=1, ge=1, description="Worker threads for batch simulation")
    search_evaluations: int = Field(default=512, ge=32, description="Adversarial search budget")

    @property
    def step(self) -> float:
        return self.grid_step if self.grid_step is not None else self.horizon / GRID_DIVISIONS

    def reseeded(self, offset: int) -> "Budget":
        return self.model_copy(update={"seed": self.seed + offset})

    def with_horizon(self, horizon: float) -> "Budget":
        """Same budget over another horizon; an explicit grid step is kept."""
        return self.model_copy(update={"horizon": float(horizon)})


class Witness(BaseModel):
    """A replayable counterexample: initial state, piecewise-constant signal and time."""
    model_config = ConfigDict(frozen=True)

    state: List[float]
    grid_step: float
    segments: List[List[float]] = Field(default_factory=list)
    tail: List[float] = Field(default_factory=list)
    time: float = 0.0
    value: Optional[float] = Field(default=None, description="Measured quantity at the witness")
    start_time: float = Field(default=0.0, description="Time at which ``state`` is taken")


class Verdict(BaseModel):
    """Falsified, SupportedUpTo or Inconclusive."""
    model_config = ConfigDict(frozen=True)

    status: VerdictStatus
    witness: Optional[Witness] = None
    budget: Optional[Budget] = None
    note: str = ""

    @model_validator(mode="after")
    def _check_payload(self) -> "Verdict":
        if self.status == VerdictStatus.FALSIFIED and self.witness is None:
            raise ValueError("a Falsified verdict needs a witness")
        if self.status == VerdictStatus.SUPPORTED and self.budget is None:
            raise ValueError("a SupportedUpTo verdict needs its budget")
        return self

    @field_validator("note")
    @classmethod
    def _strip(cls, v: str) -> str:
        return v.strip()

    @classmethod
    def supported(cls, budget: Budget, note: str = "") -> "Verdict":
        return cls(status=VerdictStatus.SUPPORTED, budget=budget, note=note)

    @classmethod
    def falsified(cls, witness: Witness, budget: Optional[Budget] = None, note: str = "") -> "Verdict":
        return cls(status=VerdictStatus.FALSIFIED, witness=witness, budget=budget, note=note)

    @classmethod
    def inconclusive(cls, reason: str, budget: Optional[Budget] = None) -> "Verdict":
        return cls(status=VerdictStatus.INCONCLUSIVE, budget=budget, note=reason)

    @property
    def is_supported(self) -> bool:
        return self.status == VerdictStatus.SUPPORTED

    @property
    def is_falsified(self) -> bool:
        return self.status == VerdictStatus.FALSIFIED

    def with_note(self, extra: str) -> "Verdict":
        joined = f"{self.note}; {extra}" if self.note else extra
        return self.model_copy(update={"note": joined})


def combine(verdicts: List[Verdict], budget: Budget, note: str = "") -> Verdict:
    """Conjunction: any Falsified wins, then any Inconclusive, else SupportedUpTo."""
    for v in verdicts:
        if v.is_falsified:
            return Verdict.falsified(v.witness, budget, note or v.note)
    for v in verdicts:
        if v.status == VerdictStatus.INCONCLUSIVE:
            return Verdict.inconclusive(note or v.note, budget)
    return Verdict.supported(budget, note)
