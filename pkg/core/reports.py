"""
Report models shared by the analyzers, the tools and the orchestrator.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .sets import SetDescriptor, set_norm
from .tables import KLEnvelope, MonotoneGrid, MonotoneTable, TauTable
from .verdict import Verdict, VerdictStatus

SEMANTICS_NOTE = (
    "universally quantified properties are only Falsified or SupportedUpTo(budget), never proved; "
    "disturbances are piecewise constant on a uniform grid, so sup-over-signal values are lower bounds"
)


class PropertyKind(str, Enum):
    LAGRANGE = "Lagrange"
    ULS = "ULS"
    UGS = "UGS"
    UGAS = "UGAS"
    PUGAS = "pUGAS"
    RFC = "RFC"
    WEAK_ATTRACTIVE = "WeakAttractive"
    UNIFORM_WEAK_ATTRACTIVE = "UniformWeakAttractive"
    UGATT = "UGATT"
    UNIFORM_ULTIMATE_BOUNDED = "UniformUltimateBounded"
    ROBUST_INVARIANT = "RobustInvariant"
    GLOBALLY_RECURRENT = "GloballyRecurrent"
    UNIFORMLY_GLOBALLY_RECURRENT = "UniformlyGloballyRecurrent"


class LagrangeCertificate(BaseModel):
    """‖φ(t,x,d)‖_A ≤ σ(‖x‖_A) + c."""
    model_config = ConfigDict(frozen=True)

    sigma: MonotoneTable
    offset_c: float = Field(ge=0)
    radii: List[float] = Field(default_factory=list)
    raw: List[float] = Field(default_factory=list, description="Sampled sup or composed σ̃ at each radius")
    flag: Optional[str] = Field(default=None, description="Budget problem detected during the construction")

    def bound(self, r) -> float:
        return self.sigma(r) + self.offset_c


class BoundednessCertificate(BaseModel):
    """‖φ(t,x,d)‖ ≤ K for all t ≥ T(r) whenever ‖x‖ ≤ r."""
    model_config = ConfigDict(frozen=True)

    bound_k: float
    radii: List[float]
    settle_times: List[float]


class Certificates(BaseModel):
    """Fitted objects backing a SupportedUpTo verdict; unused slots stay empty."""
    model_config = ConfigDict(frozen=True)

    lagrange: Optional[LagrangeCertificate] = None
    delta: Optional[MonotoneTable] = Field(default=None, description="ε ↦ δ(ε)")
    robust_delta: Optional[MonotoneGrid] = Field(default=None, description="(ε, h) ↦ δ(ε, h)")
    tau: Optional[TauTable] = None
    boundedness: Optional[BoundednessCertificate] = None
    recurrence: Optional[MonotoneTable] = Field(default=None, description="R ↦ τ(R)")
    envelope: Optional[KLEnvelope] = None
    values: Dict[str, float] = Field(default_factory=dict)


class PropertyReport(BaseModel):
    """Verdict on one stability predicate, with certificates iff it is supported."""
    model_config = ConfigDict(frozen=True)

    property: PropertyKind
    verdict: Verdict
    target: Optional[SetDescriptor] = None
    certificates: Optional[Certificates] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _certificates_iff_supported(self) -> "PropertyReport":
        if self.verdict.is_supported and self.certificates is None:
            raise ValueError("a supported report must carry its certificates")
        if not self.verdict.is_supported and self.certificates is not None:
            raise ValueError("only supported reports carry certificates")
        return self

    @property
    def status(self) -> VerdictStatus:
        return self.verdict.status

    def with_verdict(self, verdict: Verdict, certificates: Optional[Certificates] = None,
                     note: Optional[str] = None) -> "PropertyReport":
        notes = list(self.notes) + ([note] if note else [])
        return self.model_copy(update={
            "verdict": verdict,
            "certificates": certificates if verdict.is_supported else None,
            "notes": notes,
        })

    def to_json(self) -> Dict[str, Any]:
        out = {
            "property": self.property.value,
            "status": self.verdict.status.value,
            "note": self.verdict.note,
            "notes": list(self.notes) + [SEMANTICS_NOTE],
            "budget": self.verdict.budget.model_dump() if self.verdict.budget else None,
            "diagnostics": _plain(self.diagnostics),
        }
        if self.verdict.witness is not None:
            out["witness"] = self.verdict.witness.model_dump()
        if self.certificates is not None:
            out["certificates"] = self.certificates.model_dump(exclude_none=True)
        return out


def build_report(kind: PropertyKind, verdict: Verdict, target: Optional[SetDescriptor] = None,
                 certificates: Optional[Certificates] = None, diagnostics: Optional[Dict[str, Any]] = None,
                 notes: Sequence[str] = ()) -> PropertyReport:
    """PropertyReport that drops certificates unless the verdict is supported."""
    return PropertyReport(
        property=kind,
        verdict=verdict,
        target=target,
        certificates=certificates if verdict.is_supported else None,
        diagnostics=diagnostics or {},
        notes=[n for n in notes if n],
    )


class RfcEnvelope(BaseModel):
    """μ(r, t) ≥ ‖φ(s,x,d)‖_A for ‖x‖_A ≤ r and s ≤ t."""
    model_config = ConfigDict(frozen=True)

    mu: MonotoneGrid
    verdict: Verdict
    target: Optional[SetDescriptor] = None

    @property
    def r_grid(self) -> List[float]:
        return self.mu.rows

    @property
    def t_grid(self) -> List[float]:
        return self.mu.cols

    def bound(self, r, t):
        return self.mu.upper(r, t)


class ReachCloud(BaseModel):
    """
    Sampled reachable states with their bounding box; the declared outer
    approximation is the box inflated by ``inflation`` on every face.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray
    point_times: np.ndarray
    lower: List[float]
    upper: List[float]
    horizon: float
    source: SetDescriptor
    source_radius: float = Field(default=0.0, description="Samples were drawn from B_radius(source)")
    inflation: float = Field(ge=0)
    verdict: Verdict
    cell_size: Optional[float] = Field(default=None, description="Occupancy cell width when built from a grid")
    notes: List[str] = Field(default_factory=list)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def outer_box(self):
        return np.asarray(self.lower) - self.inflation, np.asarray(self.upper) + self.inflation

    def offset_bound(self) -> float:
        """‖outer box‖ + ‖source‖, an upper bound on the offset of a bound built from this cloud."""
        lo, hi = self.outer_box()
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))) + set_norm(self.source)

    def contains(self, states: np.ndarray) -> np.ndarray:
        lo, hi = self.outer_box()
        X = np.atleast_2d(states)
        return np.all((X >= lo) & (X <= hi), axis=-1)

    def summary(self) -> Dict[str, Any]:
        return {
            "status": self.verdict.status.value,
            "note": self.verdict.note,
            "points": int(len(self.points)),
            "lower": list(self.lower),
            "upper": list(self.upper),
            "inflation": self.inflation,
            "horizon": self.horizon,
            "source": self.source.model_dump(exclude_none=True),
            "source_radius": self.source_radius,
            "offset_bound": self.offset_bound(),
            "cell_size": self.cell_size,
            "budget": self.verdict.budget.model_dump() if self.verdict.budget else None,
            "notes": list(self.notes),
        }


class ConsistencyItem(BaseModel):
    """One theorem item: a conjunction of property verdicts."""
    name: str
    conjuncts: Dict[str, VerdictStatus]
    status: VerdictStatus


class ConsistencyReport(BaseModel):
    """Items of an equivalence theorem evaluated on one budget."""
    theorem: str
    items: List[ConsistencyItem]
    consistent: bool
    diagnostics: List[str] = Field(default_factory=list)
    reports: Dict[str, PropertyReport] = Field(default_factory=dict)

    def status_of(self, name: str) -> VerdictStatus:
        return next(i.status for i in self.items if i.name == name)

    def to_json(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "consistent": self.consistent,
            "items": [i.model_dump() for i in self.items],
            "diagnostics": list(self.diagnostics),
            "reports": {k: v.to_json() for k, v in sorted(self.reports.items())},
        }


def _plain(value):
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


__all__ = [
    "SEMANTICS_NOTE",
    "PropertyKind",
    "LagrangeCertificate",
    "BoundednessCertificate",
    "Certificates",
    "PropertyReport",
    "build_report",
    "RfcEnvelope",
    "ReachCloud",
    "ConsistencyItem",
    "ConsistencyReport",
]
