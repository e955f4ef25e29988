"""
Lyapunov Analyzer for the stability toolkit.
Dini derivatives along flows, the non-coercive Lyapunov conditions, the
attraction-time bound (ψ₂(r) + 1)/α(ε) and the conclusions they support.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import trapezoid

from core.errors import InputError
from core.reports import Certificates, PropertyKind, PropertyReport, build_report
from core.sets import SetDescriptor, ball_around_set, distance_to_set
from core.tables import Direction, Extrapolation, MonotoneTable, TauTable, lower_projection
from core.verdict import Budget, Verdict, VerdictStatus, Witness
from dynamics.expressions import Expression
from dynamics.integrator import simulate_pairs
from dynamics.measures import distances, first_entry_times, refined_extreme, simulate_from
from dynamics.signals import DisturbanceSignal, SignalStrategy, sample_signals
from dynamics.systems import DynamicalSystem
from .base_analyzer import BaseAnalyzer

logger = logging.getLogger("stability.lyapunov")

DINI_SCHEDULE = (1e-2, 1e-3, 1e-4)
RICHARDSON_GAP = 0.1
CONDITION_TOL = 1e-6
INNER_SHELL = 1e-6
ALPHA_SCALE = 0.5
QUADRATURE_SLACK = 1e-6
DEFAULT_SHELLS = (0.25, 0.5, 1.0, 2.0, 4.0)


def comparison_grid() -> List[float]:
    """0 and 2^{k/16} for k = -320..160."""
    return [0.0] + (2.0 ** (np.arange(-320, 161) / 16.0)).tolist()


class LyapunovCandidate(BaseModel):
    """
    V with comparison functions 0 < V(x) ≤ ψ₂(‖x‖_A) and V̇_d(x) ≤ −α(‖x‖_A).

    ψ₂ and α may be left empty and fitted from samples later; fitted tables
    never produce falsification witnesses.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    V: Callable[[np.ndarray], np.ndarray] = Field(description="Rows of states -> values")
    target: SetDescriptor
    psi2: Optional[MonotoneTable] = None
    alpha: Optional[MonotoneTable] = None
    text: Optional[str] = Field(default=None, description="Source expression of V")
    psi2_fitted: bool = False
    alpha_fitted: bool = False

    @model_validator(mode="after")
    def _vanish_at_zero(self) -> "LyapunovCandidate":
        for name, table in (("psi2", self.psi2), ("alpha", self.alpha)):
            if table is None:
                continue
            if table.direction != Direction.NONDECREASING:
                raise ValueError(f"{name} must be nondecreasing")
            if abs(float(table(0.0))) > 1e-12:
                raise ValueError(f"{name}(0) must be 0")
        return self

    def value(self, states) -> np.ndarray:
        X = np.atleast_2d(np.asarray(states, dtype=float))
        return np.broadcast_to(np.asarray(self.V(X), dtype=float), X.shape[:-1])

    @classmethod
    def from_expressions(cls, V: str, target: SetDescriptor, psi2: Optional[str] = None,
                         alpha: Optional[str] = None,
                         breakpoints: Optional[Sequence[float]] = None) -> "LyapunovCandidate":
        """
        Build a candidate from text, e.g. ``V="x1^2"``, ``psi2="r^2"``, ``alpha="2*r^2"``.

        Comparison functions are tabulated in the variable r on ``breakpoints``,
        by default 0 and a geometric grid of ratio 2^{1/16} from 2^-20 to 2^10.
        """
        grid = comparison_grid() if breakpoints is None else list(breakpoints)
        expr = Expression(V)
        expr.check_variables([f"x{i + 1}" for i in range(target.dimension)])

        def tabulate(text: Optional[str]) -> Optional[MonotoneTable]:
            if text is None:
                return None
            e = Expression(text)
            e.check_variables(["r"])
            return MonotoneTable.from_callable(e.of_scalar, grid, label="declared")

        return cls(V=expr.of_states, target=target, psi2=tabulate(psi2), alpha=tabulate(alpha), text=V)


class DiniEstimate(BaseModel):
    """min over the h schedule of (V(φ(h, x, d)) − V(x))/h."""
    value: float
    quotients: List[float]
    low_confidence: bool = Field(description="Last two quotients differ by more than 10%")
    margin: float = Field(description="Gap between the last two quotients")


def _dini_batch(cand: LyapunovCandidate, system: DynamicalSystem, X: np.ndarray,
                signals: Sequence[DisturbanceSignal], schedule: Sequence[float],
                tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Quotients (P, len(schedule)) in schedule order and V(x) (P,)."""
    hs = np.asarray(schedule, dtype=float)
    if hs.size < 2 or np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise InputError("the h schedule must hold at least two decreasing positive steps")
    times = np.concatenate([[0.0], np.sort(hs)])
    states, _ = simulate_pairs(system, X, signals, times, max(tol * 1e-2, 1e-12))
    V0 = cand.value(X)
    ahead = np.stack([cand.value(states[:, k]) for k in range(1, len(times))], axis=1)
    quotients = (ahead[:, ::-1] - V0[:, None]) / hs[None, :]
    return quotients, V0


def _confidence(quotients: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    last, prev = quotients[..., -1], quotients[..., -2]
    margin = np.abs(last - prev)
    scale = np.maximum(np.abs(last), 1e-12)
    return margin, margin > RICHARDSON_GAP * scale


def dini_derivative(cand: LyapunovCandidate, system: DynamicalSystem, x, d: DisturbanceSignal,
                    schedule: Sequence[float] = DINI_SCHEDULE, tol: float = 1e-9) -> DiniEstimate:
    """
    Forward-difference estimate of the lower Dini derivative of V along φ(·, x, d).

    The minimum over the schedule is returned; a gap above 10% between the
    two finest steps marks the estimate low-confidence.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    q, _ = _dini_batch(cand, system, X, [d], schedule, tol)
    margin, low = _confidence(q)
    return DiniEstimate(value=float(np.min(q[0])), quotients=q[0].tolist(),
                        low_confidence=bool(low[0]), margin=float(margin[0]))


class _Samples(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    states: np.ndarray
    signals: List[DisturbanceSignal]
    norms: np.ndarray
    values: np.ndarray
    dini: np.ndarray
    margin: np.ndarray


def _sample(cand: LyapunovCandidate, system: DynamicalSystem, shells: Sequence[float], budget: Budget,
            schedule: Sequence[float]) -> _Samples:
    """States across B_r(A) shells (minus the inner shell) paired with every sampled signal."""
    A = cand.target
    if A.dimension != system.dimension:
        raise InputError("candidate set dimension does not match the system")
    rng = np.random.default_rng(budget.seed + 401)
    blocks = [ball_around_set(A, r).sample(budget.samples, rng) for r in sorted(shells)]
    X = np.vstack(blocks)
    X = X[np.asarray(distance_to_set(X, A)) >= INNER_SHELL]
    signals = sample_signals(system.disturbance_box, budget.step, budget.step, budget.signals,
                             SignalStrategy.MIXED, budget.seed + 409)
    P = len(X) * len(signals)
    states = np.repeat(X, len(signals), axis=0)
    paired = [signals[p % len(signals)] for p in range(P)]
    q, V0 = _dini_batch(cand, system, states, paired, schedule, budget.tol)
    margin, _ = _confidence(q)
    return _Samples(states=states, signals=paired, norms=np.asarray(distance_to_set(states, A)),
                    values=V0, dini=q.min(axis=1), margin=margin)


def fit_psi2(cand: LyapunovCandidate, system: DynamicalSystem, budget: Budget,
             shells: Sequence[float] = DEFAULT_SHELLS) -> LyapunovCandidate:
    """ψ₂(r_k) = max V over ‖x‖_A ≤ r_{k+1}: an upper envelope of V against ‖x‖_A."""
    s = _sample(cand, system, shells, budget, DINI_SCHEDULE)
    radii = sorted(float(r) for r in shells)
    peaks = [float(np.max(s.values[s.norms <= r], initial=0.0)) for r in radii]
    values = [0.0] + [peaks[min(k + 1, len(peaks) - 1)] for k in range(len(radii))]
    psi2 = MonotoneTable(breakpoints=[0.0] + radii, values=values, extrapolation=Extrapolation.LINEAR,
                         label="fitted")
    return cand.model_copy(update={"psi2": psi2, "psi2_fitted": True})


def fit_alpha(cand: LyapunovCandidate, system: DynamicalSystem, budget: Budget,
              shells: Sequence[float] = DEFAULT_SHELLS) -> LyapunovCandidate:
    """α(r_k) = ½ min(−V̇) over ‖x‖_A ≥ r_{k−1}: half a lower envelope of −V̇."""
    s = _sample(cand, system, shells, budget, DINI_SCHEDULE)
    radii = sorted(float(r) for r in shells)
    floors = [0.0] + radii[:-1]
    lows = np.array([float(np.min(-s.dini[s.norms >= f], initial=np.inf)) for f in floors])
    lows = np.where(np.isfinite(lows), np.maximum(lows, 0.0), 0.0)
    lows = lower_projection(lows, Direction.NONDECREASING)
    alpha = MonotoneTable(breakpoints=[0.0] + radii, values=[0.0] + (ALPHA_SCALE * lows).tolist(),
                          label="fitted")
    return cand.model_copy(update={"alpha": alpha, "alpha_fitted": True})


def verify_noncoercive(cand: LyapunovCandidate, system: DynamicalSystem, budget: Budget = Budget(),
                       shells: Sequence[float] = DEFAULT_SHELLS,
                       schedule: Sequence[float] = DINI_SCHEDULE) -> Verdict:
    """
    Check 0 < V(x) ≤ ψ₂(‖x‖_A) and V̇_d(x) ≤ −α(‖x‖_A) on sampled (x, d).

    Tolerance is 1e-6 plus the Dini confidence margin. A violation of a
    fitted bound is reported as Inconclusive.
    """
    if cand.psi2 is None or cand.alpha is None:
        raise InputError("ψ₂ and α must be declared or fitted before verification")
    s = _sample(cand, system, shells, budget, schedule)
    checks = [
        ("V(x) > 0", s.values <= 0, False),
        ("V(x) ≤ ψ₂(‖x‖_A)", s.values > cand.psi2(s.norms) + CONDITION_TOL, cand.psi2_fitted),
        ("V̇_d(x) ≤ −α(‖x‖_A)", s.dini > -cand.alpha(s.norms) + CONDITION_TOL + s.margin, cand.alpha_fitted),
    ]
    for label, violated, fitted in checks:
        if not np.any(violated):
            continue
        p = int(np.argmax(violated))
        count = int(violated.sum())
        if fitted:
            return Verdict.inconclusive(f"{count} samples violate the fitted bound {label}", budget)
        w = s.signals[p].to_witness(s.states[p], 0.0, float(s.dini[p] if "V̇" in label else s.values[p]))
        return Verdict.falsified(w, budget, f"{label} violated at {count} samples")
    return Verdict.supported(budget, f"non-coercive conditions hold on {len(s.states)} samples")


def lyapunov_tau_bound(cand: LyapunovCandidate, eps: float, r: float) -> float:
    """(ψ₂(r) + 1)/α(ε)."""
    if cand.psi2 is None or cand.alpha is None:
        raise InputError("ψ₂ and α are needed for the attraction-time bound")
    a = float(cand.alpha(eps))
    if not a > 0:
        raise InputError(f"α(ε) must be positive, got α({eps:g}) = {a:g}")
    return (float(cand.psi2(r)) + 1.0) / a


class DissipationCheck(BaseModel):
    """∫₀ᵀ α(‖φ‖_A) ds against ψ₂(‖x‖_A) on sampled trajectories."""
    verdict: Verdict
    samples: int
    worst_margin: float = Field(description="max of integral − ψ₂ − slack; ≤ 0 when the check holds")


def integral_dissipation(cand: LyapunovCandidate, system: DynamicalSystem, budget: Budget = Budget(),
                         radii: Sequence[float] = (0.5, 1.0, 2.0)) -> DissipationCheck:
    """
    Trapezoid integral of α along sampled trajectories, with slack
    |T_h − T_2h| + 1e-6 from halving the quadrature grid.
    """
    if cand.psi2 is None or cand.alpha is None:
        raise InputError("ψ₂ and α are needed for the dissipation check")
    A = cand.target
    worst, count = -math.inf, 0
    worst_pair = None
    for k, r in enumerate(radii):
        batch = simulate_from(system, A, r, budget, offset=k)
        dist = distances(batch, A)
        dist = np.where(np.isfinite(dist), dist, np.inf)
        rate = cand.alpha(np.where(np.isfinite(dist), dist, 0.0))
        rate = np.where(np.isfinite(dist), rate, np.inf)
        fine = trapezoid(rate, batch.times, axis=-1)
        coarse = trapezoid(rate[..., ::2], batch.times[::2], axis=-1)
        with np.errstate(invalid="ignore"):
            slack = np.abs(fine - coarse) + QUADRATURE_SLACK
            bound = cand.psi2(dist[..., 0])
            excess = np.where(np.isfinite(fine), fine - bound - slack, np.inf)
        count += excess.size
        i, s = np.unravel_index(int(np.argmax(excess)), excess.shape)
        if excess[i, s] > worst:
            worst = float(excess[i, s])
            worst_pair = (batch, int(i), int(s), float(fine[i, s]))
    if worst <= 0:
        return DissipationCheck(verdict=Verdict.supported(budget), samples=count, worst_margin=worst)
    batch, i, s, value = worst_pair
    if cand.alpha_fitted or cand.psi2_fitted:
        verdict = Verdict.inconclusive("integral of the fitted α exceeds ψ₂", budget)
    else:
        verdict = Verdict.falsified(batch.witness(i, s, len(batch.times) - 1, value), budget,
                                    "∫ α(‖φ‖_A) exceeds ψ₂(‖x‖_A)")
    return DissipationCheck(verdict=verdict, samples=count, worst_margin=worst)


def check_lyapunov_attraction(cand: LyapunovCandidate, system: DynamicalSystem, eps_grid: Sequence[float],
                              r_grid: Sequence[float], budget: Budget = Budget()) -> PropertyReport:
    """
    Every sampled trajectory from B_r(A) must enter B_ε(A) by
    (ψ₂(r) + 1)/α(ε). A late entry is a defect of the candidate or of the
    sampling, reported as Falsified with the late trajectory.
    """
    A = cand.target
    eps_list = sorted(float(e) for e in eps_grid)
    radii = sorted(float(r) for r in r_grid)
    bounds = np.array([[lyapunov_tau_bound(cand, e, r) for r in radii] for e in eps_list])
    kind = PropertyKind.UNIFORM_WEAK_ATTRACTIVE
    horizon = min(float(bounds.max()) + budget.step, budget.horizon)
    b = budget.with_horizon(horizon)
    for j, r in enumerate(radii):
        batch = simulate_from(system, A, r, b, offset=j)
        dist = distances(batch, A)
        for i, eps in enumerate(eps_list):
            if bounds[i, j] >= horizon:
                continue
            t, (p, s) = refined_extreme(system, batch, dist, A, eps, "enter")
            if t > bounds[i, j]:
                entry, k = first_entry_times(dist, batch.times, eps)
                k_at = int(k[p, s]) if k[p, s] >= 0 else len(batch.times) - 1
                w = batch.witness(p, s, k_at, float(dist[p, s, k_at]))
                note = (f"entry at {t:.4g} after the Lyapunov bound {bounds[i, j]:.4g} (ε={eps:g}, r={r:g}): "
                        f"the candidate or its comparison functions are defective")
                logger.error(note)
                return build_report(kind, Verdict.falsified(w, b, note), A)
    tau = TauTable.from_values(eps_list, radii, bounds, kind="first_entry")
    return build_report(kind, Verdict.supported(b, "entry within the Lyapunov bound on every sampled trajectory"),
                        A, Certificates(tau=tau), notes=["τ(ε, r) = (ψ₂(r) + 1)/α(ε)"])


class StabilityConclusion(BaseModel):
    """What the supplied evidence licenses, with the chain of verdicts behind it."""
    claim: Optional[str] = Field(default=None, description="UGAS, pUGAS or None")
    evidence: Dict[str, VerdictStatus]
    witness: Optional[Witness] = None
    tau: Optional[TauTable] = Field(default=None, description="Lyapunov attraction-time certificate")
    notes: List[str] = Field(default_factory=list)


def conclude(lyapunov: Verdict, rfc: Verdict, robust_equilibrium: Verdict,
             tau: Optional[TauTable] = None) -> StabilityConclusion:
    """
    Non-coercive Lyapunov function ∧ RFC ⇒ pUGAS; with a robust
    equilibrium as well ⇒ UGAS. A falsified Lyapunov or RFC input yields no claim.
    """
    evidence = {"Lyapunov": lyapunov.status, "RFC": rfc.status, "RobustEquilibrium": robust_equilibrium.status}
    falsified = next((v for v in (lyapunov, rfc, robust_equilibrium) if v.is_falsified), None)
    witness = falsified.witness if falsified is not None else None
    if lyapunov.is_falsified or rfc.is_falsified:
        return StabilityConclusion(evidence=evidence, witness=witness, notes=[falsified.note])
    if not (lyapunov.is_supported and rfc.is_supported):
        return StabilityConclusion(evidence=evidence, notes=["Lyapunov and RFC evidence are not both supported"])
    notes = ["non-coercive Lyapunov function and RFC give practical UGAS"]
    if robust_equilibrium.is_supported:
        notes.append("the equilibrium is robust, so practical UGAS upgrades to UGAS")
        return StabilityConclusion(claim="UGAS", evidence=evidence, tau=tau, notes=notes)
    if robust_equilibrium.is_falsified:
        notes.append(f"no UGAS claim: {robust_equilibrium.note}")
    return StabilityConclusion(claim="pUGAS", evidence=evidence, witness=witness, tau=tau, notes=notes)


class LyapunovAnalyzer(BaseAnalyzer):
    """
    Analyzer that verifies non-coercive Lyapunov candidates.
    """

    def __init__(self, **kwargs):
        super().__init__(
            name="Lyapunov Analyzer",
            description="Verifies non-coercive Lyapunov conditions and derives attraction-time bounds",
            **kwargs
        )
        self.operations = {
            "dini_derivative": dini_derivative,
            "fit_psi2": fit_psi2,
            "fit_alpha": fit_alpha,
            "verify_noncoercive": verify_noncoercive,
            "lyapunov_tau_bound": lyapunov_tau_bound,
            "integral_dissipation": integral_dissipation,
            "check_lyapunov_attraction": check_lyapunov_attraction,
            "conclude": conclude,
        }
