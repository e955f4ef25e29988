"""
Property Analyzer for the stability toolkit.
Sampling-based checks of the stability predicates (Lagrange, ULS, UGS,
weak and uniform attractivity, UGATT, ultimate boundedness, robust
invariance, recurrence) and the pUGAS / UGAS equivalence cross-checks.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConstructionRefused, InputError
from core.reports import (
    BoundednessCertificate,
    Certificates,
    ConsistencyItem,
    ConsistencyReport,
    LagrangeCertificate,
    PropertyKind,
    PropertyReport,
    RfcEnvelope,
    build_report,
)
from core.sets import SetDescriptor, SetKind, box, origin, set_norm
from core.tables import (
    Direction,
    KLEnvelope,
    MonotoneGrid,
    MonotoneTable,
    TauTable,
    fit_monotone_envelope,
    lower_projection,
)
from core.verdict import Budget, Verdict, VerdictStatus, Witness, combine
from dynamics.integrator import TrajectoryBatch
from dynamics.measures import (
    distances,
    divergent,
    first_entry_times,
    refined_extreme,
    reexit_counts,
    simulate_from,
)
from dynamics.systems import DynamicalSystem
from tools.construction_tool import kl_envelope, lagrange_sigma, smooth_tau, validate_envelope
from tools.search_tool import DELTA_MIN, stress_verdict
from .base_analyzer import BaseAnalyzer
from .reach_analyzer import a_eps, estimate_rfc

logger = logging.getLogger("stability.properties")

DEFAULT_R_GRID = (0.5, 1.0, 2.0, 4.0)
DEFAULT_EPS_GRID = (0.05, 0.1, 0.2, 0.4)
DEFAULT_H_GRID = (1.0, 5.0)
K_START = 1.0 / 64.0
K_RATIO = 2.0 ** 0.25
INVARIANCE_TOL = 1e-6
PASS_FRACTION = 0.99
RFC_COLUMNS = 33
VALIDATION_OFFSET = 977
SWEEP_FACTOR = 5.0
CANDIDATE_EPS = 0.25

HORIZON_NOTE = "attraction is observed up to the horizon cap only; a re-exit after the cap is not excluded"
ORIGIN_NOTE = ("for a bounded A, Lagrange stability and pUGAS of A are equivalent to those of {0}; "
               "sigma_for_origin converts the certificate")
COMPACT_D_NOTE = ("with a compact disturbance set, weak and uniform weak attractivity of a bounded set coincide; "
                  "see the uniform τ estimate")


def _grid(values: Sequence[float], name: str) -> List[float]:
    out = [float(v) for v in values]
    if not out:
        raise InputError(f"the {name} grid must be nonempty")
    if any(v <= 0 for v in out) or any(b <= a for a, b in zip(out, out[1:])):
        raise InputError(f"the {name} grid must be positive and strictly increasing")
    return out


def _check_target(system: DynamicalSystem, A: SetDescriptor) -> None:
    if A.dimension != system.dimension:
        raise InputError(f"set dimension {A.dimension} does not match system dimension {system.dimension}")


def _nearest(times: np.ndarray, t: float) -> int:
    return int(np.argmin(np.abs(times - t)))


def _diverging(dist: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Doubling test, or distance and its increments both growing over the last half of the horizon."""
    H = times[-1]
    idx = [_nearest(times, H * f) for f in (0.5, 0.625, 0.75, 0.875, 1.0)]
    d = np.stack([dist[..., k] for k in idx], axis=-1)
    with np.errstate(invalid="ignore"):
        steps = np.diff(d, axis=-1)
        trend = np.all(steps > 0, axis=-1) & np.all(np.diff(steps, axis=-1) >= 0, axis=-1)
    return divergent(dist, times) | trend


def _final_witness(batch: TrajectoryBatch, dist: np.ndarray, mask: np.ndarray) -> Witness:
    """Witness at the last recorded time of the first trajectory selected by ``mask``."""
    i, s = (int(v) for v in np.argwhere(mask)[0])
    k = len(batch.times) - 1
    return batch.witness(i, s, k, float(dist[i, s, k]))


def _blowup(kind: PropertyKind, batch: TrajectoryBatch, budget: Budget, A: Optional[SetDescriptor],
            notes: Sequence[str] = ()) -> PropertyReport:
    w = batch.blowup_witness()
    verdict = Verdict.falsified(w, budget, f"blow-up at t = {w.time:.4g}")
    return build_report(kind, verdict, A, notes=notes)


class _Excursions:
    """sup_{s ≤ h} ‖φ(s, x, d)‖_A over B_δ(A), one cached batch per δ."""

    def __init__(self, system: DynamicalSystem, A: SetDescriptor, budget: Budget, horizon: float, offset: int):
        self.system = system
        self.A = A
        self.budget = budget
        self.horizon = horizon
        self.offset = offset
        self._cache: Dict[float, Tuple[TrajectoryBatch, np.ndarray]] = {}

    def _get(self, delta: float):
        key = round(float(delta), 12)
        if key not in self._cache:
            batch = simulate_from(self.system, self.A, delta, self.budget, horizon=self.horizon,
                                  offset=self.offset + len(self._cache))
            dist = distances(batch, self.A)
            self._cache[key] = (batch, np.where(np.isnan(dist), np.inf, dist))
        return self._cache[key]

    def sup(self, delta: float, h: float) -> Tuple[float, Witness]:
        batch, dist = self._get(delta)
        k = max(int(np.searchsorted(batch.times, h + 1e-12, side="right")) - 1, 0)
        window = dist[..., :k + 1]
        i, s, kk = np.unravel_index(int(np.argmax(window)), window.shape)
        value = float(window[i, s, kk])
        return value, batch.witness(int(i), int(s), int(kk), value)


def _largest_delta(exc: _Excursions, eps: float, h: float,
                   delta_min: float) -> Tuple[Optional[float], Optional[Witness]]:
    """
    Largest δ on the grid ε/2ᵏ (refined by 2^{1/4} around the transition)
    whose excursions stay within ε up to time h, and the last failing witness.
    """
    delta = eps
    failure = None
    while delta >= delta_min:
        value, w = exc.sup(delta, h)
        if value <= eps:
            break
        failure = w
        delta /= 2.0
    else:
        return None, failure
    if failure is not None:
        for j in (3, 2, 1):
            candidate = delta * 2.0 ** (j / 4.0)
            value, w = exc.sup(candidate, h)
            if value <= eps:
                delta = candidate
                break
            failure = w
    return delta, failure


def check_lagrange(system: DynamicalSystem, A: SetDescriptor, r_grid: Sequence[float] = DEFAULT_R_GRID,
                   budget: Budget = Budget(), stress: bool = False) -> PropertyReport:
    """
    Sampled sup ‖φ‖_A from B_r(A) per radius, bounded by σ(r) + c.

    σ and c = σ̃(0) come from ``lagrange_sigma`` on the RFC envelope and the
    smoothed UGATT τ table; σ is raised wherever a sampled sup exceeds it.
    When τ or μ is not supported, c falls back to the intercept of the line
    through the first two radii and σ to the least envelope of sup − c.
    Blow-ups and doubling trajectories falsify.
    """
    _check_target(system, A)
    radii = _grid(r_grid, "r")
    kind = PropertyKind.LAGRANGE
    sups: List[float] = []
    for k, r in enumerate(radii):
        batch = simulate_from(system, A, r, budget, offset=k)
        if batch.any_blowup:
            return _blowup(kind, batch, budget, A)
        dist = distances(batch, A)
        growing = divergent(dist, batch.times)
        if np.any(growing):
            w = _final_witness(batch, dist, growing)
            return build_report(kind, Verdict.falsified(w, budget, f"running sup keeps doubling from radius {r:g}"), A)
        sups.append(float(np.max(dist)))
    diagnostics: Dict[str, object] = {"sup_by_radius": dict(zip(radii, sups))}
    notes = [ORIGIN_NOTE]
    constructed, stage = _constructed_lagrange(system, A, radii, budget, stress)
    if constructed is None:
        c = 0.0
        if len(radii) > 1:
            slope = (sups[1] - sups[0]) / (radii[1] - radii[0])
            c = max(0.0, sups[0] - slope * radii[0])
        samples = [(0.0, 0.0)] + [(r, max(s - c, 0.0)) for r, s in zip(radii, sups)]
        sigma = fit_monotone_envelope(samples, label="sampled").as_class_kinf()
        notes.append(f"σ fitted to the sampled sups; construction stopped at {stage}")
        flag = None
    else:
        c = constructed.offset_c
        bp, vals = constructed.sigma.arrays()
        short = [r for r, s in zip(radii, sups) if s > c + float(constructed.sigma(r)) + budget.tol]
        samples = [(float(b), float(v)) for b, v in zip(bp, vals)] + [(r, max(s - c, 0.0)) for r, s in zip(radii, sups)]
        sigma = fit_monotone_envelope(samples, label="constructed").as_class_kinf()
        diagnostics["constructed_raw"] = dict(zip(constructed.radii, constructed.raw))
        if short:
            notes.append(f"σ raised to the sampled sups at r = {', '.join(f'{r:g}' for r in short)}")
        flag = constructed.flag
    cert = LagrangeCertificate(sigma=sigma, offset_c=c, radii=radii, raw=sups, flag=flag)
    report = build_report(kind, Verdict.supported(budget, f"sup ‖φ‖_A ≤ σ(r) + {c:.4g} on the sampled radii"), A,
                          Certificates(lagrange=cert), diagnostics=diagnostics, notes=notes)
    return stress_verdict(report, system, budget) if stress else report


def _constructed_lagrange(system: DynamicalSystem, A: SetDescriptor, radii: List[float], budget: Budget,
                          stress: bool) -> Tuple[Optional[LagrangeCertificate], str]:
    """σ and c from μ(r, τ̄(r)), or None and the stage that stopped the construction."""
    eps_list = sorted({r / 2.0 for r in radii} | {radii[-1]})
    tau_report = estimate_tau_ugatt(system, A, eps_list, radii + [2.0 * radii[-1]], budget, stress=stress)
    if not tau_report.verdict.is_supported:
        return None, f"UGATT τ ({tau_report.verdict.note})"
    rfc = estimate_rfc(system, [0.0] + radii, rfc_time_grid(budget), budget, A)
    if not rfc.verdict.is_supported:
        return None, f"RFC ({rfc.verdict.note})"
    try:
        return lagrange_sigma(rfc, smooth_tau(tau_report.certificates.tau)), "constructed"
    except (ConstructionRefused, InputError) as e:
        return None, f"construction ({e})"


def sigma_for_origin(cert: LagrangeCertificate, A: SetDescriptor) -> LagrangeCertificate:
    """
    Lagrange certificate of {0} from one of a bounded A:
    ‖φ‖ ≤ σ(2‖x‖) + σ(2‖A‖) + c + ‖A‖.
    """
    norm = set_norm(A)
    bp, vals = cert.sigma.arrays()
    sigma0 = MonotoneTable(breakpoints=(bp / 2.0).tolist(), values=vals.tolist(),
                           direction=Direction.NONDECREASING, extrapolation=cert.sigma.extrapolation,
                           label=cert.sigma.label)
    c0 = cert.offset_c + norm + float(cert.sigma(2.0 * norm))
    return LagrangeCertificate(sigma=sigma0, offset_c=c0, radii=[r / 2.0 for r in cert.radii], raw=list(cert.raw),
                               flag=cert.flag)


def check_uls(system: DynamicalSystem, A: SetDescriptor, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
              budget: Budget = Budget(), stress: bool = False, delta_min: float = DELTA_MIN) -> PropertyReport:
    """
    For each ε, the largest grid δ whose sampled excursions over the horizon
    stay within ε. No δ down to ``delta_min`` falsifies.
    """
    _check_target(system, A)
    eps_list = _grid(eps_grid, "ε")
    if eps_list[0] < delta_min:
        raise InputError(f"ε values must be at least δ_min = {delta_min:g}")
    kind = PropertyKind.ULS
    exc = _Excursions(system, A, budget, budget.horizon, offset=31)
    deltas: List[float] = []
    for eps in eps_list:
        delta, failure = _largest_delta(exc, eps, budget.horizon, delta_min)
        if delta is None:
            verdict = Verdict.falsified(failure, budget, f"no δ ≥ {delta_min:g} keeps excursions within ε={eps:g}")
            return build_report(kind, verdict, A, diagnostics={"delta_min": delta_min})
        deltas.append(delta)
    projected = lower_projection(np.asarray(deltas), Direction.NONDECREASING)
    table = MonotoneTable(breakpoints=[0.0] + eps_list, values=[0.0] + projected.tolist(), label="sampled")
    report = build_report(kind, Verdict.supported(budget), A, Certificates(delta=table),
                          diagnostics={"delta_min": delta_min, "delta_by_eps": dict(zip(eps_list, projected.tolist()))})
    return stress_verdict(report, system, budget) if stress else report


def _ugs_from(uls: PropertyReport, lag: PropertyReport, budget: Budget) -> PropertyReport:
    """UGS as ULS ∧ Lagrange, with σ_UGS(r) = min(σ(r) + c, min{ε : δ(ε) ≥ r})."""
    audit = {"ULS": uls.status.value, "Lagrange": lag.status.value}
    verdict = combine([uls.verdict, lag.verdict], budget)
    diagnostics = {"conjunction": audit}
    if not verdict.is_supported:
        return build_report(PropertyKind.UGS, verdict, uls.target, diagnostics=diagnostics)
    cert = lag.certificates.lagrange
    delta = uls.certificates.delta
    eps_bp, delta_vals = delta.arrays()
    radii = sorted({r for r in list(cert.radii) + delta_vals.tolist() if r > 0})
    samples = [(0.0, 0.0)]
    for r in radii:
        covering = eps_bp[(delta_vals >= r) & (eps_bp > 0)]
        value = float(cert.bound(r))
        if covering.size:
            value = min(value, float(covering.min()))
        samples.append((r, value))
    sigma = fit_monotone_envelope(samples, label="sampled").as_class_kinf()
    ugs = LagrangeCertificate(sigma=sigma, offset_c=0.0, radii=radii, raw=[v for _, v in samples[1:]])
    return build_report(PropertyKind.UGS, verdict, uls.target, Certificates(lagrange=ugs, delta=delta),
                        diagnostics=diagnostics, notes=["UGS = ULS ∧ Lagrange stability"])


def check_ugs(system: DynamicalSystem, A: SetDescriptor, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
              r_grid: Sequence[float] = DEFAULT_R_GRID, budget: Budget = Budget(),
              stress: bool = False) -> PropertyReport:
    """Run ULS and Lagrange and combine them; the report audits both conjuncts."""
    uls = check_uls(system, A, eps_grid, budget, stress)
    lag = check_lagrange(system, A, r_grid, budget, stress)
    return _ugs_from(uls, lag, budget)


def check_weak_attractivity(system: DynamicalSystem, A: SetDescriptor, eps: float, budget: Budget = Budget(),
                            radius: float = 1.0) -> PropertyReport:
    """
    Every sampled pair from B_radius(A) must enter B_ε(A) within the horizon.

    A non-entering pair that blows up, doubles, or grows with a growing
    trend over the last half of the horizon falsifies at the horizon.
    """
    if not eps > 0:
        raise InputError(f"ε must be positive, got {eps}")
    _check_target(system, A)
    kind = PropertyKind.WEAK_ATTRACTIVE
    notes = [COMPACT_D_NOTE]
    batch = simulate_from(system, A, radius, budget)
    dist = distances(batch, A)
    entry, _ = first_entry_times(dist, batch.times, eps)
    missing = np.isinf(entry)
    if not np.any(missing):
        t, pair = refined_extreme(system, batch, dist, A, eps, "enter")
        verdict = Verdict.supported(budget, f"all sampled pairs enter B_ε(A) by t = {t:.4g}")
        return build_report(kind, verdict, A, Certificates(values={"max_entry_time": t, "eps": eps}),
                            diagnostics={"worst_pair": list(pair)}, notes=notes)
    growing = missing & _diverging(dist, batch.times)
    if np.any(growing):
        w = _final_witness(batch, dist, growing)
        verdict = Verdict.falsified(w, budget, f"trajectory diverges within horizon {budget.horizon:g}")
        return build_report(kind, verdict, A, notes=notes)
    verdict = Verdict.inconclusive(f"{int(missing.sum())} sampled pairs do not reach B_ε(A) "
                                   f"within horizon {budget.horizon:g}", budget)
    return build_report(kind, verdict, A, notes=notes)


def _missing_entry(kind: PropertyKind, batch, dist, A, eps, r, budget, notes) -> PropertyReport:
    entry, _ = first_entry_times(dist, batch.times, eps)
    missing = np.isinf(entry)
    growing = missing & _diverging(dist, batch.times)
    if np.any(growing):
        w = _final_witness(batch, dist, growing)
        return build_report(kind, Verdict.falsified(w, budget, f"trajectory from radius {r:g} diverges within "
                                                              f"horizon {budget.horizon:g}"), A, notes=notes)
    reason = f"no entry into B_ε(A), ε={eps:g}, from radius {r:g} within horizon {budget.horizon:g}"
    return build_report(kind, Verdict.inconclusive(reason, budget), A, notes=notes)


def estimate_tau_uniform_weak(system: DynamicalSystem, A: SetDescriptor, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                              r_grid: Sequence[float] = DEFAULT_R_GRID, budget: Budget = Budget(),
                              stress: bool = True) -> PropertyReport:
    """
    τ(ε, r) = largest sampled first-entry time into B_ε(A) from B_r(A),
    refined on the latest trajectories and stressed by adversarial search.
    """
    _check_target(system, A)
    eps_list, radii = _grid(eps_grid, "ε"), _grid(r_grid, "r")
    kind = PropertyKind.UNIFORM_WEAK_ATTRACTIVE
    values = np.zeros((len(eps_list), len(radii)))
    for j, r in enumerate(radii):
        batch = simulate_from(system, A, r, budget, offset=j)
        dist = distances(batch, A)
        for i, eps in enumerate(eps_list):
            t, _ = refined_extreme(system, batch, dist, A, eps, "enter")
            if not math.isfinite(t):
                return _missing_entry(kind, batch, dist, A, eps, r, budget, [COMPACT_D_NOTE])
            values[i, j] = t
    tau = TauTable.from_values(eps_list, radii, values, kind="first_entry")
    report = build_report(kind, Verdict.supported(budget), A,
                          Certificates(tau=tau, values={"max_tau": float(values.max())}), notes=[COMPACT_D_NOTE])
    return stress_verdict(report, system, budget) if stress else report


def estimate_tau_ugatt(system: DynamicalSystem, A: SetDescriptor, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                       r_grid: Sequence[float] = DEFAULT_R_GRID, budget: Budget = Budget(),
                       stress: bool = False) -> PropertyReport:
    """
    τ(ε, r) = largest sampled last-exit time from the complement of B_ε(A).

    A pair still outside at the horizon falsifies when it diverges and is
    Inconclusive otherwise. Re-exit counts and first-entry times are always
    reported next to the table.
    """
    _check_target(system, A)
    eps_list, radii = _grid(eps_grid, "ε"), _grid(r_grid, "r")
    kind = PropertyKind.UGATT
    notes = [HORIZON_NOTE]
    values = np.zeros((len(eps_list), len(radii)))
    reexits = np.zeros_like(values, dtype=int)
    first = np.zeros_like(values)
    for j, r in enumerate(radii):
        batch = simulate_from(system, A, r, budget, offset=j)
        dist = distances(batch, A)
        for i, eps in enumerate(eps_list):
            entry, _ = first_entry_times(dist, batch.times, eps)
            first[i, j] = float(np.max(entry))
            reexits[i, j] = int(np.max(reexit_counts(dist, eps)))
            t, _ = refined_extreme(system, batch, dist, A, eps, "exit")
            if not math.isfinite(t):
                outside = ~(dist[..., -1] <= eps)
                growing = outside & _diverging(dist, batch.times)
                diagnostics = {"reexits": reexits.tolist(), "first_entry": first.tolist()}
                if np.any(growing):
                    w = _final_witness(batch, dist, growing)
                    verdict = Verdict.falsified(w, budget, f"trajectory from radius {r:g} diverges within "
                                                           f"horizon {budget.horizon:g}")
                else:
                    verdict = Verdict.inconclusive(f"not settled within horizon {budget.horizon:g} "
                                                   f"(ε={eps:g}, r={r:g})", budget)
                return build_report(kind, verdict, A, diagnostics=diagnostics, notes=notes)
            values[i, j] = t
    tau = TauTable.from_values(eps_list, radii, values, kind="last_exit")
    diagnostics = {"reexits": reexits.tolist(), "first_entry": first.tolist()}
    if reexits.any():
        notes.append(f"re-exit events observed (up to {int(reexits.max())} per trajectory)")
    report = build_report(kind, Verdict.supported(budget), A,
                          Certificates(tau=tau, values={"max_tau": float(values.max())}),
                          diagnostics=diagnostics, notes=notes)
    return stress_verdict(report, system, budget) if stress else report


def check_uniform_ultimate_boundedness(system: DynamicalSystem, r_grid: Sequence[float] = DEFAULT_R_GRID,
                                       budget: Budget = Budget(),
                                       A: Optional[SetDescriptor] = None) -> PropertyReport:
    """
    Smallest K on the grid 2^{k/4}/64 that every sampled trajectory stays
    below over the second half of the horizon, with T(r) the refined last
    time above K from B_r. Norms are taken from the origin unless ``A`` is given.
    """
    A = origin(system.dimension) if A is None else A
    _check_target(system, A)
    radii = _grid(r_grid, "r")
    kind = PropertyKind.UNIFORM_ULTIMATE_BOUNDED
    batches = []
    tail = 0.0
    for k, r in enumerate(radii):
        batch = simulate_from(system, A, r, budget, offset=k)
        if batch.any_blowup:
            return _blowup(kind, batch, budget, A)
        dist = distances(batch, A)
        growing = _diverging(dist, batch.times)
        if np.any(growing):
            w = _final_witness(batch, dist, growing)
            return build_report(kind, Verdict.falsified(w, budget, f"trajectory from radius {r:g} diverges"), A)
        half = batch.times >= 0.5 * batch.times[-1]
        tail = max(tail, float(np.max(dist[..., half])))
        batches.append((batch, dist))
    steps = 0 if tail <= K_START else math.ceil(4.0 * math.log2(tail / K_START) - 1e-9)
    K = K_START * K_RATIO ** steps
    if K < tail:
        K *= K_RATIO
    settle = []
    for (batch, dist) in batches:
        t, _ = refined_extreme(system, batch, dist, A, K, "exit")
        settle.append(t)
    cert = BoundednessCertificate(bound_k=K, radii=radii, settle_times=settle)
    verdict = Verdict.supported(budget, f"‖φ‖ ≤ {K:.4g} after T(r) on the sampled radii")
    return build_report(kind, verdict, A, Certificates(boundedness=cert), diagnostics={"tail_sup": tail},
                        notes=[HORIZON_NOTE])


def _invariance_excursion(system: DynamicalSystem, A: SetDescriptor, horizon: float,
                          budget: Budget) -> Tuple[float, Witness]:
    batch = simulate_from(system, A, 0.0, budget, horizon=horizon, offset=53)
    dist = distances(batch, A)
    dist = np.where(np.isnan(dist), np.inf, dist)
    i, s, k = np.unravel_index(int(np.argmax(dist)), dist.shape)
    value = float(dist[i, s, k])
    return value, batch.witness(int(i), int(s), int(k), value)


def check_robust_invariance(system: DynamicalSystem, A: SetDescriptor, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                            h_grid: Sequence[float] = DEFAULT_H_GRID, budget: Budget = Budget(),
                            stress: bool = False, delta_min: float = DELTA_MIN) -> PropertyReport:
    """
    δ(ε, h): largest grid δ whose excursions up to time h stay within ε.

    A is first checked for invariance by flowing samples of A itself.
    """
    _check_target(system, A)
    eps_list, hs = _grid(eps_grid, "ε"), _grid(h_grid, "h")
    if eps_list[0] < delta_min:
        raise InputError(f"ε values must be at least δ_min = {delta_min:g}")
    kind = PropertyKind.ROBUST_INVARIANT
    leak, _ = _invariance_excursion(system, A, hs[-1], budget)
    if leak > INVARIANCE_TOL:
        verdict = Verdict.inconclusive("A not invariant", budget)
        return build_report(kind, verdict, A, diagnostics={"invariance_excursion": leak})
    exc = _Excursions(system, A, budget, hs[-1], offset=67)
    values = np.zeros((len(eps_list), len(hs)))
    diagnostics: Dict = {"delta_min": delta_min}
    for i, eps in enumerate(eps_list):
        for j, h in enumerate(hs):
            delta, failure = _largest_delta(exc, eps, h, delta_min)
            if delta is None:
                verdict = Verdict.falsified(failure, budget,
                                            f"no δ ≥ {delta_min:g} keeps excursions within ε={eps:g} up to h={h:g}")
                return build_report(kind, verdict, A, diagnostics=diagnostics)
            if failure is not None and "failure_witness" not in diagnostics:
                diagnostics["failure_witness"] = failure
            values[i, j] = delta
    projected = lower_projection(lower_projection(values, Direction.NONDECREASING, axis=0),
                                 Direction.NONINCREASING, axis=1)
    grid = MonotoneGrid(rows=eps_list, cols=hs, values=projected.tolist(),
                        row_direction=Direction.NONDECREASING, col_direction=Direction.NONINCREASING)
    report = build_report(kind, Verdict.supported(budget), A, Certificates(robust_delta=grid),
                          diagnostics=diagnostics)
    return stress_verdict(report, system, budget) if stress else report


def excursion_profile(system: DynamicalSystem, A: SetDescriptor, delta_grid: Sequence[float], h: float,
                      budget: Budget = Budget()) -> MonotoneTable:
    """δ ↦ sup_{t ≤ h} ‖φ(t, x, d)‖_A over B_δ(A), with the excursion from A itself at δ = 0."""
    _check_target(system, A)
    deltas = _grid(delta_grid, "δ")
    if not h > 0:
        raise InputError(f"h must be positive, got {h}")
    exc = _Excursions(system, A, budget, h, offset=83)
    at_zero, _ = _invariance_excursion(system, A, h, budget)
    values = [at_zero] + [exc.sup(d, h)[0] for d in deltas]
    if not all(math.isfinite(v) for v in values):
        raise InputError(f"excursion profile is unbounded: blow-up before h = {h:g}")
    return MonotoneTable(breakpoints=[0.0] + deltas, values=values, label="excursion profile")


def sweep_robust_invariance(family: Callable[[float], DynamicalSystem], Ms: Sequence[float], A: SetDescriptor,
                            eps: float, h: float, budget: Budget = Budget(),
                            factor: float = SWEEP_FACTOR) -> PropertyReport:
    """
    Robust invariance across disturbance bounds M.

    δ(ε, h, M) shrinking by at least ``factor`` between the smallest and the
    largest M falsifies robustness, with the failing excursion at the largest M.
    """
    bounds = sorted(float(m) for m in Ms)
    if len(bounds) < 2:
        raise InputError("a disturbance sweep needs at least two bounds")
    reports = [check_robust_invariance(family(M), A, [eps], [h], budget) for M in bounds]
    deltas = []
    for M, rep in zip(bounds, reports):
        if rep.verdict.is_falsified:
            return rep.with_verdict(rep.verdict.with_note(f"at M = {M:g}"))
        deltas.append(float(rep.certificates.robust_delta.array()[0, 0]) if rep.verdict.is_supported else math.nan)
    diagnostics = {"M": bounds, "delta": deltas}
    last = reports[-1]
    if not (math.isfinite(deltas[0]) and math.isfinite(deltas[-1])):
        verdict = Verdict.inconclusive("robust invariance undecided at an end of the sweep", budget)
        return build_report(PropertyKind.ROBUST_INVARIANT, verdict, A, diagnostics=diagnostics)
    ratio = deltas[0] / deltas[-1] if deltas[-1] > 0 else math.inf
    diagnostics["ratio"] = ratio
    witness = last.diagnostics.get("failure_witness")
    if ratio >= factor and witness is not None:
        verdict = Verdict.falsified(witness, budget,
                                    f"δ(ε={eps:g}, h={h:g}) shrinks by {ratio:.3g} from M = {bounds[0]:g} "
                                    f"to M = {bounds[-1]:g}; excursion witness at M = {bounds[-1]:g}")
        return build_report(PropertyKind.ROBUST_INVARIANT, verdict, A, diagnostics=diagnostics)
    merged = dict(last.diagnostics, **diagnostics)
    return last.model_copy(update={"diagnostics": merged})


def _has_interior(A: SetDescriptor) -> bool:
    if A.kind == SetKind.POINTS:
        return False
    if A.kind == SetKind.BALL:
        return A.radius > 0
    lo, hi = A.outer_box()
    return bool(np.all(hi > lo))


def check_recurrence(system: DynamicalSystem, A: SetDescriptor, uniform: bool = False, budget: Budget = Budget(),
                     radius_grid: Sequence[float] = (1.0, 2.0, 4.0), wrap_eps: float = 0.05) -> PropertyReport:
    """
    Entry into A itself from ‖x‖_A ≤ R; sets without interior are replaced
    by B_wrap_eps(A). ``uniform`` adds the τ(R) table.
    """
    _check_target(system, A)
    radii = _grid(radius_grid, "R")
    kind = PropertyKind.UNIFORMLY_GLOBALLY_RECURRENT if uniform else PropertyKind.GLOBALLY_RECURRENT
    level, notes = 0.0, []
    if not _has_interior(A):
        level = float(wrap_eps)
        notes.append(f"A has empty interior; entry is detected into B_ε(A) with ε = {level:g}")
    times = []
    for k, R in enumerate(radii):
        batch = simulate_from(system, A, R, budget, offset=k)
        dist = distances(batch, A)
        t, _ = refined_extreme(system, batch, dist, A, level, "enter")
        if not math.isfinite(t):
            return _missing_entry(kind, batch, dist, A, level, R, budget, notes)
        times.append(t)
    values = {"max_entry_time": max(times)}
    certificates = Certificates(values=values)
    if uniform:
        table = MonotoneTable(breakpoints=radii, values=times, label="sampled")
        certificates = Certificates(recurrence=table, values=values)
    verdict = Verdict.supported(budget, f"every sampled pair enters A by t = {max(times):.4g}")
    return build_report(kind, verdict, A, certificates, notes=notes)


def rfc_report(env: RfcEnvelope) -> PropertyReport:
    """PropertyReport view of an RFC envelope."""
    mu = env.mu.array()
    certificates = Certificates(values={"mu_max": float(np.max(mu))}) if env.verdict.is_supported else None
    return build_report(PropertyKind.RFC, env.verdict, env.target, certificates,
                        diagnostics={"r_grid": env.r_grid, "t_grid": env.t_grid, "mu": mu.tolist()})


def rfc_time_grid(budget: Budget) -> List[float]:
    """Times at which μ is tabulated for the envelope constructions."""
    return np.linspace(0.0, budget.horizon, RFC_COLUMNS).tolist()


def _envelope_eps(r_max: float) -> List[float]:
    out, e = [], 0.01
    while e < 2.0 * r_max:
        out.append(e)
        e *= 2.0
    out.append(e)
    return out


def envelope_grids(radii: Sequence[float]) -> Tuple[List[float], List[float]]:
    """ε and r grids of the UGATT τ table behind a pUGAS envelope."""
    radii = list(radii)
    return _envelope_eps(radii[-1]), radii + [2.0 * radii[-1]]


def fit_pugas_envelope(system: DynamicalSystem, A: SetDescriptor, budget: Budget = Budget(),
                       r_grid: Sequence[float] = DEFAULT_R_GRID, eps_grid: Optional[Sequence[float]] = None,
                       rfc: Optional[RfcEnvelope] = None, stress: bool = True) -> PropertyReport:
    """
    Build β and c from the stressed UGATT τ table and the RFC envelope μ,
    then check them on trajectories drawn with a different seed.
    """
    _check_target(system, A)
    radii = _grid(r_grid, "r")
    kind = PropertyKind.PUGAS
    eps_list, tau_radii = envelope_grids(radii)
    if eps_grid is not None:
        eps_list = _grid(eps_grid, "ε")
    tau_report = estimate_tau_ugatt(system, A, eps_list, tau_radii, budget, stress=stress)
    if not tau_report.verdict.is_supported:
        return build_report(kind, tau_report.verdict, A, diagnostics={"stage": "tau"}, notes=tau_report.notes)
    if rfc is None:
        rfc = estimate_rfc(system, [0.0] + radii, rfc_time_grid(budget), budget, A)
    if not rfc.verdict.is_supported:
        return build_report(kind, rfc.verdict, A, diagnostics={"stage": "rfc"})
    try:
        smoothed = smooth_tau(tau_report.certificates.tau)
        lag = lagrange_sigma(rfc, smoothed)
        env = kl_envelope(lag.sigma, lag.offset_c, smoothed, radii, tau_report.verdict)
    except ConstructionRefused as e:
        return build_report(kind, Verdict.inconclusive(str(e), budget), A, diagnostics={"stage": "construction"})
    return validate_pugas_envelope(system, A, budget, radii, env, smoothed, lag)


def validate_pugas_envelope(system: DynamicalSystem, A: SetDescriptor, budget: Budget, r_grid: Sequence[float],
                            env: KLEnvelope, smoothed: TauTable, lag: LagrangeCertificate) -> PropertyReport:
    """
    pUGAS report for a constructed envelope, supported when it bounds at
    least PASS_FRACTION of the held-out trajectories.
    """
    kind = PropertyKind.PUGAS
    held_out = budget.reseeded(VALIDATION_OFFSET)
    passed = total = 0
    worst = 0.0
    for k, r in enumerate(_grid(r_grid, "r")):
        check = validate_envelope(env, A, simulate_from(system, A, r, held_out, offset=k))
        passed += check.samples - check.failures
        total += check.samples
        worst = max(worst, check.worst_excess)
    fraction = passed / total if total else 0.0
    notes = [HORIZON_NOTE, ORIGIN_NOTE] + ([lag.flag] if lag.flag else [])
    diagnostics = {"pass_fraction": fraction, "worst_excess": worst, "validation_seed": held_out.seed}
    if fraction >= PASS_FRACTION:
        verdict = Verdict.supported(budget, f"envelope holds on {fraction:.4f} of held-out samples")
        certificates = Certificates(envelope=env, tau=smoothed, lagrange=lag,
                                    values={"pass_fraction": fraction, "offset_c": env.offset_c})
        return build_report(kind, verdict, A, certificates, diagnostics=diagnostics, notes=notes)
    verdict = Verdict.inconclusive(f"envelope validation pass fraction {fraction:.4f} below {PASS_FRACTION}", budget)
    return build_report(kind, verdict, A, diagnostics=diagnostics, notes=notes)


def fit_ugas_envelope(system: DynamicalSystem, A: SetDescriptor, budget: Budget = Budget(),
                      r_grid: Sequence[float] = DEFAULT_R_GRID, uls: Optional[PropertyReport] = None,
                      rfc: Optional[RfcEnvelope] = None, pugas: Optional[PropertyReport] = None) -> PropertyReport:
    """
    pUGAS envelope whose offset c is negligible, i.e. at most 0.01·max(1, r_max).

    A ULS violation falsifies it, since an envelope with c = 0 bounds every
    excursion by β(δ, 0). A ``pugas`` report already built on the same
    budget is reused instead of fitting a new envelope.
    """
    radii = _grid(r_grid, "r")
    if uls is not None and uls.verdict.is_falsified:
        return build_report(PropertyKind.UGAS, uls.verdict, A, diagnostics={"stage": "ULS"})
    env = pugas if pugas is not None else fit_pugas_envelope(system, A, budget, radii, rfc=rfc)
    if not env.verdict.is_supported:
        return build_report(PropertyKind.UGAS, env.verdict, A, diagnostics=env.diagnostics, notes=env.notes)
    c = env.certificates.envelope.offset_c
    threshold = 0.01 * max(1.0, radii[-1])
    if c > threshold:
        verdict = Verdict.inconclusive(f"offset c = {c:.4g} exceeds {threshold:.4g}", budget)
        return build_report(PropertyKind.UGAS, verdict, A, diagnostics=env.diagnostics, notes=env.notes)
    return build_report(PropertyKind.UGAS, env.verdict, A, env.certificates, env.diagnostics, env.notes)


def _existential(report: PropertyReport, note: str) -> PropertyReport:
    """Falsifying one candidate does not falsify an existence claim."""
    if not report.verdict.is_falsified:
        return report
    verdict = Verdict.inconclusive(f"{report.verdict.note}; {note}", report.verdict.budget)
    return report.with_verdict(verdict)


def _consistency(theorem: str, items: Dict[str, Dict[str, PropertyReport]],
                 reports: Dict[str, PropertyReport], budget: Budget) -> ConsistencyReport:
    built = []
    for name, conjuncts in items.items():
        verdict = combine([r.verdict for r in conjuncts.values()], budget)
        built.append(ConsistencyItem(name=name, conjuncts={k: r.status for k, r in conjuncts.items()},
                                     status=verdict.status))
    supported = [i.name for i in built if i.status == VerdictStatus.SUPPORTED]
    falsified = [i.name for i in built if i.status == VerdictStatus.FALSIFIED]
    diagnostics = [f"item {s} is SupportedUpTo while item {f} is Falsified: the budget or grid resolution "
                   f"does not separate them" for s in supported for f in falsified]
    for line in diagnostics:
        logger.warning(f"{theorem}: {line}")
    return ConsistencyReport(theorem=theorem, items=built, consistent=not diagnostics,
                             diagnostics=diagnostics, reports=reports)


def cross_check_pugas(system: DynamicalSystem, A: SetDescriptor, budget: Budget = Budget(),
                      r_grid: Sequence[float] = DEFAULT_R_GRID,
                      eps_grid: Sequence[float] = DEFAULT_EPS_GRID) -> ConsistencyReport:
    """
    Items of the pUGAS equivalence on one budget:
    (i) pUGAS envelope, (ii) Lagrange ∧ UGATT of a candidate set,
    (iii) RFC ∧ UGATT of a candidate set, (iv) RFC ∧ ultimate boundedness,
    (v) RFC ∧ uniform weak attractivity.
    """
    radii = _grid(r_grid, "r")
    env = estimate_rfc(system, [0.0] + radii, rfc_time_grid(budget), budget, A)
    rfc = rfc_report(env)
    pugas = fit_pugas_envelope(system, A, budget, radii, rfc=env)
    lag = check_lagrange(system, A, radii, budget)
    cloud = a_eps(system, A, CANDIDATE_EPS, budget)
    if cloud.verdict.is_falsified:
        ugatt = build_report(PropertyKind.UGATT, Verdict.inconclusive(
            f"no bounded candidate set: {cloud.verdict.note}", budget), A)
    else:
        lo, hi = cloud.outer_box()
        candidate = box(lo.tolist(), hi.tolist())
        ugatt = _existential(estimate_tau_ugatt(system, candidate, eps_grid, radii, budget),
                             "another candidate set may still be attractive")
    uub = check_uniform_ultimate_boundedness(system, radii, budget)
    uwa = _existential(estimate_tau_uniform_weak(system, A, eps_grid, radii, budget, stress=False),
                       "another bounded set may still be weakly attractive")
    reports = {"pUGAS": pugas, "RFC": rfc, "Lagrange": lag, "UGATT": ugatt,
               "UniformUltimateBounded": uub, "UniformWeakAttractive": uwa}
    items = {
        "i": {"pUGAS": pugas},
        "ii": {"Lagrange": lag, "UGATT": ugatt},
        "iii": {"RFC": rfc, "UGATT": ugatt},
        "iv": {"RFC": rfc, "UniformUltimateBounded": uub},
        "v": {"RFC": rfc, "UniformWeakAttractive": uwa},
    }
    return _consistency("pUGAS", items, reports, budget)


def cross_check_ugas(system: DynamicalSystem, A: SetDescriptor, budget: Budget = Budget(),
                     r_grid: Sequence[float] = DEFAULT_R_GRID, eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
                     h_grid: Sequence[float] = DEFAULT_H_GRID) -> ConsistencyReport:
    """
    Items of the UGAS equivalence on one budget:
    (i) UGAS envelope, (ii) RFC ∧ UGATT ∧ robust invariance,
    (iii) RFC ∧ ULS ∧ uniform weak attractivity, (iv) UGS ∧ uniform weak
    attractivity, (v) UGS ∧ UGATT.
    """
    radii = _grid(r_grid, "r")
    env = estimate_rfc(system, [0.0] + radii, rfc_time_grid(budget), budget, A)
    rfc = rfc_report(env)
    uls = check_uls(system, A, eps_grid, budget)
    lag = check_lagrange(system, A, radii, budget)
    ugs = _ugs_from(uls, lag, budget)
    ugas = fit_ugas_envelope(system, A, budget, radii, uls=uls, rfc=env)
    ugatt = estimate_tau_ugatt(system, A, eps_grid, radii, budget)
    robust = check_robust_invariance(system, A, eps_grid, h_grid, budget)
    uwa = estimate_tau_uniform_weak(system, A, eps_grid, radii, budget, stress=False)
    reports = {"UGAS": ugas, "RFC": rfc, "ULS": uls, "Lagrange": lag, "UGS": ugs, "UGATT": ugatt,
               "RobustInvariant": robust, "UniformWeakAttractive": uwa}
    items = {
        "i": {"UGAS": ugas},
        "ii": {"RFC": rfc, "UGATT": ugatt, "RobustInvariant": robust},
        "iii": {"RFC": rfc, "ULS": uls, "UniformWeakAttractive": uwa},
        "iv": {"UGS": ugs, "UniformWeakAttractive": uwa},
        "v": {"UGS": ugs, "UGATT": ugatt},
    }
    return _consistency("UGAS", items, reports, budget)


class PropertyAnalyzer(BaseAnalyzer):
    """
    Analyzer that checks stability predicates and equivalence items.
    """

    def __init__(self, **kwargs):
        super().__init__(
            name="Property Analyzer",
            description="Checks Lagrange, ULS, UGS, attractivity, boundedness, robust invariance and recurrence",
            **kwargs
        )
        self.operations = {
            "check_lagrange": check_lagrange,
            "check_uls": check_uls,
            "check_ugs": check_ugs,
            "check_weak_attractivity": check_weak_attractivity,
            "estimate_tau_uniform_weak": estimate_tau_uniform_weak,
            "estimate_tau_ugatt": estimate_tau_ugatt,
            "check_uniform_ultimate_boundedness": check_uniform_ultimate_boundedness,
            "check_robust_invariance": check_robust_invariance,
            "sweep_robust_invariance": sweep_robust_invariance,
            "excursion_profile": excursion_profile,
            "check_recurrence": check_recurrence,
            "fit_pugas_envelope": fit_pugas_envelope,
            "validate_pugas_envelope": validate_pugas_envelope,
            "fit_ugas_envelope": fit_ugas_envelope,
            "cross_check_pugas": cross_check_pugas,
            "cross_check_ugas": cross_check_ugas,
        }
