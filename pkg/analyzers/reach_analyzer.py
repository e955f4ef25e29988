"""
Reach Analyzer for the stability toolkit.
Sampling-based outer approximations of reachability sets, the prolongations
A_ε and P₊(A), and robust forward completeness through the μ envelope.
"""

import math
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import binary_dilation
from scipy.spatial import cKDTree

from core.errors import InputError
from core.reports import ReachCloud, RfcEnvelope
from core.sets import SetDescriptor, distance_to_set, origin
from core.tables import MonotoneGrid
from core.verdict import Budget, Verdict, VerdictStatus, Witness
from dynamics.integrator import TrajectoryBatch, simulate_batch, simulate_pairs
from dynamics.measures import (
    distances,
    last_exit_times,
    record_times,
    running_max,
    simulate_from,
    worst_trajectory,
)
from dynamics.signals import SignalStrategy, sample_signals
from dynamics.systems import DynamicalSystem
from .base_analyzer import BaseAnalyzer

SPACING_FACTOR = 3.0
SPACING_SAMPLE = 5000
CELLS_PER_AXIS = 64
GRID_MODE_MAX_DIM = 3
PROBES = 256


def _budget_over(budget: Budget, horizon: float) -> Budget:
    return budget.with_horizon(horizon)


def coverage_radius(points: np.ndarray, seed: int = 0) -> float:
    """Three times the median nearest-neighbour spacing of (a subsample of) the cloud."""
    if len(points) < 2:
        return 0.0
    if len(points) > SPACING_SAMPLE:
        rng = np.random.default_rng(seed)
        points = points[rng.choice(len(points), SPACING_SAMPLE, replace=False)]
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return SPACING_FACTOR * float(np.median(d[:, 1]))


def _cloud(batch: TrajectoryBatch, source: SetDescriptor, source_radius: float, horizon: float,
           budget: Budget, verdict: Verdict, notes: Sequence[str] = (), upto: Optional[float] = None) -> ReachCloud:
    keep = batch.times <= (horizon if upto is None else upto) + 1e-12
    states = batch.states[:, :, keep]
    times = np.broadcast_to(batch.times[keep], states.shape[:3]).reshape(-1)
    pts = states.reshape(-1, states.shape[-1])
    finite = np.all(np.isfinite(pts), axis=1)
    pts, times = pts[finite], times[finite]
    if len(pts):
        lower, upper = pts.min(axis=0), pts.max(axis=0)
    else:
        lower, upper = source.outer_box()
    rho = coverage_radius(pts, budget.seed)
    return ReachCloud(
        points=pts,
        point_times=times,
        lower=lower.tolist(),
        upper=upper.tolist(),
        horizon=float(horizon if upto is None else upto),
        source=source,
        source_radius=source_radius,
        inflation=rho,
        verdict=verdict,
        notes=[f"inflation ρ = {SPACING_FACTOR:g} × median nearest-neighbour spacing = {rho:.4g}"] + list(notes),
    )


def reach_set(system: DynamicalSystem, S: SetDescriptor, T: float, budget: Budget) -> ReachCloud:
    """
    Sampled ℛ^T(S): flows of states drawn from S under mixed signals on [0, T].

    A blow-up falsifies forward completeness at this horizon.
    """
    if not T >= 0:
        raise InputError(f"reach horizon must be nonnegative, got {T}")
    if S.dimension != system.dimension:
        raise InputError("source set dimension does not match the system")
    horizon = T if T > 0 else budget.step
    b = _budget_over(budget, horizon)
    rng = np.random.default_rng(b.seed)
    X0 = S.sample_inside(b.samples, rng)
    signals = sample_signals(system.disturbance_box, b.step, horizon, b.signals, SignalStrategy.MIXED, b.seed + 1)
    batch = simulate_batch(system, X0, signals, record_times(horizon, b.step), b.tol, jobs=b.jobs)
    if batch.any_blowup:
        verdict = Verdict.falsified(batch.blowup_witness(), b, "not forward complete: blow-up within the horizon")
    else:
        verdict = Verdict.supported(b)
    return _cloud(batch, S, 0.0, horizon, b, verdict, upto=T)


def a_eps(system: DynamicalSystem, A: SetDescriptor, eps: float, budget: Budget,
          cap: Optional[float] = None) -> ReachCloud:
    """
    Sampled A_ε = ℛ(B_ε(A)).

    Trajectories from B_ε(A) are flowed up to ``cap`` (the budget horizon by
    default); the cloud horizon is twice the largest return time into
    B_ε(A). If some trajectory is still outside at the cap the cloud is
    reported over the cap with an Inconclusive verdict.
    """
    if not eps > 0:
        raise InputError(f"ε must be positive, got {eps}")
    cap = budget.horizon if cap is None else float(cap)
    b = _budget_over(budget, cap)
    batch = simulate_from(system, A, eps, b)
    if batch.any_blowup:
        verdict = Verdict.falsified(batch.blowup_witness(), b, "blow-up from B_ε(A)")
        return _cloud(batch, A, eps, cap, b, verdict)
    dist = distances(batch, A)
    exit_t, _ = last_exit_times(dist, batch.times, eps)
    if np.any(np.isinf(exit_t)):
        i, s = np.unravel_index(int(np.argmax(exit_t)), exit_t.shape)
        verdict = Verdict.inconclusive(f"no return to B_ε(A) within horizon cap {cap:g}", b)
        return _cloud(batch, A, eps, cap, b, verdict, notes=[f"state {batch.initial_states[i].tolist()} not returned"])
    tau = float(np.max(exit_t))
    horizon = min(max(2.0 * tau, 1.0), cap)
    verdict = Verdict.supported(b, f"horizon 2·τ(ε,ε) = {horizon:.4g} (τ = {tau:.4g})")
    return _cloud(batch, A, eps, cap, b, verdict, notes=[f"return time τ(ε,ε) = {tau:.4g}"], upto=horizon)


class ProlongationContinuity(BaseModel):
    """sup over A_ε of the distance to P₊(A), per ε of the schedule."""
    eps: List[float]
    gaps: List[float]
    nonincreasing: bool
    final_gap: float


def check_prolongation_continuity(clouds: Sequence[ReachCloud], p_plus_cloud: ReachCloud) -> ProlongationContinuity:
    """How far each A_ε reaches beyond P₊(A); the gaps should shrink with ε."""
    ordered = sorted(clouds, key=lambda c: -c.source_radius)
    gaps = []
    if len(p_plus_cloud.points) == 0:
        gaps = [math.inf for _ in ordered]
    else:
        tree = cKDTree(p_plus_cloud.points)
        for c in ordered:
            if len(c.points) == 0:
                gaps.append(0.0)
                continue
            d, _ = tree.query(c.points, k=1)
            gaps.append(max(float(np.max(d)) - p_plus_cloud.inflation, 0.0))
    slack = max((c.inflation for c in ordered), default=0.0)
    nonincreasing = all(b <= a + slack for a, b in zip(gaps, gaps[1:]))
    return ProlongationContinuity(eps=[c.source_radius for c in ordered], gaps=gaps,
                                  nonincreasing=nonincreasing, final_gap=gaps[-1] if gaps else math.inf)


def _grid_intersection(clouds: Sequence[ReachCloud], n: int):
    lows = np.array([c.outer_box()[0] for c in clouds])
    highs = np.array([c.outer_box()[1] for c in clouds])
    lo, hi = lows.min(axis=0), highs.max(axis=0)
    cell = max(float(np.max(hi - lo)) / CELLS_PER_AXIS, 1e-9)
    shape = tuple(int(v) for v in np.maximum(np.ceil((hi - lo) / cell), 1).astype(int))
    structure = np.ones((3,) * n, dtype=bool)
    survive = np.ones(shape, dtype=bool)
    for c in clouds:
        occupied = np.zeros(shape, dtype=bool)
        if len(c.points):
            idx = np.floor((c.points - lo) / cell).astype(int)
            idx = np.clip(idx, 0, np.asarray(shape) - 1)
            occupied[tuple(idx.T)] = True
        steps = int(math.ceil(c.inflation / cell))
        if steps > 0:
            occupied = binary_dilation(occupied, structure=structure, iterations=steps)
        survive &= occupied
    cells = np.argwhere(survive)
    centers = lo + (cells + 0.5) * cell
    return centers, cell


def _cloud_intersection(clouds: Sequence[ReachCloud]) -> np.ndarray:
    base = clouds[-1].points
    keep = np.ones(len(base), dtype=bool)
    for c in clouds[:-1]:
        if len(c.points) == 0:
            return base[:0]
        d, _ = cKDTree(c.points).query(base, k=1)
        keep &= d <= c.inflation
    return base[keep]


def p_plus(system: DynamicalSystem, A: SetDescriptor, schedule: Sequence[float], budget: Budget) -> ReachCloud:
    """
    Finite-schedule estimate of P₊(A) = ⋂_ε A_ε.

    For n ≤ 3 the A_ε clouds are rasterized on a 64ⁿ grid over their union
    box, dilated by their inflation and intersected; the surviving cell
    centres form the result. Larger dimensions keep the points of the
    smallest-ε cloud that lie within every other cloud's inflation.
    """
    eps_list = [float(e) for e in schedule]
    if len(eps_list) < 3:
        raise InputError("the ε schedule needs at least three entries")
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise InputError("the ε schedule must be positive and strictly decreasing")
    clouds = [a_eps(system, A, e, budget.reseeded(k)) for k, e in enumerate(eps_list)]
    for c in clouds:
        if c.verdict.is_falsified:
            return c
    n = system.dimension
    notes = [f"smallest ε reached: {eps_list[-1]:g}"]
    if n <= GRID_MODE_MAX_DIM:
        points, cell = _grid_intersection(clouds, n)
        inflation = 0.5 * cell * math.sqrt(n)
        notes.append(f"grid mode with cell width {cell:.4g}")
    else:
        points, cell = _cloud_intersection(clouds), None
        inflation = max(c.inflation for c in clouds)
        notes.append("cloud mode (dimension above 3)")
    inconclusive = [c for c in clouds if c.verdict.status == VerdictStatus.INCONCLUSIVE]
    if len(points) == 0:
        verdict = Verdict.inconclusive("empty intersection at the grid resolution", budget)
        lower, upper = A.outer_box()
    else:
        lower, upper = points.min(axis=0), points.max(axis=0)
        if inconclusive:
            verdict = Verdict.inconclusive(inconclusive[0].verdict.note, budget)
        else:
            verdict = Verdict.supported(budget, f"intersection over {len(eps_list)} prolongations")
    cloud = ReachCloud(
        points=np.asarray(points).reshape(-1, n),
        point_times=np.zeros(len(points)),
        lower=np.asarray(lower).tolist(),
        upper=np.asarray(upper).tolist(),
        horizon=max(c.horizon for c in clouds),
        source=A,
        source_radius=eps_list[-1],
        inflation=inflation,
        verdict=verdict,
        cell_size=cell,
        notes=notes,
    )
    continuity = check_prolongation_continuity(clouds, cloud)
    gaps = ", ".join(f"{e:g}: {g:.4g}" for e, g in zip(continuity.eps, continuity.gaps))
    return cloud.model_copy(update={"notes": notes + [f"sup distance of A_ε to P₊ by ε: {gaps}"]})


def estimate_rfc(system: DynamicalSystem, r_grid: Sequence[float], t_grid: Sequence[float], budget: Budget,
                 A: Optional[SetDescriptor] = None) -> RfcEnvelope:
    """
    μ(r, t) ≥ sup ‖φ(s, x, d)‖_A over ‖x‖_A ≤ r, s ≤ t and sampled d.

    Without ``A`` norms are taken from the origin. Samples for r = 0 are
    drawn inside A. The table is projected up to be monotone in both
    arguments; any blow-up falsifies forward completeness.
    """
    r = np.asarray(r_grid, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if r.size == 0 or t.size == 0:
        raise InputError("RFC grids must be nonempty")
    if np.any(np.diff(r) <= 0) or np.any(np.diff(t) <= 0) or r[0] < 0 or t[0] < 0:
        raise InputError("RFC grids must be nonnegative and strictly increasing")
    A = origin(system.dimension) if A is None else A
    horizon = float(t[-1]) if t[-1] > 0 else budget.step
    b = _budget_over(budget, horizon)
    mu = np.zeros((r.size, t.size))
    witness: Optional[Witness] = None
    for k, radius in enumerate(r):
        batch = simulate_from(system, A, float(radius), b, offset=k, extra_times=t)
        dist = distances(batch, A)
        peak = running_max(dist).reshape(-1, len(batch.times)).max(axis=0)
        cols = np.clip(np.searchsorted(batch.times, t - 1e-12), 0, len(batch.times) - 1)
        mu[k] = peak[cols]
        if batch.any_blowup and witness is None:
            witness = batch.blowup_witness()
    grid = MonotoneGrid(rows=r.tolist(), cols=t.tolist(), values=mu.tolist())
    if witness is not None:
        verdict = Verdict.falsified(witness, b, f"blow-up at t = {witness.time:.4g}")
    else:
        verdict = Verdict.supported(b)
    return RfcEnvelope(mu=grid, verdict=verdict, target=A)


class InvarianceProbe(BaseModel):
    """Share of forward-flowed cloud points that stay in the inflated cloud box."""
    fraction: float
    probes: int
    failures: int
    witness: Optional[Witness] = Field(default=None, description="First escaping (state, signal, time)")


def probe_invariance(cloud: ReachCloud, system: DynamicalSystem, budget: Budget, probes: int = PROBES) -> InvarianceProbe:
    """Flow random cloud points forward under random signals and random times up to the cloud horizon."""
    if len(cloud.points) == 0:
        return InvarianceProbe(fraction=0.0, probes=0, failures=0)
    horizon = max(cloud.horizon, budget.step)
    b = _budget_over(budget, horizon)
    rng = np.random.default_rng(b.seed + 17)
    X0 = cloud.points[rng.choice(len(cloud.points), probes, replace=True)]
    signals = sample_signals(system.disturbance_box, b.step, horizon, probes, SignalStrategy.UNIFORM, b.seed + 19)
    times = record_times(horizon, b.step)
    states, _ = simulate_pairs(system, X0, signals, times, b.tol, jobs=b.jobs)
    pick = rng.integers(0, len(times), size=probes)
    landed = states[np.arange(probes), pick]
    inside = cloud.contains(landed) & np.all(np.isfinite(landed), axis=1)
    witness = None
    if not np.all(inside):
        p = int(np.argmin(inside))
        witness = signals[p].to_witness(X0[p], float(times[pick[p]]))
    return InvarianceProbe(fraction=float(inside.mean()), probes=probes, failures=int((~inside).sum()),
                           witness=witness)


def worst_excursion_witness(batch: TrajectoryBatch, A: SetDescriptor) -> Witness:
    """Witness at the largest sampled distance from A."""
    dist = distances(batch, A)
    i, s, k = worst_trajectory(dist)
    return batch.witness(i, s, k, float(dist[i, s, k]))


class ReachAnalyzer(BaseAnalyzer):
    """
    Analyzer that estimates reachable sets, prolongations and RFC envelopes.
    """

    def __init__(self, **kwargs):
        super().__init__(
            name="Reach Analyzer",
            description="Estimates reachability clouds, A_ε, P₊(A) and the RFC envelope μ",
            **kwargs
        )
        self.operations = {
            "reach_set": reach_set,
            "a_eps": a_eps,
            "p_plus": p_plus,
            "estimate_rfc": estimate_rfc,
            "probe_invariance": probe_invariance,
            "prolongation_continuity": check_prolongation_continuity,
        }
