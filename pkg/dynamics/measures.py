"""
Measurements on simulated trajectories: distances to a target set, first
entry and last exit times, the doubling divergence test, and crossing-time
refinement by re-simulating a bracket on a finer grid.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from core.sets import SetDescriptor, ball_around_set, distance_to_set
from core.verdict import Budget, Witness
from .integrator import TrajectoryBatch, simulate_batch, simulate_pairs
from .signals import DisturbanceSignal, SignalStrategy, sample_signals, segment_count
from .systems import DynamicalSystem

RECORDS_PER_SEGMENT = 4
REFINE_POINTS = 33
REFINE_LEVELS = 3
REFINE_CANDIDATES = 8
SIGNAL_SEED_OFFSET = 7919


def record_times(horizon: float, step: float, extra: Sequence[float] = ()) -> np.ndarray:
    """Uniform grid of spacing step/4 on [0, horizon], merged with ``extra`` times."""
    count = RECORDS_PER_SEGMENT * segment_count(horizon, step)
    grid = np.linspace(0.0, horizon, count + 1)
    if len(extra):
        grid = np.union1d(grid, np.clip(np.asarray(extra, dtype=float), 0.0, horizon))
    return grid


def sample_region(A: SetDescriptor, r: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """States with ‖x‖_A < r, or states of A itself when r = 0."""
    if r <= 0:
        return A.sample_inside(count, rng)
    return ball_around_set(A, r).sample(count, rng)


def simulate_from(
    system: DynamicalSystem,
    A: SetDescriptor,
    r: float,
    budget: Budget,
    horizon: Optional[float] = None,
    offset: int = 0,
    extra_times: Sequence[float] = (),
    samples: Optional[int] = None,
    progress: Optional[bool] = None,
) -> TrajectoryBatch:
    """Cross product of B_r(A) samples and mixed disturbance signals."""
    horizon = budget.horizon if horizon is None else horizon
    rng = np.random.default_rng(budget.seed + offset)
    X0 = sample_region(A, r, samples or budget.samples, rng)
    signals = sample_signals(system.disturbance_box, budget.step, horizon, budget.signals,
                             SignalStrategy.MIXED, budget.seed + offset + SIGNAL_SEED_OFFSET)
    times = record_times(horizon, budget.step, extra_times)
    return simulate_batch(system, X0, signals, times, budget.tol, jobs=budget.jobs, progress=progress)


def distances(batch: TrajectoryBatch, A: SetDescriptor) -> np.ndarray:
    """‖φ‖_A with shape (initial, signal, time); inf after a blow-up."""
    with np.errstate(invalid="ignore", over="ignore"):
        return np.asarray(distance_to_set(batch.states, A))


def first_index(mask: np.ndarray) -> np.ndarray:
    """Index of the first True along the last axis, -1 where there is none."""
    hit = mask.any(axis=-1)
    return np.where(hit, mask.argmax(axis=-1), -1)


def last_index(mask: np.ndarray) -> np.ndarray:
    """Index of the last True along the last axis, -1 where there is none."""
    T = mask.shape[-1]
    hit = mask.any(axis=-1)
    return np.where(hit, T - 1 - np.flip(mask, axis=-1).argmax(axis=-1), -1)


def first_entry_times(dist: np.ndarray, times: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Grid time of the first sample with dist ≤ eps (inf if none) and its index."""
    k = first_index(dist <= eps)
    t = np.where(k >= 0, times[np.maximum(k, 0)], np.inf)
    return t, k


def last_exit_times(dist: np.ndarray, times: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid time after which dist stays ≤ eps: 0 if never outside, inf if
    outside at the final time. Also returns the index of the last outside sample.
    """
    k = last_index(~(dist <= eps))
    T = len(times)
    t = np.where(k < 0, 0.0, times[np.minimum(k + 1, T - 1)])
    t = np.where(k == T - 1, np.inf, t)
    return t, k


def reexit_counts(dist: np.ndarray, eps: float) -> np.ndarray:
    """Number of inside-to-outside transitions along each trajectory."""
    inside = dist <= eps
    return np.sum(inside[..., :-1] & ~inside[..., 1:], axis=-1)


def _nearest_index(times: np.ndarray, t: float) -> int:
    return int(np.argmin(np.abs(times - t)))


def divergent(dist: np.ndarray, times: np.ndarray) -> np.ndarray:
    """
    Doubling test: the distance at least doubles from H/8 to H/4, H/4 to H/2
    and H/2 to H. Blown-up trajectories (inf) count as divergent.
    """
    H = times[-1]
    idx = [_nearest_index(times, H * f) for f in (0.125, 0.25, 0.5, 1.0)]
    d = [dist[..., k] for k in idx]
    with np.errstate(invalid="ignore"):
        grows = (d[0] > 0) & (d[1] >= 2 * d[0]) & (d[2] >= 2 * d[1]) & (d[3] >= 2 * d[2])
    return grows | np.isinf(d[3])


def refine_crossing(
    system: DynamicalSystem,
    state: np.ndarray,
    signal: DisturbanceSignal,
    t_lo: float,
    t_hi: float,
    A: SetDescriptor,
    eps: float,
    tol: float,
    mode: str = "enter",
    levels: int = REFINE_LEVELS,
    points: int = REFINE_POINTS,
) -> float:
    """
    Narrow the crossing of the level ‖x‖_A = eps inside [t_lo, t_hi].

    ``state`` is φ at t_lo. ``mode="enter"`` tracks the first time inside,
    ``mode="exit"`` the last time outside. The upper end of the final bracket
    is returned, so the result never undercuts the crossing on the sub-grid.
    """
    x = np.asarray(state, dtype=float).reshape(1, -1)
    lo, hi = float(t_lo), float(t_hi)
    for _ in range(levels):
        if hi - lo <= 1e-12:
            break
        sub = np.linspace(lo, hi, points)
        path, blow = simulate_pairs(system, x, [signal], sub, tol, t_start=lo)
        d = np.asarray(distance_to_set(path[0], A))
        if mode == "enter":
            hits = np.flatnonzero(d <= eps)
            if hits.size == 0:
                return hi
            j = int(hits[0])
            if j == 0:
                return lo
            lo, hi, x = sub[j - 1], sub[j], path[:, j - 1]
        else:
            outside = np.flatnonzero(~(d <= eps))
            if outside.size == 0:
                return lo
            j = int(outside[-1])
            if j == points - 1:
                return hi
            lo, hi, x = sub[j], sub[j + 1], path[:, j]
    return hi


def _crossing_estimate(dist_row: np.ndarray, times: np.ndarray, k: int, eps: float, before: int) -> float:
    """Linear interpolation of the crossing between samples ``before`` and ``before + 1``."""
    if before < 0 or before + 1 >= len(times):
        return float(times[max(k, 0)])
    a, b = dist_row[before], dist_row[before + 1]
    if not (np.isfinite(a) and np.isfinite(b)) or a == b:
        return float(times[before + 1])
    w = np.clip((a - eps) / (a - b), 0.0, 1.0)
    return float(times[before] + w * (times[before + 1] - times[before]))


def refined_extreme(
    system: DynamicalSystem,
    batch: TrajectoryBatch,
    dist: np.ndarray,
    A: SetDescriptor,
    eps: float,
    mode: str = "enter",
    candidates: int = REFINE_CANDIDATES,
) -> Tuple[float, Tuple[int, int]]:
    """
    Largest first-entry (``mode="enter"``) or last-exit (``mode="exit"``) time
    over a batch, refined on the most promising trajectories.

    Returns:
        (time, (initial index, signal index)); time is inf if some trajectory
        never enters (enter) or is outside at the end (exit)
    """
    times = batch.times
    if mode == "enter":
        grid_t, k = first_entry_times(dist, times, eps)
    else:
        grid_t, k = last_exit_times(dist, times, eps)
    if np.any(np.isinf(grid_t)):
        i, s = np.unravel_index(int(np.argmax(grid_t)), grid_t.shape)
        return float("inf"), (int(i), int(s))
    if np.all(grid_t == 0.0):
        return 0.0, (0, 0)

    flat_k = k.ravel()
    rows = dist.reshape(-1, dist.shape[-1])
    estimates = np.empty(len(flat_k))
    for p, kp in enumerate(flat_k):
        before = kp - 1 if mode == "enter" else kp
        estimates[p] = _crossing_estimate(rows[p], times, kp, eps, before) if kp >= 0 else 0.0
    order = np.argsort(-estimates, kind="stable")[:candidates]

    S = dist.shape[1]
    best, best_pair = -1.0, (0, 0)
    for p in order:
        kp = int(flat_k[p])
        i, s = divmod(int(p), S)
        if mode == "enter":
            if kp <= 0:
                value = 0.0
            else:
                value = refine_crossing(system, batch.states[i, s, kp - 1], batch.signals[s],
                                        times[kp - 1], times[kp], A, eps, batch.tol, "enter")
        else:
            if kp < 0:
                value = 0.0
            else:
                value = refine_crossing(system, batch.states[i, s, kp], batch.signals[s],
                                        times[kp], times[kp + 1], A, eps, batch.tol, "exit")
        if value > best:
            best, best_pair = value, (i, s)
    return float(best), best_pair


def trajectory_distances(
    system: DynamicalSystem,
    witness: Witness,
    A: SetDescriptor,
    horizon: float,
    tol: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Replay a witness on the standard record grid; returns (times, states, distances)."""
    signal = DisturbanceSignal.from_witness(witness)
    times = record_times(horizon, witness.grid_step)
    states, _ = simulate_pairs(system, np.asarray([witness.state]), [signal], times, tol)
    with np.errstate(invalid="ignore", over="ignore"):
        dist = np.asarray(distance_to_set(states[0], A))
    return times, states[0], dist


def entry_time_of(system: DynamicalSystem, witness: Witness, A: SetDescriptor, eps: float,
                  horizon: float, tol: float, mode: str = "enter") -> float:
    """Refined first-entry (or last-exit) time of a single replayed witness."""
    times, states, dist = trajectory_distances(system, witness, A, horizon, tol)
    signal = DisturbanceSignal.from_witness(witness)
    if mode == "enter":
        t, k = first_entry_times(dist[None, :], times, eps)
        k = int(k[0])
        if k < 0:
            return float("inf")
        if k == 0:
            return 0.0
        return refine_crossing(system, states[k - 1], signal, times[k - 1], times[k], A, eps, tol, "enter")
    t, k = last_exit_times(dist[None, :], times, eps)
    k = int(k[0])
    if not np.isfinite(t[0]):
        return float("inf")
    if k < 0:
        return 0.0
    return refine_crossing(system, states[k], signal, times[k], times[k + 1], A, eps, tol, "exit")


def worst_trajectory(dist: np.ndarray) -> Tuple[int, int, int]:
    """(initial, signal, time) index of the largest distance, inf first."""
    flat = np.where(np.isnan(dist), -np.inf, dist)
    i, s, k = np.unravel_index(int(np.argmax(flat)), flat.shape)
    return int(i), int(s), int(k)


def running_max(dist: np.ndarray) -> np.ndarray:
    """max over s ≤ t along the time axis."""
    return np.maximum.accumulate(np.where(np.isnan(dist), np.inf, dist), axis=-1)
