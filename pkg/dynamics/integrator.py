"""
Batch flow evaluation.

ODE systems are integrated with the Dormand-Prince 5(4) pair, vectorized
over a batch of (initial state, signal) pairs. Each trajectory keeps its own
step size; integration restarts exactly at every switching time kΔ and every
record time. Linear systems are flowed with cached matrix exponentials.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from core.errors import BlowUp, InputError
from .signals import GRID_MATCH, DisturbanceSignal, segment_count
from .systems import DynamicalSystem

BLOWUP_GUARD = 1e12
CHUNK_SIZE = 256
MIN_STEP = 1e-12
MAX_GROWTH = 5.0
MIN_SHRINK = 0.2
SAFETY = 0.9
MAX_ITERATIONS = 200_000

logger = logging.getLogger("stability.integrator")


class DormandPrince54:
    """Dormand-Prince 5(4) pair, seven stages with the last one at the new state."""

    def __init__(self):
        self.s = 7
        self.eval_stages = [0.0, 1/5, 3/10, 4/5, 8/9, 1.0, 1.0]
        self.BT = {
            0: [1/5],
            1: [3/40, 9/40],
            2: [44/45, -56/15, 32/9],
            3: [19372/6561, -25360/2187, 64448/6561, -212/729],
            4: [9017/3168, -355/33, 46732/5247, 49/176, -5103/18656],
            5: [35/384, 0.0, 500/1113, 125/192, -2187/6784, 11/84],
        }
        # difference of the 5th and embedded 4th order weights
        self.TR = [71/57600, 0.0, -71/16695, 71/1920, -17253/339200, 22/525, -1/40]

    def step(self, system: DynamicalSystem, y: np.ndarray, d: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        One trial step per row.

        Returns:
            (new states, error estimates); rows whose stages overflow get an infinite error
        """
        hc = h[:, None]
        k = [system.evaluate(y, d)]
        if not np.all(np.isfinite(k[0])):
            raise InputError(f"non-finite right-hand side in system '{system.name}'")
        with np.errstate(all="ignore"):
            for i in range(self.s - 1):
                incr = sum(a * ki for a, ki in zip(self.BT[i], k) if a != 0.0)
                k.append(system.evaluate(y + hc * incr, d, check=False))
            y_new = y + hc * sum(b * ki for b, ki in zip(self.BT[5], k) if b != 0.0)
            err = hc * sum(e * ki for e, ki in zip(self.TR, k) if e != 0.0)
        err[~np.isfinite(y_new)] = np.inf
        return y_new, err


_SOLVER = DormandPrince54()


class _Stepper:
    """Advances one chunk of paired trajectories through a list of event times."""

    def __init__(self, system: DynamicalSystem, tol: float):
        self.system = system
        self.tol = tol
        self.forced_steps = 0

    def advance(self, X, Dv, a, b, h, alive, blowup_times):
        t = np.full(len(X), a)
        horizon_eps = 1e-13 * max(1.0, abs(b))
        for _ in range(MAX_ITERATIONS):
            idx = np.flatnonzero(alive & (t < b - horizon_eps))
            if idx.size == 0:
                return
            h_old = h[idx]
            hh = np.minimum(h_old, b - t[idx])
            y = X[idx]
            y_new, err = _SOLVER.step(self.system, y, Dv[idx], hh)
            scale = self.tol * (1.0 + np.maximum(np.abs(y), np.abs(np.nan_to_num(y_new, posinf=0.0, neginf=0.0))))
            with np.errstate(invalid="ignore"):
                ratio = np.max(np.abs(err) / scale, axis=1)
            ratio = np.where(np.isfinite(ratio), ratio, np.inf)
            forced = (ratio > 1.0) & (hh <= MIN_STEP * max(1.0, abs(b))) & np.all(np.isfinite(y_new), axis=1)
            self.forced_steps += int(forced.sum())
            accept = (ratio <= 1.0) | forced

            with np.errstate(divide="ignore"):
                factor = np.where(ratio > 0, SAFETY * ratio ** -0.2, MAX_GROWTH)
            factor = np.clip(np.nan_to_num(factor, nan=MIN_SHRINK, posinf=MAX_GROWTH), MIN_SHRINK, MAX_GROWTH)
            h_next = hh * factor
            truncated = accept & (hh < h_old)
            h_next[truncated] = np.maximum(h_next[truncated], h_old[truncated])
            h[idx] = h_next

            done = idx[accept]
            if done.size:
                X[done] = self.system.clamp(y_new[accept])
                t_done = t[done] + hh[accept]
                t[done] = np.where(b - t_done <= horizon_eps, b, t_done)
                blown = np.linalg.norm(X[done], axis=1) > BLOWUP_GUARD
                if np.any(blown):
                    rows = done[blown]
                    blowup_times[rows] = t[rows]
                    alive[rows] = False
        else:
            stuck = np.flatnonzero(alive & (t < b - horizon_eps))
            logger.warning("step budget exhausted on [%g, %g]; %d trajectories stopped", a, b, stuck.size)
            blowup_times[stuck] = t[stuck]
            alive[stuck] = False


def _event_grid(t_start: float, record_times: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Merged switching and record times, plus the event index of every record time."""
    t_end = float(record_times[-1])
    k0 = int(math.floor(t_start / step + GRID_MATCH)) + 1
    k1 = int(math.floor(t_end / step - GRID_MATCH))
    switches = step * np.arange(k0, k1 + 1) if k1 >= k0 else np.zeros(0)
    raw = np.union1d(np.union1d(record_times, switches), [t_start])
    raw = raw[raw >= t_start]
    merged = [raw[0]]
    for e in raw[1:]:
        if e - merged[-1] > 1e-12 * max(1.0, abs(e)):
            merged.append(e)
    events = np.asarray(merged)
    pos = np.clip(np.searchsorted(events, record_times), 1, len(events) - 1)
    left = events[pos - 1]
    right = events[pos]
    nearest = np.where(np.abs(record_times - left) <= np.abs(record_times - right), pos - 1, pos)
    if len(events) == 1:
        nearest = np.zeros(len(record_times), dtype=int)
    return events, nearest


def integrate_paired(
    system: DynamicalSystem,
    initial_states: np.ndarray,
    segment_values: np.ndarray,
    step: float,
    record_times: Sequence[float],
    tol: float,
    t_start: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Flow paired trajectories and sample them at ``record_times``.

    Args:
        system: ODE or linear system
        initial_states: (P, n) states at ``t_start``
        segment_values: (P, K, m) disturbance value on each grid segment [kΔ, (k+1)Δ)
        step: Grid step Δ
        record_times: Sorted times ≥ t_start
        tol: Per-step error tolerance
        t_start: Absolute time of the initial states

    Returns:
        (states (P, T, n), blow-up times (P,), inf where no blow-up); rows are inf after a blow-up
    """
    if not (1e-12 <= tol <= 1e-3):
        raise InputError(f"integrator tolerance must lie in [1e-12, 1e-3], got {tol}")
    X = np.array(initial_states, dtype=float, copy=True)
    if X.ndim != 2 or X.shape[1] != system.dimension:
        raise InputError(f"initial states must have shape (P, {system.dimension}), got {X.shape}")
    times = np.asarray(record_times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) < 0) or times[0] < t_start - 1e-12:
        raise InputError("record times must be sorted and not precede the start time")
    if not np.all(np.isfinite(times)):
        raise InputError("record times must be finite")
    P, n = X.shape
    states = np.empty((P, times.size, n))
    blowup_times = np.full(P, np.inf)

    if system.is_linear:
        _flow_linear(system, X, times, t_start, states, blowup_times)
        return states, blowup_times

    events, record_at = _event_grid(t_start, times, step)
    K = segment_values.shape[1]
    alive = np.linalg.norm(X, axis=1) <= BLOWUP_GUARD
    blowup_times[~alive] = t_start
    h = np.full(P, min(1e-2, max(events[-1] - t_start, MIN_STEP)))
    stepper = _Stepper(system, tol)
    pending = 0
    for e in range(len(events)):
        while pending < times.size and record_at[pending] == e:
            states[:, pending] = np.where(alive[:, None], X, np.inf)
            pending += 1
        if e == len(events) - 1:
            break
        a, b = events[e], events[e + 1]
        seg = min(int(math.floor(a / step + GRID_MATCH)), K - 1)
        stepper.advance(X, segment_values[:, seg], a, b, h, alive, blowup_times)
    return states, blowup_times


def _flow_linear(system, X, times, t_start, states, blowup_times):
    current = X
    prev = t_start
    alive = np.ones(len(X), dtype=bool)
    for r, t in enumerate(times):
        dt = t - prev
        if dt > 0:
            current = current @ system.propagator(dt).T
        prev = t
        with np.errstate(invalid="ignore", over="ignore"):
            norms = np.linalg.norm(current, axis=1)
        crossed = alive & ~(norms <= BLOWUP_GUARD)
        blowup_times[crossed] = t
        alive &= ~crossed
        states[:, r] = np.where(alive[:, None], current, np.inf)


def _signal_stack(signals: Sequence[DisturbanceSignal], t_end: float) -> Tuple[np.ndarray, float]:
    steps = {s.grid_step for s in signals}
    if len(steps) != 1:
        raise InputError("signals in one batch must share a grid step")
    step = steps.pop()
    K = segment_count(t_end, step) + 1
    return np.stack([s.segment_array(K) for s in signals]), step


def _check_signals(system: DynamicalSystem, signals: Sequence[DisturbanceSignal]) -> None:
    for s in signals:
        if s.dimension != system.disturbance_dimension:
            raise InputError(
                f"signal dimension {s.dimension} does not match disturbance dimension {system.disturbance_dimension}")
        if not s.within(system.disturbance_box):
            raise InputError("signal values leave the disturbance box")


def simulate_pairs(
    system: DynamicalSystem,
    initial_states: np.ndarray,
    signals: Sequence[DisturbanceSignal],
    record_times: Sequence[float],
    tol: float,
    t_start: float = 0.0,
    jobs: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Flow initial_states[i] under signals[i]; chunks of fixed size, optionally threaded."""
    X0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    if len(X0) != len(signals):
        raise InputError("paired simulation needs one signal per initial state")
    _check_signals(system, signals)
    times = np.asarray(record_times, dtype=float)
    stack, step = _signal_stack(signals, float(times[-1]))
    chunks = [slice(i, min(i + CHUNK_SIZE, len(X0))) for i in range(0, len(X0), CHUNK_SIZE)]

    def run(sl: slice):
        return integrate_paired(system, X0[sl], stack[sl], step, times, tol, t_start)

    results = _map(run, chunks, jobs)
    states = np.concatenate([r[0] for r in results], axis=0)
    blowups = np.concatenate([r[1] for r in results], axis=0)
    return states, blowups


def _map(fn, items: List, jobs: int, progress: bool = False):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(tqdm(pool.map(fn, items), total=len(items), disable=not progress, desc="flows"))
    return [fn(item) for item in tqdm(items, disable=not progress, desc="flows")]


class TrajectoryBatch(BaseModel):
    """
    Flows of every (initial state, signal) pair on a shared time grid.

    ``states[i, s, k]`` is φ(times[k], initial_states[i], signals[s]).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    initial_states: np.ndarray
    signals: List[DisturbanceSignal]
    times: np.ndarray
    states: np.ndarray
    blowup_times: np.ndarray
    tol: float

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.states.shape[:3]

    @property
    def any_blowup(self) -> bool:
        return bool(np.any(np.isfinite(self.blowup_times)))

    def flat_states(self) -> np.ndarray:
        return self.states.reshape(-1, self.states.shape[-1])

    def finite_points(self) -> np.ndarray:
        pts = self.flat_states()
        return pts[np.all(np.isfinite(pts), axis=1)]

    def witness(self, i: int, s: int, k: int, value: Optional[float] = None):
        return self.signals[s].to_witness(self.initial_states[i], float(self.times[k]), value)

    def blowup_witness(self):
        i, s = np.unravel_index(int(np.argmin(self.blowup_times)), self.blowup_times.shape)
        t_star = float(self.blowup_times[i, s])
        return self.signals[s].to_witness(self.initial_states[i], t_star, np.inf)


def simulate_batch(
    system: DynamicalSystem,
    initial_states: np.ndarray,
    signals: Sequence[DisturbanceSignal],
    times: Sequence[float],
    tol: float,
    jobs: int = 1,
    progress: Optional[bool] = None,
) -> TrajectoryBatch:
    """
    Cross product of initial states and signals, flowed on ``times``.

    Pairs are cut into fixed-size chunks so the result does not depend on ``jobs``.
    A progress bar is shown when ``progress`` is set, or by default at DEBUG level.
    """
    if progress is None:
        progress = logger.isEnabledFor(logging.DEBUG)
    X0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] != 0.0:
        raise InputError("batch time grids start at 0")
    _check_signals(system, signals)
    I, S = len(X0), len(signals)
    stack, step = _signal_stack(signals, float(times[-1]))
    pair_i = np.repeat(np.arange(I), S)
    pair_s = np.tile(np.arange(S), I)
    chunks = [slice(p, min(p + CHUNK_SIZE, I * S)) for p in range(0, I * S, CHUNK_SIZE)]

    def run(sl: slice):
        return integrate_paired(system, X0[pair_i[sl]], stack[pair_s[sl]], step, times, tol)

    results = _map(run, chunks, jobs, progress)
    states = np.concatenate([r[0] for r in results], axis=0).reshape(I, S, times.size, system.dimension)
    blowups = np.concatenate([r[1] for r in results], axis=0).reshape(I, S)
    return TrajectoryBatch(initial_states=X0, signals=list(signals), times=times, states=states,
                           blowup_times=blowups, tol=tol)


def flow(system: DynamicalSystem, t: float, x, d: DisturbanceSignal, tol: float = 1e-9) -> np.ndarray:
    """
    φ(t, x, d) for a single trajectory.

    Raises:
        BlowUp: the state norm crossed the overflow guard before ``t``
        InputError: bad tolerance, dimension or non-finite right-hand side
    """
    if not (t >= 0 and math.isfinite(t)):
        raise InputError(f"flow time must be finite and nonnegative, got {t}")
    x0 = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    states, blowups = simulate_pairs(system, x0, [d], [float(t)], tol)
    if np.isfinite(blowups[0]):
        raise BlowUp(blowups[0], index=0)
    return states[0, 0]


def replay(system: DynamicalSystem, witness, times: Sequence[float], tol: float) -> np.ndarray:
    """Re-simulate a witness on ``times`` (absolute, starting at the witness start time)."""
    signal = DisturbanceSignal.from_witness(witness)
    states, _ = simulate_pairs(system, np.asarray([witness.state]), [signal], times, tol,
                               t_start=witness.start_time)
    return states[0]
