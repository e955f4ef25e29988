"""
Piecewise-constant disturbance signals on a uniform time grid.
"""

import math
from enum import Enum
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import InputError
from core.sets import SetDescriptor, SetKind
from core.verdict import Witness

GRID_MATCH = 1e-9


class SignalStrategy(str, Enum):
    UNIFORM = "uniform"
    EXTREME = "extreme"
    CONSTANT = "constant"
    MIXED = "mixed"


class DisturbanceSignal(BaseModel):
    """
    d(t) = values[k] on [kΔ, (k+1)Δ), and ``tail`` once the list runs out.
    """
    model_config = ConfigDict(frozen=True)

    grid_step: float = Field(gt=0)
    values: List[List[float]] = Field(default_factory=list)
    tail: List[float]

    @model_validator(mode="after")
    def _check_width(self) -> "DisturbanceSignal":
        if not self.tail:
            raise ValueError("tail value must be a nonempty vector")
        if any(len(v) != len(self.tail) for v in self.values):
            raise ValueError("all segment values must match the tail dimension")
        return self

    @property
    def dimension(self) -> int:
        return len(self.tail)

    def segment_array(self, count: int) -> np.ndarray:
        """First ``count`` segment values, padded with the tail."""
        out = np.empty((count, self.dimension))
        k = min(count, len(self.values))
        if k:
            out[:k] = np.asarray(self.values[:k], dtype=float)
        out[k:] = np.asarray(self.tail, dtype=float)
        return out

    def value_at(self, t: float) -> np.ndarray:
        k = int(math.floor(t / self.grid_step + GRID_MATCH))
        if 0 <= k < len(self.values):
            return np.asarray(self.values[k], dtype=float)
        return np.asarray(self.tail, dtype=float)

    def grid_index(self, t: float) -> int:
        """Index j with t = jΔ; anything off the grid is an input error."""
        j = int(round(t / self.grid_step))
        if j < 0 or abs(t - j * self.grid_step) > GRID_MATCH * max(1.0, abs(t)):
            raise InputError(f"time {t} is not a nonnegative multiple of the grid step {self.grid_step}")
        return j

    def shift(self, t: float) -> "DisturbanceSignal":
        """The signal s ↦ d(s + t)."""
        j = self.grid_index(t)
        return DisturbanceSignal(grid_step=self.grid_step, values=self.values[j:], tail=self.tail)

    def within(self, D: SetDescriptor) -> bool:
        lo, hi = D.outer_box()
        vals = self.segment_array(len(self.values) + 1)
        return bool(np.all(vals >= lo - 1e-12) and np.all(vals <= hi + 1e-12))

    def to_witness(self, state: Sequence[float], time: float, value: float = None,
                   start_time: float = 0.0) -> Witness:
        return Witness(
            state=[float(v) for v in state],
            grid_step=self.grid_step,
            segments=[list(v) for v in self.values],
            tail=list(self.tail),
            time=float(time),
            value=None if value is None else float(value),
            start_time=float(start_time),
        )

    @classmethod
    def constant(cls, value: Sequence[float], grid_step: float) -> "DisturbanceSignal":
        return cls(grid_step=grid_step, values=[], tail=[float(v) for v in np.atleast_1d(value)])

    @classmethod
    def from_witness(cls, witness: Witness) -> "DisturbanceSignal":
        return cls(grid_step=witness.grid_step, values=witness.segments, tail=witness.tail)


def concatenate(first: DisturbanceSignal, second: DisturbanceSignal, t: float) -> DisturbanceSignal:
    """Signal equal to ``first`` on [0, t) and to ``second`` shifted by t afterwards."""
    if first.grid_step != second.grid_step or first.dimension != second.dimension:
        raise InputError("concatenated signals must share grid step and dimension")
    k = first.grid_index(t)
    head = first.segment_array(k).tolist()
    return DisturbanceSignal(grid_step=first.grid_step, values=head + [list(v) for v in second.values],
                             tail=second.tail)


def segment_count(horizon: float, step: float) -> int:
    return max(1, int(math.ceil(horizon / step - GRID_MATCH)))


def sample_signals(
    D: SetDescriptor,
    step: float,
    horizon: float,
    count: int,
    strategy: SignalStrategy = SignalStrategy.UNIFORM,
    seed: int = 0,
) -> List[DisturbanceSignal]:
    """
    Draw ``count`` signals with values in the box ``D``.

    Args:
        D: Disturbance box
        step: Grid step Δ
        horizon: Signals carry explicit values up to this time
        count: Number of signals
        strategy: uniform, extreme (box vertices per segment), constant, or mixed
        seed: Seed for the random stream

    Returns:
        List of DisturbanceSignal, identical for identical arguments
    """
    if count < 1:
        raise InputError("signal count must be at least 1")
    if D.kind != SetKind.BOX:
        raise InputError("disturbance sets are boxes")
    strategy = SignalStrategy(strategy)
    rng = np.random.default_rng(seed)
    lo, hi = D.outer_box()
    m = len(lo)
    K = segment_count(horizon, step)

    if strategy == SignalStrategy.MIXED:
        return _mixed(lo, hi, step, K, count, rng)

    if strategy == SignalStrategy.CONSTANT:
        levels = rng.uniform(0.0, 1.0, size=(count, m)) * (hi - lo) + lo
        return [DisturbanceSignal.constant(v, step) for v in levels]

    if strategy == SignalStrategy.EXTREME:
        picks = rng.integers(0, 2, size=(count, K, m)).astype(bool)
        values = np.where(picks, hi, lo)
    else:
        values = rng.uniform(0.0, 1.0, size=(count, K, m)) * (hi - lo) + lo
    return [DisturbanceSignal(grid_step=step, values=v.tolist(), tail=v[-1].tolist()) for v in values]


def _mixed(lo, hi, step, K, count, rng) -> List[DisturbanceSignal]:
    m = len(lo)
    signals = []
    n_vertex = min(2 ** m, max(1, count // 4))
    for code in range(n_vertex):
        vertex = np.where([(code >> i) & 1 for i in range(m)], hi, lo)
        signals.append(DisturbanceSignal.constant(vertex, step))
    remaining = count - len(signals)
    n_extreme = (remaining + 2) // 3
    n_uniform = (remaining - n_extreme + 1) // 2
    n_constant = remaining - n_extreme - n_uniform
    if n_extreme:
        picks = rng.integers(0, 2, size=(n_extreme, K, m)).astype(bool)
        for v in np.where(picks, hi, lo):
            signals.append(DisturbanceSignal(grid_step=step, values=v.tolist(), tail=v[-1].tolist()))
    if n_uniform:
        for v in rng.uniform(0.0, 1.0, size=(n_uniform, K, m)) * (hi - lo) + lo:
            signals.append(DisturbanceSignal(grid_step=step, values=v.tolist(), tail=v[-1].tolist()))
    for v in rng.uniform(0.0, 1.0, size=(n_constant, m)) * (hi - lo) + lo:
        signals.append(DisturbanceSignal.constant(v, step))
    return signals[:count]
