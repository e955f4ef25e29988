"""
Tabulated comparison functions.

Tables are sampled on breakpoints and projected onto their declared
monotonicity at construction, so every consumer sees a monotone function.
"""

from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InputError

SLOPE_FLOOR = 1e-9


class Direction(str, Enum):
    NONDECREASING = "nondecreasing"
    NONINCREASING = "nonincreasing"


class Extrapolation(str, Enum):
    CLAMP = "clamp"
    LINEAR = "linear"


def upper_projection(values: np.ndarray, direction: Direction, axis: int = -1) -> np.ndarray:
    """Least monotone sequence (along ``axis``) dominating ``values``."""
    if direction == Direction.NONDECREASING:
        return np.maximum.accumulate(values, axis=axis)
    flipped = np.flip(values, axis=axis)
    return np.flip(np.maximum.accumulate(flipped, axis=axis), axis=axis)


def lower_projection(values: np.ndarray, direction: Direction, axis: int = -1) -> np.ndarray:
    """Largest monotone sequence (along ``axis``) below ``values``."""
    if direction == Direction.NONINCREASING:
        return np.minimum.accumulate(values, axis=axis)
    flipped = np.flip(values, axis=axis)
    return np.flip(np.minimum.accumulate(flipped, axis=axis), axis=axis)


def _upper_index(grid: np.ndarray, args: np.ndarray, direction: Direction) -> np.ndarray:
    """Grid index whose value bounds the table from above at ``args``."""
    if direction == Direction.NONDECREASING:
        idx = np.searchsorted(grid, args, side="left")
    else:
        idx = np.searchsorted(grid, args, side="right") - 1
    return np.clip(idx, 0, len(grid) - 1)


class MonotoneTable(BaseModel):
    """A monotone, piecewise-linear function of one nonnegative argument."""
    model_config = ConfigDict(frozen=True)

    breakpoints: List[float] = Field(description="Strictly increasing nonnegative arguments")
    values: List[float] = Field(description="Nonnegative values at the breakpoints")
    direction: Direction = Direction.NONDECREASING
    extrapolation: Extrapolation = Extrapolation.CLAMP
    label: Optional[str] = Field(default=None, description="Provenance tag, e.g. 'fitted'")

    @model_validator(mode="before")
    @classmethod
    def _project(cls, data):
        if not isinstance(data, dict):
            return data
        bp = np.asarray(data.get("breakpoints", []), dtype=float)
        vals = np.asarray(data.get("values", []), dtype=float)
        if bp.ndim != 1 or bp.size == 0 or bp.shape != vals.shape:
            raise InputError("breakpoints and values must be nonempty lists of equal length")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(vals))):
            raise InputError("table entries must be finite")
        if np.any(bp < 0) or np.any(np.diff(bp) <= 0):
            raise InputError("breakpoints must be nonnegative and strictly increasing")
        if np.any(vals < 0):
            raise InputError("table values must be nonnegative")
        direction = Direction(data.get("direction", Direction.NONDECREASING))
        data = dict(data)
        data["breakpoints"] = bp.tolist()
        data["values"] = upper_projection(vals, direction).tolist()
        return data

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.breakpoints), np.asarray(self.values)

    def __call__(self, arg):
        bp, vals = self.arrays()
        x = np.asarray(arg, dtype=float)
        out = np.interp(x, bp, vals)
        if self.extrapolation == Extrapolation.LINEAR and bp.size > 1:
            sign = 1.0 if self.direction == Direction.NONDECREASING else -1.0
            head = sign * max(sign * (vals[1] - vals[0]) / (bp[1] - bp[0]), 0.0)
            tail = sign * max(sign * (vals[-1] - vals[-2]) / (bp[-1] - bp[-2]), 0.0)
            out = np.where(x > bp[-1], vals[-1] + tail * (x - bp[-1]), out)
            out = np.where(x < bp[0], vals[0] + head * (x - bp[0]), out)
            out = np.maximum(out, 0.0)
        if out.ndim == 0:
            return float(out)
        return out

    def as_class_kinf(self) -> "MonotoneTable":
        """Strictly increasing copy with a slope floor and linear extrapolation."""
        if self.direction != Direction.NONDECREASING:
            raise InputError("only nondecreasing tables can be lifted to class K-infinity")
        bp, vals = self.arrays()
        return MonotoneTable(
            breakpoints=bp.tolist(),
            values=(vals + SLOPE_FLOOR * bp).tolist(),
            direction=Direction.NONDECREASING,
            extrapolation=Extrapolation.LINEAR,
            label=self.label,
        )

    @classmethod
    def from_callable(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        breakpoints: Sequence[float],
        direction: Direction = Direction.NONDECREASING,
        extrapolation: Extrapolation = Extrapolation.LINEAR,
        label: Optional[str] = None,
    ) -> "MonotoneTable":
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.broadcast_to(np.asarray(fn(bp), dtype=float), bp.shape)
        return cls(breakpoints=bp.tolist(), values=vals.tolist(), direction=direction,
                   extrapolation=extrapolation, label=label)


def fit_monotone_envelope(
    samples: Sequence[Tuple[float, float]],
    direction: Direction = Direction.NONDECREASING,
    extrapolation: Extrapolation = Extrapolation.CLAMP,
    label: Optional[str] = None,
) -> MonotoneTable:
    """
    Least monotone table dominating every sample.

    Breakpoints are the distinct sample arguments; the value at each is the
    largest sample there, then pushed up to the declared direction.

    Args:
        samples: (argument, value) pairs
        direction: Declared monotonicity
        extrapolation: Behaviour outside the sampled range
        label: Provenance tag for the table

    Returns:
        MonotoneTable dominating all samples
    """
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise InputError("cannot fit an envelope to an empty sample set")
    arr = arr.reshape(-1, 2)
    if len(arr) < 2:
        raise InputError("at least two samples are needed to fit an envelope")
    if not np.all(np.isfinite(arr[:, 0])):
        raise InputError("sample arguments must be finite")
    args, inverse = np.unique(arr[:, 0], return_inverse=True)
    peaks = np.full(args.shape, -np.inf)
    np.maximum.at(peaks, inverse, arr[:, 1])
    peaks = np.maximum(peaks, 0.0)
    return MonotoneTable(breakpoints=args.tolist(), values=peaks.tolist(), direction=direction,
                         extrapolation=extrapolation, label=label)


class MonotoneGrid(BaseModel):
    """A function of two arguments, monotone along each axis."""
    model_config = ConfigDict(frozen=True)

    rows: List[float] = Field(description="First-argument breakpoints")
    cols: List[float] = Field(description="Second-argument breakpoints")
    values: List[List[float]]
    row_direction: Direction = Direction.NONDECREASING
    col_direction: Direction = Direction.NONDECREASING

    @model_validator(mode="before")
    @classmethod
    def _project(cls, data):
        if not isinstance(data, dict):
            return data
        rows = np.asarray(data.get("rows", []), dtype=float)
        cols = np.asarray(data.get("cols", []), dtype=float)
        vals = np.asarray(data.get("values", []), dtype=float)
        if rows.size == 0 or cols.size == 0 or vals.shape != (rows.size, cols.size):
            raise InputError("grid values must have shape (len(rows), len(cols))")
        if np.any(np.diff(rows) <= 0) or np.any(np.diff(cols) <= 0):
            raise InputError("grid breakpoints must be strictly increasing")
        if np.any(np.isnan(vals)):
            raise InputError("grid values must not be NaN")
        vals = upper_projection(vals, Direction(data.get("row_direction", Direction.NONDECREASING)), axis=0)
        vals = upper_projection(vals, Direction(data.get("col_direction", Direction.NONDECREASING)), axis=1)
        data = dict(data)
        data.update(rows=rows.tolist(), cols=cols.tolist(), values=vals.tolist())
        return data

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def upper(self, row_arg, col_arg):
        """Conservative lookup: the grid entry that bounds the function from above."""
        rows, cols = np.asarray(self.rows), np.asarray(self.cols)
        i = _upper_index(rows, np.asarray(row_arg, dtype=float), self.row_direction)
        j = _upper_index(cols, np.asarray(col_arg, dtype=float), self.col_direction)
        out = self.array()[i, j]
        return float(out) if np.ndim(out) == 0 else out

    def interpolate(self, row_arg, col_arg):
        """Bilinear interpolation, clamped at the grid edges."""
        rows, cols = np.asarray(self.rows), np.asarray(self.cols)
        vals = self.array()
        r = np.clip(np.asarray(row_arg, dtype=float), rows[0], rows[-1])
        c = np.clip(np.asarray(col_arg, dtype=float), cols[0], cols[-1])
        i = np.clip(np.searchsorted(rows, r, side="right") - 1, 0, max(len(rows) - 2, 0))
        j = np.clip(np.searchsorted(cols, c, side="right") - 1, 0, max(len(cols) - 2, 0))
        i1 = np.minimum(i + 1, len(rows) - 1)
        j1 = np.minimum(j + 1, len(cols) - 1)
        wr = np.where(i1 > i, (r - rows[i]) / np.where(i1 > i, rows[i1] - rows[i], 1.0), 0.0)
        wc = np.where(j1 > j, (c - cols[j]) / np.where(j1 > j, cols[j1] - cols[j], 1.0), 0.0)
        out = ((1 - wr) * (1 - wc) * vals[i, j] + wr * (1 - wc) * vals[i1, j]
               + (1 - wr) * wc * vals[i, j1] + wr * wc * vals[i1, j1])
        return float(out) if np.ndim(out) == 0 else out


class EnvelopeKnots(BaseModel):
    """Construction knots (τ_n, ε_{n-1}) of one row of a KL envelope."""
    model_config = ConfigDict(frozen=True)

    radius: float
    times: List[float]
    levels: List[float]


class KLEnvelope(BaseModel):
    """
    Tabulated estimate ‖φ(t,x,d)‖_A ≤ beta(‖x‖_A, t) + offset_c.

    Rows are radii, columns are times. Evaluation steps up to the next
    radius row and interpolates linearly in time, holding the last column.
    """
    model_config = ConfigDict(frozen=True)

    r_grid: List[float]
    t_grid: List[float]
    beta: List[List[float]]
    offset_c: float = Field(ge=0)
    knots: List[EnvelopeKnots] = Field(default_factory=list)

    @model_validator(mode="before")
    @classmethod
    def _project(cls, data):
        if not isinstance(data, dict):
            return data
        r = np.asarray(data.get("r_grid", []), dtype=float)
        t = np.asarray(data.get("t_grid", []), dtype=float)
        beta = np.asarray(data.get("beta", []), dtype=float)
        if r.size == 0 or t.size == 0 or beta.shape != (r.size, t.size):
            raise InputError("beta must have shape (len(r_grid), len(t_grid))")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(t) <= 0):
            raise InputError("envelope grids must be strictly increasing")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0):
            raise InputError("beta entries must be finite and nonnegative")
        beta = upper_projection(beta, Direction.NONDECREASING, axis=0)
        beta = upper_projection(beta, Direction.NONINCREASING, axis=1)
        data = dict(data)
        data.update(r_grid=r.tolist(), t_grid=t.tolist(), beta=beta.tolist())
        return data

    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)

    def beta_at(self, r, t) -> np.ndarray:
        """
        beta at (r, t). Past the last radius the last row is scaled up by the
        larger of r / r_max and the linear continuation of the last two rows.
        """
        r_arr, t_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        grid_r = np.asarray(self.r_grid)
        rows = _upper_index(grid_r, r_arr, Direction.NONDECREASING)
        grid_t = np.asarray(self.t_grid)
        beta = self.beta_array()
        out = np.empty(r_arr.shape)
        for i in np.unique(rows):
            mask = rows == i
            out[mask] = np.interp(t_arr[mask], grid_t, beta[i])
        beyond = r_arr > grid_r[-1]
        if np.any(beyond):
            last = np.interp(t_arr[beyond], grid_t, beta[-1])
            r_out = r_arr[beyond]
            scaled = last * r_out / grid_r[-1] if grid_r[-1] > 0 else last
            if grid_r.size > 1:
                prev = np.interp(t_arr[beyond], grid_t, beta[-2])
                slope = (last - prev) / (grid_r[-1] - grid_r[-2])
                scaled = np.maximum(scaled, last + slope * (r_out - grid_r[-1]))
            out[beyond] = np.maximum(scaled, last)
        return out

    def bound(self, r, t) -> np.ndarray:
        return self.beta_at(r, t) + self.offset_c


class TauTable(BaseModel):
    """
    Attraction times τ(ε, r): rows are ε (nonincreasing), columns are r
    (nondecreasing). ``smoothed`` is filled in by the averaging construction.
    """
    model_config = ConfigDict(frozen=True)

    eps_grid: List[float]
    r_grid: List[float]
    raw: MonotoneGrid
    smoothed: Optional[MonotoneGrid] = None
    kind: str = Field(default="first_entry", description="first_entry or last_exit")

    @classmethod
    def from_values(cls, eps_grid: Sequence[float], r_grid: Sequence[float], values,
                    kind: str = "first_entry") -> "TauTable":
        raw = MonotoneGrid(rows=list(eps_grid), cols=list(r_grid), values=np.asarray(values, dtype=float).tolist(),
                           row_direction=Direction.NONINCREASING, col_direction=Direction.NONDECREASING)
        return cls(eps_grid=raw.rows, r_grid=raw.cols, raw=raw, kind=kind)

    @property
    def table(self) -> MonotoneGrid:
        return self.smoothed if self.smoothed is not None else self.raw

    def lookup(self, eps, r):
        """Grid value bounding τ from above: next smaller ε, next larger r (clamped at the edges)."""
        return self.table.upper(eps, r)

    def raw_array(self) -> np.ndarray:
        return self.raw.array()

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.table.array())))

    def inflated(self, eps_index: int, r_index: int, value: float) -> "TauTable":
        """Copy whose raw entry at (eps_index, r_index) is at least ``value``."""
        vals = self.raw_array()
        vals[eps_index, r_index] = max(vals[eps_index, r_index], value)
        return TauTable.from_values(self.eps_grid, self.r_grid, vals, kind=self.kind)
