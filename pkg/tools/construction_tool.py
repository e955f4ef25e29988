"""
Construction Tool for the stability toolkit.
Turns estimated tables into certificates: τ smoothing by double averaging,
σ from the μ envelope, and the KL envelope β with offset c.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import trapezoid

from core.errors import ConstructionRefused, InputError
from core.reports import LagrangeCertificate, RfcEnvelope
from core.sets import SetDescriptor, distance_to_set
from core.tables import (
    Direction,
    EnvelopeKnots,
    KLEnvelope,
    MonotoneGrid,
    MonotoneTable,
    TauTable,
    fit_monotone_envelope,
)
from core.verdict import Verdict
from dynamics.integrator import TrajectoryBatch
from .base_tool import BaseTool

logger = logging.getLogger("stability.constructions")

QUADRATURE_POINTS = 33
MAX_HALVINGS = 30
TIE_BREAK = 1e-6


def _mean(values: np.ndarray, xs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Trapezoid average over ``xs``; the plain value on a zero-width interval."""
    width = xs[-1] - xs[0]
    if width <= 0:
        return np.take(values, 0, axis=axis)
    return trapezoid(values, xs, axis=axis) / width


def _power_law(x: np.ndarray, a: float, b: float, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    """v(x) = va (x/a)^p through (a, va) and (b, vb); va where a power law does not fit."""
    if a <= 0 or b <= 0:
        return va
    ok = (va > 0) & (vb > 0) & (x > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.log(np.where(ok, va / np.where(ok, vb, 1.0), 1.0)) / np.log(a / b)
        return np.where(ok, va * (np.where(ok, x, a) / a) ** p, va)


def _continue(x: np.ndarray, knots: np.ndarray, values: np.ndarray) -> np.ndarray:
    """
    Linear interpolation of ``values`` (one column of knot values per query)
    at ``x``. Past either end the edge segment is continued upward: the
    larger of its linear and power-law extensions, never below the edge value.
    """
    k = knots.size
    if k == 1:
        return values[0].copy()
    n = np.arange(x.size)
    idx = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, k - 2)
    lo, hi = knots[idx], knots[idx + 1]
    vlo, vhi = values[idx, n], values[idx + 1, n]
    out = vlo + (x - lo) / (hi - lo) * (vhi - vlo)
    ends = ((x < knots[0], 0, 1), (x > knots[-1], -1, -2))
    for mask, a, b in ends:
        if np.any(mask):
            va, vb = values[a, mask], values[b, mask]
            power = _power_law(x[mask], float(knots[a]), float(knots[b]), va, vb)
            out[mask] = np.maximum(np.maximum(out[mask], power), va)
    return out


def tau_continued(grid: MonotoneGrid, eps, r) -> np.ndarray:
    """τ̃(ε, r) from a τ grid; bilinear inside, continued upward past every edge."""
    E, R = np.broadcast_arrays(np.asarray(eps, dtype=float), np.asarray(r, dtype=float))
    e, s = E.ravel(), R.ravel()
    vals = grid.array()
    cols = np.asarray(grid.cols)
    per_row = np.stack([_continue(s, cols, np.repeat(row[:, None], s.size, axis=1)) for row in vals])
    out = _continue(e, np.asarray(grid.rows), per_row)
    return out.reshape(E.shape)


def smooth_tau(raw: TauTable) -> TauTable:
    """
    τ(ε, R) = average of τ̃ over [ε/2, ε] × [R, 2R].

    Inside the raw grid τ̃ is bilinear. The windows of the smallest ε and the
    largest R reach past the grid, where τ̃ is continued upward (see
    ``tau_continued``). The result is pushed up to the raw values so it never
    undercuts them.

    Raises:
        InputError: the raw table holds non-finite entries
    """
    grid = raw.raw
    values = grid.array()
    if not np.all(np.isfinite(values)):
        raise InputError("cannot smooth a τ table with non-finite entries")
    if any(e <= 0 for e in raw.eps_grid):
        raise InputError("τ smoothing needs positive ε values")
    smoothed = np.empty_like(values)
    for i, eps in enumerate(raw.eps_grid):
        eps_nodes = np.linspace(eps / 2.0, eps, QUADRATURE_POINTS)
        for j, R in enumerate(raw.r_grid):
            r_nodes = np.linspace(R, 2.0 * R, QUADRATURE_POINTS)
            E, Rr = np.meshgrid(eps_nodes, r_nodes, indexing="ij")
            samples = tau_continued(grid, E, Rr)
            avg = _mean(_mean(samples, r_nodes, axis=1), eps_nodes)
            smoothed[i, j] = np.clip(avg, samples.min(), samples.max())
    smoothed = np.maximum(smoothed, values)
    table = MonotoneGrid(rows=grid.rows, cols=grid.cols, values=smoothed.tolist(),
                         row_direction=Direction.NONINCREASING, col_direction=Direction.NONDECREASING)
    return raw.model_copy(update={"smoothed": table})


def radial_tau(tau: TauTable, r: float) -> float:
    """τ̄(r) = (1/r) ∫_r^{2r} τ(s/2, s) ds."""
    if r <= 0:
        return float(tau_continued(tau.table, min(tau.eps_grid), 0.0))
    s = np.linspace(r, 2.0 * r, QUADRATURE_POINTS)
    return float(_mean(tau_continued(tau.table, s / 2.0, s), s))


def lagrange_sigma(mu: RfcEnvelope, tau: TauTable) -> LagrangeCertificate:
    """
    σ̃(r) = μ(r, τ̄(r)) with the ε = r/2 link; σ = σ̃ − σ̃(0), c = σ̃(0).

    At r = 0 the whole μ row is used (no attraction time applies inside A).
    A σ̃ below r/2 or a τ̄ past the μ time grid is reported in ``flag``.
    """
    r_grid = list(mu.r_grid)
    t_max = mu.t_grid[-1]
    notes: List[str] = []
    raw: List[float] = []
    late: List[float] = []
    for r in r_grid:
        if r <= 0:
            raw.append(float(mu.bound(0.0, t_max)))
            continue
        t_bar = radial_tau(tau, r)
        if t_bar > t_max:
            late.append(r)
        raw.append(float(mu.bound(r, t_bar)))
    c = raw[0]
    if r_grid[0] > 0:
        notes.append(f"r = 0 not on the μ grid; c taken at r = {r_grid[0]:g}")
    low = [r for r, s in zip(r_grid, raw) if r > 0 and s < r / 2.0]
    if low:
        notes.append(f"σ̃(r) < r/2 at r = {', '.join(f'{r:g}' for r in low)}: raise the budget")
    if late:
        notes.append(f"τ̄(r) exceeds the μ time grid at r = {', '.join(f'{r:g}' for r in late)}")
    samples = [(0.0, 0.0)] + [(r, max(s - c, 0.0)) for r, s in zip(r_grid, raw) if r > 0]
    if len(samples) < 2:
        raise InputError("σ needs at least one positive radius")
    sigma = fit_monotone_envelope(samples, label="constructed").as_class_kinf()
    return LagrangeCertificate(sigma=sigma, offset_c=max(c, 0.0), radii=r_grid, raw=raw,
                               flag="; ".join(notes) or None)


def _row_knots(sigma: MonotoneTable, tau: TauTable, delta: float) -> EnvelopeKnots:
    eps_min = min(tau.eps_grid)
    level = float(sigma(delta))
    times = [0.0]
    n = 1
    taus: List[float] = []
    while n <= MAX_HALVINGS:
        eps_n = level / 2.0 ** n
        if eps_n < eps_min:
            break
        taus.append(float(tau.lookup(eps_n, delta)) + n * TIE_BREAK)
        n += 1
    if not taus:
        return EnvelopeKnots(radius=delta, times=[0.0], levels=[level])
    times += taus
    levels = [level] + [level / 2.0 ** (k - 1) for k in range(1, len(taus) + 1)]
    previous = taus[-2] if len(taus) > 1 else 0.0
    times.append(taus[-1] + (taus[-1] - previous))
    levels.append(level / 2.0 ** len(taus))
    return EnvelopeKnots(radius=delta, times=times, levels=levels)


def _row_values(knots: EnvelopeKnots, t_grid: np.ndarray) -> np.ndarray:
    kt, lv = np.asarray(knots.times), np.asarray(knots.levels)
    if len(kt) == 1:
        return np.full(len(t_grid), lv[0])
    values = np.exp(np.interp(t_grid, kt, np.log(lv)))
    exact = np.searchsorted(t_grid, kt)
    values[exact] = lv
    return values


def kl_envelope(
    sigma: MonotoneTable,
    c: float,
    tau: TauTable,
    delta_grid: Sequence[float],
    tau_verdict: Optional[Verdict] = None,
) -> KLEnvelope:
    """
    β from halving levels ε_n = σ(δ)/2ⁿ and attraction times τ_n = τ(ε_n, δ).

    Each row ω(δ, ·) passes through (0, ε_0) and (τ_n, ε_{n−1}), decays
    log-linearly between knots and ends one knot gap after τ_N at ε_N.
    β(r, t) is the running max of the rows over δ ≤ r.

    Raises:
        ConstructionRefused: τ is falsified or not finite
        InputError: empty or nonpositive δ grid
    """
    if tau_verdict is not None and tau_verdict.is_falsified:
        raise ConstructionRefused("τ is falsified; no pUGAS envelope can be built")
    if not tau.is_finite():
        raise ConstructionRefused("τ has infinite entries; no pUGAS envelope can be built")
    deltas = sorted({float(d) for d in delta_grid if d > 0})
    if not deltas:
        raise InputError("the δ grid needs at least one positive radius")
    knots = [_row_knots(sigma, tau, d) for d in deltas]
    t_grid = np.union1d([0.0], np.concatenate([k.times for k in knots]))
    rows = np.vstack([_row_values(k, t_grid) for k in knots])
    beta = np.maximum.accumulate(rows, axis=0)
    r_grid = deltas
    if deltas[0] > 0:
        r_grid = [0.0] + deltas
        beta = np.vstack([np.zeros(len(t_grid)), beta])
    logger.debug(f"KL envelope with {len(deltas)} rows and {len(t_grid)} time knots")
    return KLEnvelope(r_grid=r_grid, t_grid=t_grid.tolist(), beta=beta.tolist(), offset_c=c, knots=knots)


class EnvelopeValidation(BaseModel):
    """Share of (x, d, t) samples below β(‖x‖_A, t) + c + slack."""
    pass_fraction: float
    samples: int
    failures: int
    worst_excess: float = Field(description="Largest distance above the bound, 0 if none")
    slack: float


def validate_envelope(env: KLEnvelope, A: SetDescriptor, batch: TrajectoryBatch) -> EnvelopeValidation:
    """Check every sampled point of a fresh batch against the envelope."""
    with np.errstate(invalid="ignore", over="ignore"):
        dist = np.asarray(distance_to_set(batch.states, A))
    dist = np.where(np.isnan(dist), np.inf, dist)
    r0 = np.asarray(distance_to_set(batch.initial_states, A)).reshape(-1)
    I, S, T = dist.shape
    R = np.broadcast_to(r0[:, None, None], (I, S, T))
    t = np.broadcast_to(batch.times[None, None, :], (I, S, T))
    slack = 2.0 * batch.tol * float(batch.times[-1])
    bound = env.bound(R, t) + slack
    ok = dist <= bound
    excess = np.where(ok, 0.0, dist - bound)
    return EnvelopeValidation(
        pass_fraction=float(ok.mean()),
        samples=int(ok.size),
        failures=int((~ok).sum()),
        worst_excess=float(np.max(excess)) if excess.size else 0.0,
        slack=slack,
    )


class ConstructionTool(BaseTool):
    """
    Tool wrapper around the certificate constructions.
    """

    def __init__(self, verbose: bool = False):
        super().__init__(
            name="Construction Tool",
            description="Builds smoothed τ tables, σ envelopes and KL envelopes from estimates",
            verbose=verbose
        )
        self.operations = {
            "smooth_tau": smooth_tau,
            "lagrange_sigma": lagrange_sigma,
            "kl_envelope": kl_envelope,
            "validate_envelope": validate_envelope,
        }

    async def run(self, operation: str, **kwargs) -> Dict[str, Any]:
        """
        Run one construction.

        Args:
            operation: smooth_tau, lagrange_sigma, kl_envelope or validate_envelope
            **kwargs: Arguments of the construction

        Returns:
            Dictionary with status and the constructed object
        """
        fn = self.operations.get(operation)
        if fn is None:
            return {"status": "error", "message": f"Unknown construction '{operation}'"}
        self.log(f"Running {operation}")
        try:
            result = await self.call(fn, **kwargs)
        except ConstructionRefused as e:
            self.log(f"Construction refused: {e}")
            return {"status": "refused", "message": str(e)}
        except InputError as e:
            return self.failure("Construction", "invalid input", e)
        return {"status": "success", "result": result}
