"""
Numerical audit of the system axioms: identity, causality, continuity and
the cocycle property, on sampled (state, signal, times) triples.
"""

from typing import Dict

import numpy as np
from pydantic import BaseModel, Field

from core.errors import InputError
from core.sets import ball_around_set, origin
from core.verdict import DEFAULT_TOL
from .integrator import simulate_pairs
from .signals import SignalStrategy, concatenate, sample_signals
from .systems import DynamicalSystem

AXIOM_STEP = 0.25
MAX_GRID_MULTIPLE = 8
FINE_DIVISIONS = 64


class AxiomReport(BaseModel):
    """Largest observed violation per axiom; violations are data, not errors."""
    system: str
    samples: int
    tol: float
    grid_step: float
    identity: float = Field(description="max ‖φ(0,x,d) − x‖")
    cocycle: float = Field(description="max ‖φ(t+h,x,d) − φ(h, φ(t,x,d), d(·+t))‖")
    causality: float = Field(description="max gap at t between flows under signals agreeing on [0,t)")
    max_jump: float = Field(description="largest state change between adjacent fine grid points")
    continuity: float = Field(description="largest jump not explained by the local speed")
    skipped: int = Field(default=0, description="samples dropped because a flow blew up")

    def violations(self) -> Dict[str, float]:
        return {
            "identity": self.identity,
            "cocycle": self.cocycle,
            "causality": self.causality,
            "continuity": self.continuity,
        }

    def within(self, limit: float) -> bool:
        return all(v <= limit for v in self.violations().values())


def check_axioms(
    system: DynamicalSystem,
    samples: int = 32,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    radius: float = 2.0,
    grid_step: float = AXIOM_STEP,
) -> AxiomReport:
    """
    Sample triples (x, d, (t, h)) and measure how far the numerical flow is
    from satisfying each axiom.

    Args:
        system: System under audit
        samples: Number of triples, at least 10
        tol: Integrator tolerance
        seed: Seed of states, signals and times
        radius: Initial states are drawn from the ball of this radius around 0
        grid_step: Disturbance grid step; t and h are multiples of it

    Returns:
        AxiomReport with the max violation per axiom
    """
    if samples < 10:
        raise InputError(f"the axiom audit needs at least 10 samples, got {samples}")
    rng = np.random.default_rng(seed)
    n = system.dimension
    X = ball_around_set(origin(n), radius).sample(samples, rng)
    horizon = 2 * MAX_GRID_MULTIPLE * grid_step
    signals = sample_signals(system.disturbance_box, grid_step, horizon, samples, SignalStrategy.MIXED, seed)
    others = sample_signals(system.disturbance_box, grid_step, horizon, samples, SignalStrategy.UNIFORM, seed + 1)
    t_mult = rng.integers(1, MAX_GRID_MULTIPLE + 1, size=samples)
    h_mult = rng.integers(1, MAX_GRID_MULTIPLE + 1, size=samples)

    at_zero, _ = simulate_pairs(system, X, signals, [0.0], tol)
    identity = float(np.max(np.linalg.norm(at_zero[:, 0] - X, axis=1)))

    cocycle = causality = max_jump = continuity = 0.0
    skipped = 0
    for i in range(samples):
        t, h = t_mult[i] * grid_step, h_mult[i] * grid_step
        d = signals[i]
        direct, blow = simulate_pairs(system, X[i:i + 1], [d], [t, t + h], tol)
        if np.isfinite(blow[0]):
            skipped += 1
            continue
        restarted, blow = simulate_pairs(system, direct[:, 0], [d.shift(t)], [h], tol)
        if np.isfinite(blow[0]):
            skipped += 1
            continue
        cocycle = max(cocycle, float(np.linalg.norm(direct[0, 1] - restarted[0, 0])))

        spliced = concatenate(d, others[i], t)
        other_run, _ = simulate_pairs(system, X[i:i + 1], [spliced], [t], tol)
        causality = max(causality, float(np.linalg.norm(direct[0, 0] - other_run[0, 0])))

        fine_step = grid_step / FINE_DIVISIONS
        fine = np.arange(0, round(t / fine_step) + 1) * fine_step
        path, _ = simulate_pairs(system, X[i:i + 1], [d], fine, tol)
        jumps = np.linalg.norm(np.diff(path[0], axis=0), axis=1)
        disturbance = np.stack([d.value_at(s) for s in fine])
        speed = np.linalg.norm(system.evaluate(path[0], disturbance, check=False), axis=1)
        local = 2.0 * fine_step * np.maximum(speed[:-1], speed[1:])
        max_jump = max(max_jump, float(np.max(jumps)))
        continuity = max(continuity, float(np.max(np.maximum(jumps - local - 10 * tol, 0.0))))

    return AxiomReport(
        system=system.name,
        samples=samples,
        tol=tol,
        grid_step=grid_step,
        identity=identity,
        cocycle=cocycle,
        causality=causality,
        max_jump=max_jump,
        continuity=continuity,
        skipped=skipped,
    )
