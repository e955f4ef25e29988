"""
Adversarial Search Tool for the stability toolkit.
Stresses sup-over-disturbance estimates with a cross-entropy search over
initial states and piecewise-constant disturbance signals.
"""

import logging
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import InputError
from core.reports import PropertyKind, PropertyReport
from core.sets import SetDescriptor, SetKind, ball_around_set, distance_to_set
from core.tables import Direction, MonotoneGrid, MonotoneTable, fit_monotone_envelope, lower_projection
from core.verdict import DEFAULT_TOL, Budget, Verdict, Witness
from dynamics.integrator import simulate_pairs
from dynamics.measures import divergent, entry_time_of, record_times, trajectory_distances
from dynamics.signals import DisturbanceSignal, segment_count
from dynamics.systems import DynamicalSystem
from .base_tool import BaseTool

logger = logging.getLogger("stability.search")

POPULATION = 32
ELITE_FRACTION = 0.25
RESTARTS = 4
SEED_AXES_UP_TO = 16
SHRINK = 2.0 ** 0.25
MAX_SHRINKS = 8
DELTA_MIN = 1e-4


class SearchObjective(str, Enum):
    MAX_ENTRY_TIME = "max_entry_time"
    MAX_SUP_NORM = "max_sup_norm"


class SearchProblem(BaseModel):
    """What to maximize, where to start and which signals are allowed."""
    model_config = ConfigDict(frozen=True)

    objective: SearchObjective
    target: SetDescriptor = Field(description="Distances are measured to this set")
    eps: float = Field(default=0.0, ge=0, description="Entry level for MAX_ENTRY_TIME")
    region: SetDescriptor = Field(description="Initial states are searched in or around this set")
    region_radius: Optional[float] = Field(default=None, gt=0, description="Search B_radius(region) instead of region")
    grid_step: float = Field(gt=0)
    horizon: float = Field(gt=0)
    evaluations: int = Field(default=512, ge=1)
    population: int = Field(default=POPULATION, ge=4)
    restarts: int = Field(default=RESTARTS, ge=1)
    elite_fraction: float = Field(default=ELITE_FRACTION, gt=0, le=1)
    seed: int = 0
    tol: float = DEFAULT_TOL

    @model_validator(mode="after")
    def _budget_covers_generations(self) -> "SearchProblem":
        if self.evaluations < self.population * self.restarts:
            raise ValueError(
                f"evaluations ({self.evaluations}) must cover population × restarts "
                f"({self.population} × {self.restarts})")
        if self.objective == SearchObjective.MAX_ENTRY_TIME and self.eps <= 0 and self.target.kind == SetKind.POINTS:
            raise ValueError("entry into a point set needs a positive eps")
        return self

    @property
    def generations(self) -> int:
        return max(1, self.evaluations // (self.population * self.restarts))

    @classmethod
    def from_budget(cls, budget: Budget, objective: SearchObjective, target: SetDescriptor,
                    region: SetDescriptor, region_radius: Optional[float] = None, eps: float = 0.0,
                    horizon: Optional[float] = None) -> "SearchProblem":
        """Problem sized to ``budget.search_evaluations``."""
        evaluations = budget.search_evaluations
        population = max(8, min(POPULATION, evaluations // RESTARTS))
        restarts = max(1, min(RESTARTS, evaluations // population))
        return cls(objective=objective, target=target, eps=eps, region=region, region_radius=region_radius,
                   grid_step=budget.step, horizon=budget.horizon if horizon is None else horizon,
                   evaluations=evaluations, population=population, restarts=restarts,
                   seed=budget.seed, tol=budget.tol)


class SearchResult(BaseModel):
    """Best (state, signal) found and the objective it attains."""
    model_config = ConfigDict(frozen=True)

    best_state: List[float]
    best_signal: DisturbanceSignal
    objective: float
    history: List[float] = Field(description="Best objective after each generation")
    evaluations: int
    witness: Witness


class _Evaluator:
    """Scores a population of (state, segment values) candidates."""

    def __init__(self, system: DynamicalSystem, problem: SearchProblem):
        self.system = system
        self.problem = problem
        self.times = record_times(problem.horizon, problem.grid_step)
        self.count = 0

    def signals(self, D: np.ndarray) -> List[DisturbanceSignal]:
        step = self.problem.grid_step
        return [DisturbanceSignal(grid_step=step, values=d.tolist(), tail=d[-1].tolist()) for d in D]

    def __call__(self, X: np.ndarray, D: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Objective per candidate and the time index where it is attained."""
        self.count += len(X)
        states, _ = simulate_pairs(self.system, X, self.signals(D), self.times, self.problem.tol)
        with np.errstate(invalid="ignore", over="ignore"):
            dist = np.asarray(distance_to_set(states, self.problem.target))
        dist = np.where(np.isnan(dist), np.inf, dist)
        if self.problem.objective == SearchObjective.MAX_SUP_NORM:
            k = np.argmax(dist, axis=1)
            return dist[np.arange(len(X)), k], k
        return self._entry(dist)

    def _entry(self, dist: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        eps = self.problem.eps
        times = self.times
        inside = dist <= eps
        hit = inside.any(axis=1)
        k = np.where(hit, inside.argmax(axis=1), len(times) - 1)
        values = np.empty(len(dist))
        for p in range(len(dist)):
            kp = int(k[p])
            if not hit[p]:
                # continuous past the horizon so non-entering candidates still rank
                values[p] = self.problem.horizon + dist[p, -1]
            elif kp == 0:
                values[p] = 0.0
            else:
                a, b = dist[p, kp - 1], dist[p, kp]
                w = 1.0 if not np.isfinite(a) or a == b else float(np.clip((a - eps) / (a - b), 0.0, 1.0))
                values[p] = times[kp - 1] + w * (times[kp] - times[kp - 1])
        return values, k


def _region_sampler(problem: SearchProblem):
    if problem.region_radius is not None:
        nbhd = ball_around_set(problem.region, problem.region_radius)
        return nbhd.sample, nbhd.project, nbhd.extent()
    return problem.region.sample_inside, problem.region.project, max(0.5 * problem.region.diameter(), 1e-3)


def _seed_candidates(problem: SearchProblem, n: int, lo: np.ndarray, hi: np.ndarray, K: int,
                     project) -> Tuple[np.ndarray, np.ndarray]:
    """Axis extremes of the region paired with constant vertex disturbances."""
    center = problem.region.center_point()
    reach = problem.region_radius if problem.region_radius is not None else 0.5 * problem.region.diameter()
    states = []
    if n <= SEED_AXES_UP_TO and reach > 0:
        for i in range(n):
            for sign in (1.0, -1.0):
                x = center.copy()
                x[i] += sign * reach
                states.append(x)
    if not states:
        states.append(center.copy())
    m = len(lo)
    codes = range(min(2 ** m, 8))
    vertices = np.unique([np.where([(code >> j) & 1 for j in range(m)], hi, lo) for code in codes], axis=0)
    X = np.asarray([x for x in states for _ in vertices])
    D = np.asarray([np.tile(v, (K, 1)) for _ in states for v in vertices])
    return project(X), D


def adversarial_search(problem: SearchProblem, system: DynamicalSystem) -> SearchResult:
    """
    Cross-entropy maximization of the problem objective.

    Candidates are Gaussian draws around the elite mean; states are
    projected back into the search region and disturbances clipped to D.
    The best candidate survives into every later generation, so the
    recorded history never decreases. Identical seeds give identical results.

    Args:
        problem: Objective, regions, signal grid and evaluation budget
        system: System to stress

    Returns:
        SearchResult with a replayable witness
    """
    if problem.target.dimension != system.dimension or problem.region.dimension != system.dimension:
        raise InputError("search sets must match the system dimension")
    evaluate = _Evaluator(system, problem)
    n = system.dimension
    lo, hi = system.disturbance_box.outer_box()
    width = hi - lo
    K = segment_count(problem.horizon, problem.grid_step)
    sample, project, scale = _region_sampler(problem)
    pop = problem.population
    n_elite = max(1, int(round(problem.elite_fraction * pop)))

    best_value, best_x, best_d, best_k = -np.inf, None, None, 0
    history: List[float] = []
    for restart in range(problem.restarts):
        rng = np.random.default_rng(problem.seed + restart)
        X = sample(pop, rng)
        D = rng.uniform(0.0, 1.0, size=(pop, K, len(lo))) * width + lo
        if restart == 0:
            seeds_x, seeds_d = _seed_candidates(problem, n, lo, hi, K, project)
            take = min(len(seeds_x), pop - 1)
            X[:take], D[:take] = seeds_x[:take], seeds_d[:take]
        if best_x is not None:
            X[-1], D[-1] = best_x, best_d

        for _ in range(problem.generations):
            values, k = evaluate(X, D)
            top = int(np.argmax(values))
            if values[top] > best_value:
                best_value, best_x, best_d, best_k = float(values[top]), X[top].copy(), D[top].copy(), int(k[top])
            history.append(best_value)
            if not np.isfinite(best_value):
                break
            elite = np.argsort(-values, kind="stable")[:n_elite]
            mu_x, sd_x = X[elite].mean(axis=0), X[elite].std(axis=0) + 1e-3 * scale
            mu_d, sd_d = D[elite].mean(axis=0), D[elite].std(axis=0) + 0.05 * width
            X = project(mu_x + sd_x * rng.standard_normal((pop, n)))
            D = np.clip(mu_d + sd_d * rng.standard_normal((pop, K, len(lo))), lo, hi)
            X[-1], D[-1] = best_x, best_d
        if not np.isfinite(best_value):
            break

    signal = evaluate.signals(best_d[None])[0]
    witness_time = float(evaluate.times[min(best_k, len(evaluate.times) - 1)])
    objective = best_value
    if problem.objective == SearchObjective.MAX_ENTRY_TIME and np.isfinite(best_value) \
            and best_value <= problem.horizon:
        objective = _replayed_entry(system, problem, best_x, signal)
        witness_time = objective
    logger.debug(f"search {problem.objective.value}: {objective:.6g} after {evaluate.count} evaluations")
    return SearchResult(
        best_state=best_x.tolist(),
        best_signal=signal,
        objective=objective,
        history=history,
        evaluations=evaluate.count,
        witness=signal.to_witness(best_x, witness_time, objective),
    )


def _replayed_entry(system, problem, x, signal) -> float:
    w = signal.to_witness(x, 0.0)
    return entry_time_of(system, w, problem.target, problem.eps, problem.horizon, problem.tol)


def _sup_excursion(system, A, delta, horizon, budget, offset) -> SearchResult:
    problem = SearchProblem.from_budget(budget.reseeded(offset), SearchObjective.MAX_SUP_NORM, A, A,
                                        region_radius=delta, horizon=horizon)
    return adversarial_search(problem, system)


def _shrink_delta(system, A, eps, delta, horizon, budget, delta_min, offset) -> Tuple[float, Optional[Witness]]:
    """Shrink δ by 2^{1/4} until the stressed excursion stays within ε; a witness if δ_min is passed."""
    witness = None
    for _ in range(MAX_SHRINKS + 1):
        if delta < delta_min:
            return delta, witness
        result = _sup_excursion(system, A, delta, horizon, budget, offset)
        if result.objective <= eps:
            return delta, None
        witness = result.witness
        delta /= SHRINK
    return delta, witness


def stress_verdict(report: PropertyReport, system: DynamicalSystem, budget: Budget) -> PropertyReport:
    """
    Re-run the matching adversarial search against a supported report.

    τ and Lagrange tables are inflated to cover stressed values; δ tables
    are shrunk. A stressed violation that no table adjustment can absorb
    downgrades the verdict with the new witness.
    """
    if not report.verdict.is_supported or report.target is None:
        return report
    kind = report.property
    if kind in (PropertyKind.UNIFORM_WEAK_ATTRACTIVE, PropertyKind.UGATT) and report.certificates.tau is not None:
        return _stress_tau(report, system, budget)
    if kind == PropertyKind.LAGRANGE and report.certificates.lagrange is not None:
        return _stress_lagrange(report, system, budget)
    if kind == PropertyKind.ULS and report.certificates.delta is not None:
        return _stress_delta(report, system, budget)
    if kind == PropertyKind.ROBUST_INVARIANT and report.certificates.robust_delta is not None:
        return _stress_robust_delta(report, system, budget)
    return report


def _stress_tau(report: PropertyReport, system: DynamicalSystem, budget: Budget) -> PropertyReport:
    A = report.target
    tau = report.certificates.tau
    mode = "exit" if tau.kind == "last_exit" else "enter"
    eps_min = min(tau.eps_grid)
    inflated = 0
    for j, r in enumerate(tau.r_grid):
        if r <= 0:
            continue
        problem = SearchProblem.from_budget(budget.reseeded(101 + j), SearchObjective.MAX_ENTRY_TIME, A, A,
                                            region_radius=r, eps=eps_min)
        result = adversarial_search(problem, system)
        w = result.witness
        if result.objective > problem.horizon:
            times, _, dist = trajectory_distances(system, w, A, problem.horizon, budget.tol)
            if bool(divergent(dist[None, :], times)[0]):
                verdict = Verdict.falsified(w, budget, f"stressed trajectory from radius {r:g} diverges")
                return report.with_verdict(verdict)
            verdict = Verdict.inconclusive(
                f"stressed trajectory from radius {r:g} does not reach ε={eps_min:g} within horizon {problem.horizon:g}",
                budget)
            return report.with_verdict(verdict, note=f"stress witness state {w.state}")
        for i, eps in enumerate(tau.eps_grid):
            value = entry_time_of(system, w, A, eps, problem.horizon, budget.tol, mode=mode)
            if not np.isfinite(value):
                verdict = Verdict.inconclusive(
                    f"stressed trajectory is outside ε={eps:g} at horizon {problem.horizon:g}", budget)
                return report.with_verdict(verdict)
            if value > tau.raw_array()[i, j]:
                tau = tau.inflated(i, j, value)
                inflated += 1
    if inflated == 0:
        return report
    certificates = report.certificates.model_copy(update={"tau": tau})
    return report.with_verdict(report.verdict, certificates, note=f"stress inflated {inflated} tau cells")


def _stress_lagrange(report: PropertyReport, system: DynamicalSystem, budget: Budget) -> PropertyReport:
    A = report.target
    cert = report.certificates.lagrange
    raw = list(cert.raw)
    changed = False
    for j, r in enumerate(cert.radii):
        if r <= 0:
            continue
        result = _sup_excursion(system, A, r, budget.horizon, budget, 201 + j)
        if not np.isfinite(result.objective):
            return report.with_verdict(Verdict.falsified(result.witness, budget, f"blow-up from radius {r:g}"))
        if result.objective > raw[j]:
            raw[j] = result.objective
            changed = True
    if not changed:
        return report
    c = cert.offset_c
    bp, vals = cert.sigma.arrays()
    samples = [(float(b), float(v)) for b, v in zip(bp, vals)] + [(r, max(s - c, 0.0)) for r, s in zip(cert.radii, raw)]
    sigma = fit_monotone_envelope(samples, label=cert.sigma.label).as_class_kinf()
    lagrange = cert.model_copy(update={"sigma": sigma, "raw": raw})
    certificates = report.certificates.model_copy(update={"lagrange": lagrange})
    return report.with_verdict(report.verdict, certificates, note="stress inflated the Lagrange bound")


def _stress_delta(report: PropertyReport, system: DynamicalSystem, budget: Budget) -> PropertyReport:
    A = report.target
    table = report.certificates.delta
    delta_min = float(report.diagnostics.get("delta_min", DELTA_MIN))
    eps_grid, deltas = table.arrays()
    new = deltas.copy()
    for j, (eps, delta) in enumerate(zip(eps_grid, deltas)):
        if eps <= 0 or delta <= 0:
            continue
        shrunk, witness = _shrink_delta(system, A, eps, delta, budget.horizon, budget, delta_min, 301 + j)
        if witness is not None and shrunk < delta_min:
            return report.with_verdict(Verdict.falsified(
                witness, budget, f"no δ ≥ {delta_min:g} keeps excursions within ε={eps:g} under stress"))
        new[j] = shrunk
    if np.array_equal(new, deltas):
        return report
    shrunk = lower_projection(new, Direction.NONDECREASING)
    table = MonotoneTable(breakpoints=eps_grid.tolist(), values=shrunk.tolist(),
                          direction=Direction.NONDECREASING, label=table.label)
    certificates = report.certificates.model_copy(update={"delta": table})
    return report.with_verdict(report.verdict, certificates, note="stress shrank δ")


def _stress_robust_delta(report: PropertyReport, system: DynamicalSystem, budget: Budget) -> PropertyReport:
    A = report.target
    grid = report.certificates.robust_delta
    delta_min = float(report.diagnostics.get("delta_min", DELTA_MIN))
    values = grid.array()
    new = values.copy()
    for i, eps in enumerate(grid.rows):
        for j, h in enumerate(grid.cols):
            if values[i, j] <= 0:
                continue
            shrunk, witness = _shrink_delta(system, A, eps, values[i, j], h, budget, delta_min, 401 + 16 * i + j)
            if witness is not None and shrunk < delta_min:
                return report.with_verdict(Verdict.falsified(
                    witness, budget, f"no δ ≥ {delta_min:g} keeps excursions within ε={eps:g} up to h={h:g}"))
            new[i, j] = shrunk
    if np.array_equal(new, values):
        return report
    robust = MonotoneGrid(rows=grid.rows, cols=grid.cols,
                          values=lower_projection(lower_projection(new, Direction.NONDECREASING, axis=0),
                                                 Direction.NONINCREASING, axis=1).tolist(),
                          row_direction=Direction.NONDECREASING, col_direction=Direction.NONINCREASING)
    certificates = report.certificates.model_copy(update={"robust_delta": robust})
    return report.with_verdict(report.verdict, certificates, note="stress shrank δ(ε, h)")


class AdversarialSearchTool(BaseTool):
    """
    Tool wrapper around the adversarial search and the stress pass.
    """

    def __init__(self, verbose: bool = False):
        super().__init__(
            name="Adversarial Search Tool",
            description="Searches initial states and disturbance signals for worst-case behaviour",
            verbose=verbose
        )

    async def run(self, operation: str = "search", **kwargs) -> Dict[str, Any]:
        """
        Run a search or stress a report.

        Args:
            operation: "search" (problem, system) or "stress" (report, system, budget)

        Returns:
            Dictionary with status and the search result or stressed report
        """
        try:
            if operation == "search":
                problem: SearchProblem = kwargs["problem"]
                self.log(f"Searching {problem.objective.value} with {problem.evaluations} evaluations")
                result = await self.call(adversarial_search, problem, kwargs["system"])
                return {"status": "success", "result": result}
            if operation == "stress":
                report: PropertyReport = kwargs["report"]
                self.log(f"Stressing {report.property.value}")
                stressed = await self.call(stress_verdict, report, kwargs["system"], kwargs["budget"])
                return {"status": "success", "report": stressed}
            raise InputError(f"unknown search operation '{operation}'")
        except InputError as e:
            return self.failure("Search", "invalid input", e)
