"""Cross-entropy adversarial search and stressed verdicts."""

import asyncio
import math

import numpy as np
import pytest

from core.reports import PropertyKind, build_report
from core.sets import origin
from core.verdict import Budget, Verdict
from dynamics.integrator import replay
from dynamics.systems import builtin
from tools.search_tool import AdversarialSearchTool, SearchObjective, SearchProblem, adversarial_search, stress_verdict


def _sup_problem(**overrides) -> SearchProblem:
    settings = dict(objective=SearchObjective.MAX_SUP_NORM, target=origin(1), region=origin(1), region_radius=1.0,
                    grid_step=0.25, horizon=2.0, evaluations=128, population=16, restarts=2, seed=5, tol=1e-8)
    settings.update(overrides)
    return SearchProblem(**settings)


# -----------------------------------------------------------------------------
# Problem validation
# -----------------------------------------------------------------------------

def test_evaluations_must_cover_every_restart():
    with pytest.raises(ValueError):
        _sup_problem(evaluations=10)


def test_entry_into_a_point_needs_a_level():
    with pytest.raises(ValueError):
        _sup_problem(objective=SearchObjective.MAX_ENTRY_TIME, eps=0.0)


def test_problem_sized_from_a_budget():
    problem = SearchProblem.from_budget(Budget(search_evaluations=32, horizon=4.0), SearchObjective.MAX_SUP_NORM,
                                        origin(1), origin(1), region_radius=1.0)
    assert problem.population * problem.restarts <= problem.evaluations
    assert problem.grid_step == pytest.approx(4.0 / 64.0)
    assert problem.generations >= 1


# -----------------------------------------------------------------------------
# Search
# -----------------------------------------------------------------------------

def test_sup_norm_search_finds_the_boundary_growth(unstable):
    result = adversarial_search(_sup_problem(), unstable)
    assert 7.3 <= result.objective <= math.exp(2.0) * (1.0 + 1e-5)
    assert np.all(np.diff(result.history) >= 0)
    assert result.evaluations <= 128
    assert abs(result.best_state[0]) <= 1.0 + 1e-9


def test_search_is_deterministic_per_seed(unstable):
    first = adversarial_search(_sup_problem(), unstable)
    second = adversarial_search(_sup_problem(), unstable)
    assert first.objective == second.objective
    assert first.best_state == second.best_state
    assert first.history == second.history


def test_search_witness_replays_to_its_objective(unstable):
    problem = _sup_problem()
    result = adversarial_search(problem, unstable)
    w = result.witness
    states = replay(unstable, w, [w.start_time, w.time], problem.tol)
    replayed = float(np.linalg.norm(states[-1]))
    assert abs(replayed - result.objective) <= 2.0 * problem.tol * max(1.0, result.objective)


def test_entry_time_search_uses_the_slowest_disturbance():
    system = builtin("scalar_nonuniform(1)")
    problem = _sup_problem(objective=SearchObjective.MAX_ENTRY_TIME, eps=0.1, horizon=8.0)
    result = adversarial_search(problem, system)
    assert 4.5 <= result.objective <= 2.0 * math.log(10.0) + 5e-3


def test_search_sets_must_match_the_system(unstable):
    with pytest.raises(ValueError):
        adversarial_search(_sup_problem(target=origin(2), region=origin(2)), unstable)


# -----------------------------------------------------------------------------
# Stressed verdicts and the tool wrapper
# -----------------------------------------------------------------------------

def test_stress_leaves_unsupported_reports_alone(stable, origin1, small_budget):
    report = build_report(PropertyKind.LAGRANGE, Verdict.inconclusive("horizon"), origin1)
    assert stress_verdict(report, stable, small_budget) is report


def test_tool_runs_searches_and_rejects_unknown_operations(unstable):
    tool = AdversarialSearchTool()
    out = asyncio.run(tool.run("search", problem=_sup_problem(evaluations=32), system=unstable))
    assert out["status"] == "success"
    assert out["result"].objective > 1.0
    assert asyncio.run(tool.run("nope"))["status"] == "error"
