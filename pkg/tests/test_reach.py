"""Reachability clouds, prolongations, RFC envelopes and invariance probes."""

import asyncio

import numpy as np
import pytest

from analyzers.reach_analyzer import (
    ReachAnalyzer,
    a_eps,
    check_prolongation_continuity,
    coverage_radius,
    estimate_rfc,
    p_plus,
    probe_invariance,
    reach_set,
    worst_excursion_witness,
)
from core.errors import InputError
from core.reports import ReachCloud
from core.sets import box, origin
from core.verdict import Budget, Verdict, VerdictStatus
from dynamics.integrator import simulate_batch
from dynamics.signals import DisturbanceSignal


WIDE = Budget(samples=64, signals=2, horizon=4.0, tol=1e-7, seed=3)


def _cloud(points, radius: float, inflation: float = 0.0) -> ReachCloud:
    pts = np.asarray(points, dtype=float).reshape(-1, 1)
    return ReachCloud(points=pts, point_times=np.zeros(len(pts)), lower=[float(pts.min())], upper=[float(pts.max())],
                      horizon=1.0, source=origin(1), source_radius=radius, inflation=inflation,
                      verdict=Verdict.inconclusive("synthetic"))


# -----------------------------------------------------------------------------
# Reach sets
# -----------------------------------------------------------------------------

def test_reach_set_of_a_stable_system_stays_in_the_source_hull(stable, tiny_budget):
    cloud = reach_set(stable, box([-1.0], [1.0]), 2.0, tiny_budget)
    assert cloud.verdict.is_supported
    assert cloud.horizon == 2.0
    assert np.all(np.abs(cloud.points) <= 1.0)
    assert np.all(cloud.point_times <= 2.0 + 1e-12)
    assert cloud.inflation > 0


def test_reach_set_blowup_is_falsified(unstable, tiny_budget):
    cloud = reach_set(unstable, box([0.5], [1.0]), 30.0, tiny_budget)
    assert cloud.verdict.is_falsified
    assert cloud.verdict.witness.time <= 30.0


def test_reach_set_rejects_bad_input(stable, tiny_budget):
    with pytest.raises(InputError):
        reach_set(stable, box([-1.0], [1.0]), -1.0, tiny_budget)
    with pytest.raises(InputError):
        reach_set(stable, box([-1.0, -1.0], [1.0, 1.0]), 1.0, tiny_budget)


def test_coverage_radius_is_three_median_spacings():
    assert coverage_radius(np.arange(10, dtype=float).reshape(-1, 1)) == pytest.approx(3.0)
    assert coverage_radius(np.zeros((1, 2))) == 0.0


# -----------------------------------------------------------------------------
# Prolongations
# -----------------------------------------------------------------------------

def test_a_eps_of_a_decaying_system(stable, origin1, tiny_budget):
    cloud = a_eps(stable, origin1, 0.5, tiny_budget)
    assert cloud.verdict.is_supported
    assert cloud.horizon == pytest.approx(1.0)
    assert np.all(np.abs(cloud.points) < 0.5)
    lo, hi = cloud.outer_box()
    assert cloud.offset_bound() == pytest.approx(max(abs(lo[0]), abs(hi[0])))
    assert cloud.summary()["offset_bound"] == cloud.offset_bound()


def test_a_eps_without_return_is_inconclusive(unstable, origin1, tiny_budget):
    cloud = a_eps(unstable, origin1, 0.5, tiny_budget)
    assert cloud.verdict.status == VerdictStatus.INCONCLUSIVE
    assert cloud.horizon == tiny_budget.horizon


def test_a_eps_needs_a_positive_radius(stable, origin1, tiny_budget):
    with pytest.raises(InputError):
        a_eps(stable, origin1, 0.0, tiny_budget)


@pytest.mark.parametrize("schedule", [[0.4, 0.2], [0.4, 0.4, 0.1], [0.4, 0.2, 0.0]])
def test_p_plus_schedule_validation(stable, origin1, tiny_budget, schedule):
    with pytest.raises(InputError):
        p_plus(stable, origin1, schedule, tiny_budget)


def test_p_plus_of_a_decaying_system_shrinks_to_the_origin(stable, origin1):
    cloud = p_plus(stable, origin1, [0.4, 0.2, 0.1], WIDE)
    assert cloud.verdict.is_supported
    assert cloud.cell_size is not None
    assert len(cloud.points) > 0
    assert np.all(np.abs(cloud.points) <= 0.1 + 2 * cloud.cell_size)
    assert any("sup distance" in note for note in cloud.notes)


def test_prolongation_gaps_shrink_with_eps():
    clouds = [_cloud([0.0, 0.2], 0.2), _cloud([0.0, 0.4], 0.4)]
    result = check_prolongation_continuity(clouds, _cloud([0.0], 0.1))
    assert result.eps == [0.4, 0.2]
    assert result.gaps == pytest.approx([0.4, 0.2])
    assert result.nonincreasing
    assert result.final_gap == pytest.approx(0.2)


# -----------------------------------------------------------------------------
# Robust forward completeness
# -----------------------------------------------------------------------------

def test_rfc_envelope_of_a_decaying_system(stable, small_budget):
    env = estimate_rfc(stable, [0.0, 0.5, 1.0, 2.0], [0.0, 1.0, 2.0], small_budget)
    mu = np.asarray(env.mu.values)
    assert env.verdict.is_supported
    assert np.all(mu[0] == 0.0)
    for k, r in enumerate(env.r_grid):
        assert np.all(mu[k] <= r + 1e-9)
    assert mu[3, 0] >= 1.8
    assert np.all(np.diff(mu, axis=0) >= 0)
    assert np.all(np.diff(mu, axis=1) >= 0)


def test_rfc_blowup_is_falsified(unstable, tiny_budget):
    env = estimate_rfc(unstable, [1.0], [10.0, 30.0], tiny_budget)
    assert env.verdict.is_falsified


@pytest.mark.parametrize("r_grid,t_grid", [([1.0, 0.5], [1.0]), ([-1.0], [1.0]), ([], [1.0]), ([1.0], [2.0, 1.0])])
def test_rfc_grid_validation(stable, tiny_budget, r_grid, t_grid):
    with pytest.raises(InputError):
        estimate_rfc(stable, r_grid, t_grid, tiny_budget)


# -----------------------------------------------------------------------------
# Invariance probes and witnesses
# -----------------------------------------------------------------------------

def test_decaying_cloud_is_forward_invariant(stable, origin1):
    cloud = a_eps(stable, origin1, 0.5, WIDE)
    probe = probe_invariance(cloud, stable, WIDE, probes=64)
    assert probe.fraction == 1.0
    assert probe.failures == 0
    assert probe.witness is None


def test_growing_cloud_is_not_invariant(unstable, tiny_budget):
    cloud = reach_set(unstable, box([0.5], [1.0]), 1.0, tiny_budget)
    probe = probe_invariance(cloud, unstable, tiny_budget)
    assert probe.fraction < 1.0
    assert probe.witness is not None


def test_worst_excursion_witness_points_at_the_largest_state(stable):
    d = DisturbanceSignal.constant([0.0], 0.25)
    batch = simulate_batch(stable, [[1.0], [-2.0]], [d], [0.0, 1.0], 1e-9)
    witness = worst_excursion_witness(batch, origin(1))
    assert witness.state == [-2.0]
    assert witness.time == 0.0
    assert witness.value == pytest.approx(2.0)


# -----------------------------------------------------------------------------
# Analyzer dispatch
# -----------------------------------------------------------------------------

def test_analyzer_dispatches_operations(stable, tiny_budget):
    analyzer = ReachAnalyzer()
    out = asyncio.run(analyzer.process({"operation": "reach_set", "system": stable, "S": box([-1.0], [1.0]),
                                        "T": 1.0, "budget": tiny_budget}))
    assert out["operation"] == "reach_set"
    assert out["result"].verdict.is_supported
    assert analyzer.history == [{"operation": "reach_set"}]


def test_analyzer_rejects_unknown_operations():
    with pytest.raises(InputError, match="no operation"):
        asyncio.run(ReachAnalyzer().process({"operation": "nope"}))
