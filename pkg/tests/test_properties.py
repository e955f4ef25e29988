"""Stability predicates on systems with known answers."""

import asyncio
import math

import numpy as np
import pytest

from analyzers.property_analyzer import (
    SWEEP_FACTOR,
    PropertyAnalyzer,
    check_lagrange,
    check_recurrence,
    check_robust_invariance,
    check_ugs,
    check_uls,
    check_uniform_ultimate_boundedness,
    check_weak_attractivity,
    cross_check_pugas,
    cross_check_ugas,
    estimate_tau_ugatt,
    estimate_tau_uniform_weak,
    excursion_profile,
    fit_pugas_envelope,
    fit_ugas_envelope,
    rfc_time_grid,
    sigma_for_origin,
    sweep_robust_invariance,
)
from core.errors import InputError
from core.reports import LagrangeCertificate, PropertyKind, build_report
from core.sets import box, origin
from core.tables import MonotoneTable
from core.verdict import Budget, Verdict, VerdictStatus, Witness
from dynamics.measures import simulate_from
from dynamics.systems import LinearSystem, OdeSystem, builtin, builtin_family

STRESS = Budget(samples=16, signals=4, horizon=10.0, tol=1e-8, seed=7, search_evaluations=32)
SWEEP = Budget(samples=16, signals=8, horizon=4.0, tol=1e-7, seed=1)


def _linear_growth(M: float) -> OdeSystem:
    return OdeSystem.from_expressions(["d1*x1"], [-M], [M], name=f"growth({M:g})")


# -----------------------------------------------------------------------------
# Lagrange, ULS and UGS
# -----------------------------------------------------------------------------

def test_lagrange_bound_dominates_the_sampled_sups(stable, origin1, small_budget):
    report = check_lagrange(stable, origin1, [0.5, 1.0, 2.0], small_budget)
    assert report.verdict.is_supported
    cert = report.certificates.lagrange
    for r, sup in zip(cert.radii, cert.raw):
        assert sup <= r
        assert cert.bound(r) >= sup - 1e-12
    assert cert.offset_c >= 0.0


def test_lagrange_bound_is_built_from_rfc_and_tau(stable, origin1, small_budget):
    report = check_lagrange(stable, origin1, [0.5, 1.0, 2.0], small_budget)
    cert = report.certificates.lagrange
    assert cert.sigma.label == "constructed"
    assert cert.offset_c == pytest.approx(0.0, abs=1e-9)
    constructed = report.diagnostics["constructed_raw"]
    assert set(constructed) == {0.0, 0.5, 1.0, 2.0}
    for r in (0.5, 1.0, 2.0):
        assert constructed[r] >= 0.9 * r
        assert cert.bound(r) >= constructed[r] - 1e-9


def test_lagrange_without_attraction_falls_back_to_the_sampled_fit(small_budget):
    rotation = LinearSystem("rotation", [[0.0, -1.0], [1.0, 0.0]])
    report = check_lagrange(rotation, origin(2), [0.5, 1.0], small_budget)
    assert report.verdict.is_supported
    cert = report.certificates.lagrange
    assert cert.sigma.label == "sampled"
    assert any("construction stopped at UGATT" in note for note in report.notes)
    for r, sup in zip(cert.radii, cert.raw):
        assert cert.bound(r) >= sup - 1e-12


def test_lagrange_falsified_by_growth(unstable, origin1, small_budget):
    report = check_lagrange(unstable, origin1, [0.5, 1.0], small_budget)
    assert report.verdict.is_falsified
    assert report.verdict.witness is not None
    assert report.certificates is None


def test_sigma_for_origin_shifts_by_the_set_norm():
    sigma = MonotoneTable(breakpoints=[0.0, 1.0, 2.0], values=[0.0, 1.0, 2.0])
    cert = LagrangeCertificate(sigma=sigma, offset_c=0.5, radii=[1.0, 2.0], raw=[1.5, 2.5])
    converted = sigma_for_origin(cert, box([-1.0], [1.0]))
    assert converted.offset_c == pytest.approx(3.5)
    assert converted.sigma(1.0) == pytest.approx(2.0)
    assert converted.radii == [0.5, 1.0]


def test_uls_delta_equals_eps_for_a_contraction(stable, origin1, small_budget):
    report = check_uls(stable, origin1, [0.1, 0.2], small_budget)
    assert report.verdict.is_supported
    assert report.certificates.delta(0.1) == pytest.approx(0.1)
    assert report.certificates.delta(0.2) == pytest.approx(0.2)


def test_uls_falsified_when_no_delta_keeps_excursions_small(unstable, origin1, small_budget):
    report = check_uls(unstable, origin1, [0.1], small_budget)
    assert report.verdict.is_falsified
    assert report.verdict.witness.value > 0.1


def test_uls_rejects_eps_below_delta_min(stable, origin1, small_budget):
    with pytest.raises(InputError):
        check_uls(stable, origin1, [1e-6, 0.1], small_budget)


def test_ugs_audits_both_conjuncts(stable, origin1, small_budget):
    report = check_ugs(stable, origin1, [0.1, 0.2], [0.5, 1.0], small_budget)
    assert report.property == PropertyKind.UGS
    assert report.verdict.is_supported
    assert report.diagnostics["conjunction"] == {"ULS": "SupportedUpTo", "Lagrange": "SupportedUpTo"}
    assert report.certificates.delta is not None
    assert report.certificates.lagrange is not None


def test_ugs_inherits_a_falsified_conjunct(unstable, origin1, small_budget):
    report = check_ugs(unstable, origin1, [0.1], [0.5, 1.0], small_budget)
    assert report.verdict.is_falsified


# -----------------------------------------------------------------------------
# Attractivity
# -----------------------------------------------------------------------------

def test_weak_attractivity_entry_time(stable, origin1, small_budget):
    report = check_weak_attractivity(stable, origin1, 0.1, small_budget, radius=1.0)
    assert report.verdict.is_supported
    t = report.certificates.values["max_entry_time"]
    assert math.log(9.0) - 0.05 <= t <= math.log(10.0) + 1e-3


def test_weak_attractivity_outcomes(unstable, origin1, small_budget):
    assert check_weak_attractivity(unstable, origin1, 0.1, small_budget).verdict.is_falsified
    slow = check_weak_attractivity(builtin("spiral"), origin(2), 0.1, small_budget)
    assert slow.status == VerdictStatus.INCONCLUSIVE


def test_uniform_weak_tau_table(stable, origin1, small_budget):
    report = estimate_tau_uniform_weak(stable, origin1, [0.1, 0.2], [1.0, 2.0], small_budget, stress=False)
    assert report.verdict.is_supported
    tau = report.certificates.tau.raw_array()
    assert tau[0, 1] == pytest.approx(math.log(20.0), abs=0.15)
    assert tau[0, 1] <= math.log(20.0) + 1e-3
    assert np.all(np.diff(tau, axis=0) <= 0)
    assert np.all(np.diff(tau, axis=1) >= 0)


def test_stressed_tau_table_is_never_smaller(stable, origin1):
    plain = estimate_tau_uniform_weak(stable, origin1, [0.1, 0.2], [1.0, 2.0], STRESS, stress=False)
    stressed = estimate_tau_uniform_weak(stable, origin1, [0.1, 0.2], [1.0, 2.0], STRESS, stress=True)
    assert stressed.verdict.is_supported
    assert np.all(stressed.certificates.tau.raw_array() >= plain.certificates.tau.raw_array() - 1e-12)


def test_ugatt_on_a_contraction_has_no_reexits(stable, origin1, small_budget):
    report = estimate_tau_ugatt(stable, origin1, [0.1, 0.2], [1.0, 2.0], small_budget)
    assert report.verdict.is_supported
    assert report.certificates.tau.kind == "last_exit"
    assert not np.any(report.diagnostics["reexits"])
    assert report.certificates.values["max_tau"] <= math.log(20.0) + 1e-3


def test_first_entry_tau_never_exceeds_last_exit_tau(stable, origin1, small_budget):
    weak = estimate_tau_uniform_weak(stable, origin1, [0.1, 0.2], [1.0, 2.0], small_budget, stress=False)
    ugatt = estimate_tau_ugatt(stable, origin1, [0.1, 0.2], [1.0, 2.0], small_budget)
    assert np.all(weak.certificates.tau.raw_array() <= ugatt.certificates.tau.raw_array() + 1e-9)


def test_spiral_reenters_a_box_before_its_last_exit(small_budget):
    spiral, square = builtin("spiral"), box([-1.0, -1.0], [1.0, 1.0])
    ugatt = estimate_tau_ugatt(spiral, square, [0.05], [0.5], small_budget)
    assert ugatt.verdict.is_supported
    assert np.any(ugatt.diagnostics["reexits"])
    assert any("re-exit events" in note for note in ugatt.notes)
    last = ugatt.certificates.tau.raw_array()
    assert np.asarray(ugatt.diagnostics["first_entry"])[0, 0] < last[0, 0]
    weak = estimate_tau_uniform_weak(spiral, square, [0.05], [0.5], small_budget, stress=False)
    assert np.all(weak.certificates.tau.raw_array() <= last + 1e-9)


def test_ugatt_is_inconclusive_for_slow_decay(small_budget):
    report = estimate_tau_ugatt(builtin("spiral"), origin(2), [0.1], [1.0], small_budget)
    assert report.status == VerdictStatus.INCONCLUSIVE


def test_ugatt_falsified_by_growth(unstable, origin1, small_budget):
    assert estimate_tau_ugatt(unstable, origin1, [0.1], [1.0], small_budget).verdict.is_falsified


# -----------------------------------------------------------------------------
# Boundedness, robust invariance and recurrence
# -----------------------------------------------------------------------------

def test_ultimate_bound_sits_on_the_quarter_octave_grid(stable, small_budget):
    report = check_uniform_ultimate_boundedness(stable, [1.0, 4.0], small_budget)
    assert report.verdict.is_supported
    cert = report.certificates.boundedness
    tail = report.diagnostics["tail_sup"]
    assert cert.bound_k >= tail
    assert cert.bound_k <= max(tail * 2.0 ** 0.25, 1.0 / 64.0) + 1e-12
    k = 4.0 * math.log2(cert.bound_k * 64.0)
    assert k == pytest.approx(round(k), abs=1e-9)
    assert all(math.isfinite(t) for t in cert.settle_times)


def test_ultimate_boundedness_falsified_by_growth(unstable, small_budget):
    assert check_uniform_ultimate_boundedness(unstable, [1.0], small_budget).verdict.is_falsified


def test_robust_invariance_of_a_contraction(stable, origin1, small_budget):
    report = check_robust_invariance(stable, origin1, [0.1, 0.2], [1.0, 5.0], small_budget)
    assert report.verdict.is_supported
    assert np.allclose(report.certificates.robust_delta.array(), [[0.1, 0.1], [0.2, 0.2]])


def test_robust_delta_shrinks_with_growth(unstable, origin1, small_budget):
    report = check_robust_invariance(unstable, origin1, [0.1], [1.0, 5.0], small_budget)
    assert report.verdict.is_supported
    delta = report.certificates.robust_delta.array()
    assert delta[0, 1] <= 0.1 * math.exp(-5.0) / 0.9
    assert delta[0, 1] <= delta[0, 0]


def test_non_invariant_set_is_inconclusive(stable, small_budget):
    report = check_robust_invariance(stable, box([0.5], [1.0]), [0.1], [1.0], small_budget)
    assert report.status == VerdictStatus.INCONCLUSIVE
    assert report.verdict.note == "A not invariant"


def test_excursion_profile(stable, origin1, small_budget):
    profile = excursion_profile(stable, origin1, [0.5, 1.0], 1.0, small_budget)
    assert profile.breakpoints == [0.0, 0.5, 1.0]
    assert profile.values[0] == 0.0
    assert profile.values[1] < 0.5
    assert profile.values[2] < 1.0
    with pytest.raises(InputError):
        excursion_profile(stable, origin1, [0.5], 0.0, small_budget)


def test_sweep_falsifies_shrinking_robustness(origin1):
    report = sweep_robust_invariance(_linear_growth, [0.1, 1.5], origin1, 0.5, 2.0, SWEEP)
    assert report.verdict.is_falsified
    assert report.diagnostics["ratio"] >= 5.0
    assert report.diagnostics["M"] == [0.1, 1.5]


def test_sweep_of_a_uniformly_contracting_family(origin1):
    report = sweep_robust_invariance(builtin_family("scalar_nonuniform"), [1.0, 4.0], origin1, 0.5, 2.0, SWEEP)
    assert report.verdict.is_supported
    assert report.diagnostics["ratio"] == pytest.approx(1.0)


def test_sweep_needs_two_bounds(origin1):
    with pytest.raises(InputError):
        sweep_robust_invariance(_linear_growth, [1.0], origin1, 0.5, 2.0, SWEEP)


def test_recurrence_into_a_box(stable, small_budget):
    report = check_recurrence(stable, box([-0.5], [0.5]), uniform=True, budget=small_budget, radius_grid=[1.0, 2.0])
    assert report.property == PropertyKind.UNIFORMLY_GLOBALLY_RECURRENT
    assert report.verdict.is_supported
    assert report.certificates.values["max_entry_time"] <= math.log(5.0) + 1e-3
    assert report.certificates.recurrence is not None


def test_recurrence_into_a_point_uses_a_wrap_radius(stable, origin1, small_budget):
    report = check_recurrence(stable, origin1, budget=small_budget, radius_grid=[1.0])
    assert report.property == PropertyKind.GLOBALLY_RECURRENT
    assert report.verdict.is_supported
    assert any("empty interior" in note for note in report.notes)
    assert report.certificates.recurrence is None


def test_recurrence_falsified_by_growth(unstable, small_budget):
    report = check_recurrence(unstable, box([-0.5], [0.5]), budget=small_budget, radius_grid=[1.0])
    assert report.verdict.is_falsified


# -----------------------------------------------------------------------------
# Envelopes and equivalence cross-checks
# -----------------------------------------------------------------------------

def test_rfc_time_grid():
    grid = rfc_time_grid(Budget(horizon=8.0))
    assert len(grid) == 33
    assert grid[0] == 0.0 and grid[-1] == 8.0


def test_pugas_envelope_of_a_contraction(stable, origin1, small_budget):
    report = fit_pugas_envelope(stable, origin1, small_budget, [0.5, 1.0])
    assert report.verdict.is_supported
    assert report.certificates.envelope.offset_c == pytest.approx(0.0, abs=1e-12)
    assert report.diagnostics["pass_fraction"] >= 0.99
    assert report.diagnostics["validation_seed"] == small_budget.seed + 977


def test_pugas_envelope_stresses_its_tau_table(stable, origin1):
    plain = fit_pugas_envelope(stable, origin1, STRESS, [0.5, 1.0], stress=False)
    stressed = fit_pugas_envelope(stable, origin1, STRESS, [0.5, 1.0])
    assert stressed.verdict.is_supported
    assert np.all(stressed.certificates.tau.raw_array() >= plain.certificates.tau.raw_array() - 1e-12)


def test_pugas_envelope_refused_for_growth(unstable, origin1, small_budget):
    report = fit_pugas_envelope(unstable, origin1, small_budget, [0.5, 1.0])
    assert not report.verdict.is_supported
    assert report.diagnostics["stage"] == "tau"


def test_ugas_envelope_of_a_contraction(stable, origin1, small_budget):
    report = fit_ugas_envelope(stable, origin1, small_budget, [0.5, 1.0])
    assert report.property == PropertyKind.UGAS
    assert report.verdict.is_supported


def test_ugas_envelope_inherits_a_uls_violation(stable, origin1, small_budget):
    witness = Witness(state=[0.1], grid_step=0.25, tail=[0.0], time=1.0)
    uls = build_report(PropertyKind.ULS, Verdict.falsified(witness, small_budget, "escape"), origin1)
    report = fit_ugas_envelope(stable, origin1, small_budget, [0.5, 1.0], uls=uls)
    assert report.verdict.is_falsified
    assert report.diagnostics == {"stage": "ULS"}


@pytest.mark.slow
def test_pugas_cross_check_on_a_contraction(stable, origin1, small_budget):
    result = cross_check_pugas(stable, origin1, small_budget, [0.5, 1.0], [0.1, 0.2])
    assert result.theorem == "pUGAS"
    assert [item.name for item in result.items] == ["i", "ii", "iii", "iv", "v"]
    assert result.consistent
    assert result.status_of("i") == VerdictStatus.SUPPORTED


@pytest.mark.slow
def test_ugas_cross_check_on_growth(unstable, origin1, small_budget):
    result = cross_check_ugas(unstable, origin1, small_budget, [0.5, 1.0], [0.1, 0.2], [1.0])
    assert result.consistent
    assert all(item.status != VerdictStatus.SUPPORTED for item in result.items)
    assert result.status_of("i") == VerdictStatus.FALSIFIED


# -----------------------------------------------------------------------------
# Planar system with a non-robust equilibrium
# -----------------------------------------------------------------------------

def test_planar_counterexample_keeps_x_below_max_r_1(small_budget):
    planar = builtin("planar_counterexample(4)")
    radii = [0.5, 1.0, 2.0]
    slack = 0.05
    report = check_lagrange(planar, origin(2), radii, small_budget)
    assert report.verdict.is_supported
    cert = report.certificates.lagrange
    for r, sup in zip(cert.radii, cert.raw):
        assert sup <= max(r, 1.0) + r + slack
        assert cert.bound(r) >= sup - 1e-12
    for k, r in enumerate(radii):
        batch = simulate_from(planar, origin(2), r, small_budget, offset=k)
        assert np.nanmax(np.abs(batch.states[..., 0])) <= max(r, 1.0) + slack


@pytest.mark.slow
def test_planar_counterexample_loses_robustness_as_the_bound_grows():
    report = sweep_robust_invariance(builtin_family("planar_counterexample"), [1.0, 1000.0], origin(2), 0.5, 2.0,
                                     SWEEP)
    assert report.verdict.is_falsified
    assert report.diagnostics["ratio"] >= SWEEP_FACTOR
    assert report.verdict.witness is not None


# -----------------------------------------------------------------------------
# Analyzer dispatch
# -----------------------------------------------------------------------------

def test_property_analyzer_dispatch(stable, origin1, small_budget):
    out = asyncio.run(PropertyAnalyzer().process({
        "operation": "check_lagrange", "system": stable, "A": origin1, "r_grid": [1.0], "budget": small_budget}))
    assert out["result"].verdict.is_supported


@pytest.mark.parametrize("grid", [[], [0.0, 1.0], [1.0, 1.0]])
def test_property_grids_are_validated(stable, origin1, small_budget, grid):
    with pytest.raises(InputError):
        check_lagrange(stable, origin1, grid, small_budget)


def test_target_dimension_must_match(stable, small_budget):
    with pytest.raises(InputError):
        check_lagrange(stable, origin(2), [1.0], small_budget)
