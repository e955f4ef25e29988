"""Signals, systems, expressions, flows, axiom audits and trajectory measurements."""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from core.errors import BlowUp, InputError
from core.sets import box, origin
from core.verdict import Witness
from dynamics.axioms import check_axioms
from dynamics.expressions import Expression, ExpressionRhs
from dynamics.integrator import flow, simulate_batch
from dynamics.measures import (
    divergent,
    entry_time_of,
    first_entry_times,
    last_exit_times,
    record_times,
    reexit_counts,
    refine_crossing,
)
from dynamics.signals import DisturbanceSignal, SignalStrategy, concatenate, sample_signals
from dynamics.systems import (
    PROPAGATOR_CACHE,
    LinearSystem,
    OdeSystem,
    builtin,
    builtin_family,
    exponential_stability,
    list_systems,
)


def _zero(step: float = 0.25) -> DisturbanceSignal:
    return DisturbanceSignal.constant([0.0], step)


# -----------------------------------------------------------------------------
# Signals
# -----------------------------------------------------------------------------

def test_signal_values_on_and_after_the_grid():
    d = DisturbanceSignal(grid_step=0.5, values=[[1.0], [2.0], [3.0]], tail=[4.0])
    assert d.value_at(0.0)[0] == 1.0
    assert d.value_at(0.5)[0] == 2.0
    assert d.value_at(1.49)[0] == 3.0
    assert d.value_at(10.0)[0] == 4.0
    assert d.shift(1.0).values == [[3.0]]
    with pytest.raises(InputError):
        d.shift(0.3)


def test_concatenation_switches_at_the_splice_time():
    first = DisturbanceSignal(grid_step=0.5, values=[[1.0], [1.0], [1.0]], tail=[1.0])
    second = DisturbanceSignal(grid_step=0.5, values=[[-1.0]], tail=[0.0])
    joined = concatenate(first, second, 1.0)
    assert joined.value_at(0.75)[0] == 1.0
    assert joined.value_at(1.0)[0] == -1.0
    assert joined.value_at(5.0)[0] == 0.0


@pytest.mark.parametrize("strategy", list(SignalStrategy))
def test_sampled_signals_stay_in_the_box_and_repeat_per_seed(strategy):
    D = box([-2.0], [1.0])
    a = sample_signals(D, 0.25, 2.0, 9, strategy, seed=11)
    b = sample_signals(D, 0.25, 2.0, 9, strategy, seed=11)
    assert len(a) == 9
    assert all(s.within(D) for s in a)
    assert [s.values for s in a] == [s.values for s in b]


def test_extreme_signals_only_take_box_corners():
    D = box([-1.0, 0.0], [1.0, 3.0])
    for s in sample_signals(D, 0.5, 2.0, 5, SignalStrategy.EXTREME, seed=2):
        vals = s.segment_array(4)
        assert np.all((vals[:, 0] == -1.0) | (vals[:, 0] == 1.0))
        assert np.all((vals[:, 1] == 0.0) | (vals[:, 1] == 3.0))


def test_mixed_signals_start_with_constant_vertices():
    signals = sample_signals(box([-1.0], [1.0]), 0.5, 2.0, 8, SignalStrategy.MIXED, seed=0)
    assert signals[0].values == [] and signals[0].tail == [-1.0]
    assert signals[1].values == [] and signals[1].tail == [1.0]


def test_signal_count_must_be_positive():
    with pytest.raises(InputError):
        sample_signals(box([0.0], [1.0]), 0.5, 1.0, 0)


# -----------------------------------------------------------------------------
# Expressions
# -----------------------------------------------------------------------------

@pytest.mark.parametrize("text,expected", [
    ("-x1^2", -9.0),
    ("2^3^2", 512.0),
    ("1 - 2 - 3", -4.0),
    ("8 / 2 / 2", 2.0),
    ("-(x1 - 1) * 2", -4.0),
    ("min(x1, d1) + max(x1, d1)", 1.0),
    ("abs(d1) + exp(0)", 3.0),
    ("cbrt_signed(-8)", -2.0),
    ("max(min(x1, 1), abs(d1))", 2.0),
])
def test_expression_precedence_and_functions(text, expected):
    value = Expression(text).of_states([[3.0]], [[-2.0]])
    assert value[0] == pytest.approx(expected)


def test_expressions_evaluate_row_wise():
    rhs = ExpressionRhs(["-x1 + d1", "x1*x2"], 1)
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = rhs(X, np.array([[0.5], [0.0]]))
    assert out.shape == (2, 2)
    assert np.allclose(out, [[-0.5, 2.0], [-3.0, 12.0]])


def test_scalar_comparison_expressions():
    assert np.allclose(Expression("r^2/2").of_scalar([0.0, 2.0]), [0.0, 2.0])
    assert Expression("s*t").variables == {"s", "t"}


@pytest.mark.parametrize("text", ["x1 +", "2 ** x1", "foo(x1)", "x0"])
def test_malformed_expressions_report_the_column(text):
    with pytest.raises(InputError, match="column"):
        Expression(text)


def test_undeclared_variables_are_rejected():
    with pytest.raises(InputError, match="x3"):
        ExpressionRhs(["-x1", "x3"], 1)
    with pytest.raises(InputError, match="d2"):
        ExpressionRhs(["-x1 + d2"], 1)


# -----------------------------------------------------------------------------
# Systems and the registry
# -----------------------------------------------------------------------------

def test_registry_lists_every_builtin():
    names = {entry.name for entry in list_systems()}
    assert names == {"planar_counterexample", "scalar_nonuniform", "scalar_cube", "linear_diag",
                     "linear_dense", "scalar_stable", "scalar_unstable", "spiral"}


def test_builtin_parameters():
    assert builtin("linear_diag(3)").dimension == 3
    planar = builtin("planar_counterexample(2)")
    lo, hi = planar.disturbance_box.outer_box()
    assert lo[0] == -2.0 and hi[0] == 2.0
    assert builtin("scalar_nonuniform").note() == "relative to D=[-1,1]"
    assert builtin_family("scalar_nonuniform")(3.0).disturbance_bound == 3.0


@pytest.mark.parametrize("name", ["nope", "linear_diag(2.5)", "scalar_cube(2)", "spiral(", "planar_counterexample(x)"])
def test_bad_builtin_names(name):
    with pytest.raises(InputError):
        builtin(name)


def test_only_disturbance_families_can_be_swept():
    with pytest.raises(InputError):
        builtin_family("linear_diag")


def test_linear_dense_is_stable_for_every_seed():
    for seed in range(5):
        assert builtin(f"linear_dense({seed})").spectral_abscissa() < 0


def test_exponential_stability_reports():
    spiral = exponential_stability(builtin("spiral"))
    assert spiral.spectral_abscissa == pytest.approx(-0.1)
    assert spiral.exponentially_stable
    assert spiral.overshoot >= 1.0 - 1e-12
    assert not exponential_stability(builtin("scalar_unstable")).exponentially_stable
    with pytest.raises(InputError):
        exponential_stability(builtin("scalar_cube"))


def test_propagator_cache_is_shared_safely_and_bounded():
    system = builtin("spiral")
    steps = [0.01 * (k + 1) for k in range(PROPAGATOR_CACHE + 8)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(system.propagator, steps * 3))
    for dt, P in zip(steps * 3, results):
        assert np.allclose(P, expm(system.matrix * dt))
    assert len(system._propagators) <= PROPAGATOR_CACHE


def test_linear_matrices_must_be_square():
    with pytest.raises(InputError):
        LinearSystem("bad", [[1.0, 2.0]])


def test_non_finite_right_hand_side_is_an_input_error():
    system = OdeSystem.from_expressions(["1/x1"], [0.0], [0.0])
    with pytest.raises(InputError):
        flow(system, 1.0, [0.0], _zero())


# -----------------------------------------------------------------------------
# Flows
# -----------------------------------------------------------------------------

@pytest.mark.parametrize("level,rate", [(0.0, 1.0), (1.0, 0.5), (-1.0, 0.5)])
def test_nonuniform_decay_matches_closed_form(level, rate):
    system = builtin("scalar_nonuniform")
    d = DisturbanceSignal.constant([level], 0.25)
    x = flow(system, 3.0, [2.0], d)
    assert x[0] == pytest.approx(2.0 * math.exp(-rate * 3.0), rel=1e-6)


def test_switching_signal_flow_matches_closed_form():
    system = builtin("scalar_nonuniform")
    d = DisturbanceSignal(grid_step=1.0, values=[[0.0], [1.0]], tail=[0.0])
    x = flow(system, 3.0, [1.0], d)
    assert x[0] == pytest.approx(math.exp(-1.0 - 0.5 - 1.0), rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(x0=st.floats(min_value=-5.0, max_value=5.0), t=st.floats(min_value=0.0, max_value=5.0))
def test_linear_flow_is_the_matrix_exponential(x0, t):
    x = flow(builtin("scalar_stable"), t, [x0], _zero())
    assert x[0] == pytest.approx(x0 * math.exp(-t), rel=1e-9, abs=1e-12)


def test_flow_at_time_zero_is_the_identity():
    x = flow(builtin("planar_counterexample"), 0.0, [0.3, -0.7], _zero())
    assert np.allclose(x, [0.3, -0.7])


def test_blowups_are_raised_by_single_flows():
    with pytest.raises(BlowUp):
        flow(builtin("scalar_unstable"), 30.0, [1.0], _zero())
    finite_escape = OdeSystem.from_expressions(["x1^2"], [0.0], [0.0])
    with pytest.raises(BlowUp) as info:
        flow(finite_escape, 2.0, [1.0], _zero(0.5))
    assert info.value.t_star <= 1.0 + 1e-3


def test_negative_flow_time_is_rejected():
    with pytest.raises(InputError):
        flow(builtin("scalar_stable"), -1.0, [1.0], _zero())


def test_batch_shape_and_job_independence():
    system = builtin("scalar_nonuniform")
    X0 = np.linspace(-2.0, 2.0, 40).reshape(-1, 1)
    signals = sample_signals(system.disturbance_box, 0.25, 2.0, 8, SignalStrategy.MIXED, seed=5)
    times = record_times(2.0, 0.25)
    serial = simulate_batch(system, X0, signals, times, 1e-8, jobs=1)
    threaded = simulate_batch(system, X0, signals, times, 1e-8, jobs=3)
    assert serial.shape == (40, 8, len(times))
    assert np.array_equal(serial.states, threaded.states)
    assert not serial.any_blowup


def test_batch_time_grid_must_start_at_zero():
    with pytest.raises(InputError):
        simulate_batch(builtin("scalar_stable"), [[1.0]], [_zero()], [0.5, 1.0], 1e-8)


def test_signals_outside_the_disturbance_box_are_rejected():
    with pytest.raises(InputError):
        simulate_batch(builtin("scalar_nonuniform"), [[1.0]], [DisturbanceSignal.constant([2.0], 0.25)],
                       [0.0, 1.0], 1e-8)


def test_tolerance_range_is_enforced():
    with pytest.raises(InputError):
        flow(builtin("scalar_nonuniform"), 1.0, [1.0], _zero(), tol=1e-2)


# -----------------------------------------------------------------------------
# Axiom audit
# -----------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["scalar_stable", "scalar_nonuniform", "spiral"])
def test_axioms_hold_within_integration_error(name):
    report = check_axioms(builtin(name), samples=10, tol=1e-9, seed=0)
    assert report.identity == 0.0
    assert report.causality <= 1e-12
    assert report.within(1e-6)
    assert report.skipped == 0


def test_axiom_audit_needs_ten_samples():
    with pytest.raises(InputError):
        check_axioms(builtin("scalar_stable"), samples=5)


# -----------------------------------------------------------------------------
# Measurements
# -----------------------------------------------------------------------------

def test_record_grid_has_four_points_per_segment():
    times = record_times(1.0, 0.25)
    assert len(times) == 17
    assert times[-1] == 1.0
    assert 0.3 in record_times(1.0, 0.25, extra=[0.3])


def test_entry_and_exit_times_on_a_known_profile():
    times = np.arange(6, dtype=float)
    dist = np.array([[3.0, 2.0, 0.5, 2.0, 0.5, 0.5],
                     [0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
                     [3.0, 3.0, 3.0, 3.0, 3.0, 3.0]])
    t_in, _ = first_entry_times(dist, times, 1.0)
    assert list(t_in) == [2.0, 0.0, np.inf]
    t_out, k = last_exit_times(dist, times, 1.0)
    assert list(t_out) == [4.0, 0.0, np.inf]
    assert list(k) == [3, -1, 5]
    assert list(reexit_counts(dist, 1.0)) == [1, 0, 0]


def test_doubling_test_flags_growth_and_blowups():
    times = np.linspace(0.0, 8.0, 9)
    dist = np.stack([np.exp(times), np.exp(-times), np.where(times < 8.0, 1.0, np.inf)])
    assert list(divergent(dist, times)) == [True, False, True]


@pytest.mark.parametrize("mode", ["enter", "exit"])
def test_crossing_refinement_brackets_the_exact_time(mode):
    system = builtin("scalar_stable")
    t = refine_crossing(system, np.array([math.exp(-0.5)]), _zero(), 0.5, 1.0, origin(1), 0.5, 1e-10, mode)
    assert math.log(2.0) - 1e-9 <= t <= math.log(2.0) + 1e-4


def test_entry_time_of_a_replayed_witness():
    witness = Witness(state=[1.0], grid_step=0.25, tail=[0.0], time=0.0)
    t = entry_time_of(builtin("scalar_stable"), witness, origin(1), 0.5, 4.0, 1e-10)
    assert t == pytest.approx(math.log(2.0), abs=1e-4)
    assert entry_time_of(builtin("scalar_unstable"), witness, origin(1), 0.5, 4.0, 1e-10) == math.inf
