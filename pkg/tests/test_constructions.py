"""τ smoothing, σ from the RFC envelope and KL envelopes."""

import asyncio
import math

import numpy as np
import pytest

from core.errors import ConstructionRefused, InputError
from core.reports import RfcEnvelope
from core.sets import origin
from core.tables import KLEnvelope, MonotoneGrid, MonotoneTable, TauTable
from core.verdict import Budget, Verdict, Witness
from dynamics.integrator import simulate_batch
from dynamics.signals import DisturbanceSignal
from tools.construction_tool import (
    ConstructionTool,
    kl_envelope,
    lagrange_sigma,
    radial_tau,
    smooth_tau,
    validate_envelope,
)

EPS = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6]
ROW_TIMES = [5.0, 4.0, 3.0, 2.0, 1.0, 0.5]
IDENTITY = MonotoneTable(breakpoints=[0.0, 1.0, 2.0], values=[0.0, 1.0, 2.0])


def _staircase_tau() -> TauTable:
    return TauTable.from_values(EPS, [1.0, 2.0], [[t, t] for t in ROW_TIMES], kind="last_exit")


def _decay_envelope(scale: float) -> KLEnvelope:
    t = np.linspace(0.0, 4.0, 9)
    r = np.array([0.0, 0.5, 1.0])
    beta = scale * r[:, None] * np.exp(-t)[None, :]
    return KLEnvelope(r_grid=r.tolist(), t_grid=t.tolist(), beta=beta.tolist(), offset_c=0.0)


# -----------------------------------------------------------------------------
# τ smoothing
# -----------------------------------------------------------------------------

def test_smoothing_averages_over_the_doubling_window():
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0, 4.0, 8.0], [[1.0, 2.0, 4.0, 8.0]] * 2)
    smoothed = smooth_tau(tau).smoothed.array()
    for j, R in enumerate([1.0, 2.0, 4.0]):
        assert smoothed[:, j] == pytest.approx([1.5 * R, 1.5 * R], rel=1e-6)
    assert smoothed[:, 3] == pytest.approx([12.0, 12.0], rel=1e-6)


def test_smoothing_continues_past_the_smallest_eps():
    eps = [0.1, 0.2, 0.4]
    tau = TauTable.from_values(eps, [1.0], [[1.0 / e] for e in eps])
    smoothed = smooth_tau(tau).smoothed.array()[:, 0]
    assert smoothed[0] == pytest.approx(20.0 * math.log(2.0), rel=1e-3)
    for e, value in zip(eps, smoothed):
        assert value >= (2.0 / e) * math.log(2.0) * (1 - 1e-6)


def test_smoothing_continues_past_the_largest_radius():
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0], [[1.0, 2.0], [1.0, 2.0]])
    smoothed = smooth_tau(tau).smoothed.array()
    assert smoothed[:, 0] == pytest.approx([1.5, 1.5], rel=1e-6)
    assert smoothed[:, 1] == pytest.approx([3.0, 3.0], rel=1e-6)


def test_radial_tau_reads_past_the_grid():
    tau = TauTable.from_values([0.5, 1.0], [1.0, 2.0], [[1.0, 2.0], [1.0, 2.0]])
    assert radial_tau(tau, 2.0) == pytest.approx(3.0, rel=1e-6)


def test_smoothing_never_undercuts_the_raw_table():
    tau = _staircase_tau()
    smoothed = smooth_tau(tau)
    assert np.all(smoothed.smoothed.array() >= tau.raw_array())
    assert smoothed.table is smoothed.smoothed


def test_constant_table_is_a_fixed_point():
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0], [[3.0, 3.0], [3.0, 3.0]])
    assert np.allclose(smooth_tau(tau).smoothed.array(), 3.0)


def test_smoothing_rejects_infinite_entries():
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0], [[math.inf, math.inf], [1.0, 2.0]])
    with pytest.raises(InputError):
        smooth_tau(tau)


def test_radial_tau_of_a_constant_table():
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0], [[2.0, 2.0], [2.0, 2.0]])
    assert radial_tau(tau, 1.0) == pytest.approx(2.0)


# -----------------------------------------------------------------------------
# σ from μ
# -----------------------------------------------------------------------------

def test_lagrange_sigma_from_a_synthetic_rfc_envelope():
    mu = MonotoneGrid(rows=[0.0, 1.0, 2.0], cols=[0.0, 1.0, 2.0],
                      values=[[0.1, 0.1, 0.1], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    env = RfcEnvelope(mu=mu, verdict=Verdict.supported(Budget()))
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0], [[1.0, 1.0], [1.0, 1.0]])
    cert = lagrange_sigma(env, tau)
    assert cert.offset_c == pytest.approx(0.1)
    assert cert.sigma(1.0) == pytest.approx(0.9)
    assert cert.flag is None


def test_lagrange_sigma_flags_a_short_time_grid():
    mu = MonotoneGrid(rows=[0.0, 1.0], cols=[0.0, 1.0], values=[[0.0, 0.0], [1.0, 1.0]])
    env = RfcEnvelope(mu=mu, verdict=Verdict.supported(Budget()))
    tau = TauTable.from_values([0.1, 0.2], [1.0, 2.0], [[5.0, 5.0], [5.0, 5.0]])
    cert = lagrange_sigma(env, tau)
    assert "exceeds the μ time grid" in cert.flag


# -----------------------------------------------------------------------------
# KL envelopes
# -----------------------------------------------------------------------------

def test_envelope_levels_halve_along_the_knots():
    env = kl_envelope(IDENTITY, 0.0, _staircase_tau(), [1.0, 2.0])
    knots = env.knots[0]
    assert knots.levels[0] == knots.levels[1] == pytest.approx(1.0)
    ratios = np.asarray(knots.levels[2:]) / np.asarray(knots.levels[1:-1])
    assert np.allclose(ratios, 0.5)
    assert np.all(np.diff(knots.times) > 0)
    assert knots.times[1] == pytest.approx(2.0, abs=1e-5)


def test_envelope_grid_starts_with_a_zero_row():
    env = kl_envelope(IDENTITY, 0.25, _staircase_tau(), [1.0, 2.0])
    assert env.r_grid == [0.0, 1.0, 2.0]
    assert np.all(env.beta_array()[0] == 0.0)
    assert float(env.beta_at(1.0, 0.0)) == pytest.approx(1.0)
    assert float(env.bound(1.0, 0.0)) == pytest.approx(1.25)
    beta = env.beta_array()
    assert np.all(np.diff(beta, axis=0) >= 0)
    assert np.all(np.diff(beta, axis=1) <= 1e-12)


def test_envelope_is_refused_without_a_usable_tau():
    witness = Witness(state=[1.0], grid_step=0.1, time=1.0)
    with pytest.raises(ConstructionRefused):
        kl_envelope(IDENTITY, 0.0, _staircase_tau(), [1.0], Verdict.falsified(witness, Budget(), "escape"))
    infinite = TauTable.from_values([0.1, 0.2], [1.0], [[math.inf], [1.0]])
    with pytest.raises(ConstructionRefused):
        kl_envelope(IDENTITY, 0.0, infinite, [1.0])
    with pytest.raises(InputError):
        kl_envelope(IDENTITY, 0.0, _staircase_tau(), [])


def test_validation_against_exponential_decay(stable):
    times = np.linspace(0.0, 4.0, 9)
    batch = simulate_batch(stable, [[1.0], [-0.5]], [DisturbanceSignal.constant([0.0], 0.5)], times, 1e-9)
    ok = validate_envelope(_decay_envelope(1.01), origin(1), batch)
    assert ok.pass_fraction == 1.0
    assert ok.failures == 0
    assert ok.worst_excess == 0.0
    bad = validate_envelope(_decay_envelope(0.5), origin(1), batch)
    assert bad.failures > 0
    assert bad.worst_excess > 0.0


# -----------------------------------------------------------------------------
# Tool wrapper
# -----------------------------------------------------------------------------

def test_tool_reports_status():
    tool = ConstructionTool()
    ok = asyncio.run(tool.run("kl_envelope", sigma=IDENTITY, c=0.0, tau=_staircase_tau(), delta_grid=[1.0]))
    assert ok["status"] == "success"
    assert isinstance(ok["result"], KLEnvelope)
    infinite = TauTable.from_values([0.1, 0.2], [1.0], [[math.inf], [1.0]])
    refused = asyncio.run(tool.run("kl_envelope", sigma=IDENTITY, c=0.0, tau=infinite, delta_grid=[1.0]))
    assert refused["status"] == "refused"
    assert asyncio.run(tool.run("nope"))["status"] == "error"
    bad = asyncio.run(tool.run("kl_envelope", sigma=IDENTITY, c=0.0, tau=_staircase_tau(), delta_grid=[]))
    assert bad["status"] == "error"
