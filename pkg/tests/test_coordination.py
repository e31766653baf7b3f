import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcoord import coordination as co, kernels, network as nw
from evcoord.errors import ContractError, InfeasibilityError
from evcoord.fleet import PowerBounds, Vehicle
from evcoord.metrics import ObjectiveContext, PenaltyKind, VoltageBand, global_objective

from _builders import random_context, slot_instance

ASYNC = co.PolicyConfig()
SYNC = co.PolicyConfig(schedule=co.Schedule.SYNCHRONOUS)


def one_pilot(v0, slopes, kind=PenaltyKind.QUADRATIC, band=VoltageBand()):
    n = len(slopes)
    ctx = ObjectiveContext(np.array([v0]), np.array([slopes]), (2,), tuple(range(3, 3 + n)), kind=kind, band=band)
    vehicles = [Vehicle(k + 1, 3 + k, 10.0, 24.0, 24.0, 3.3, 0, 20) for k in range(n)]
    return vehicles, ctx


def grid_oracle(base, slope, lo, hi, band, n=100_001):
    grid = np.linspace(lo, hi, n)
    v = base[None, :] + np.outer(grid, slope)
    f = (np.minimum(v - band.v_lo, 0) ** 2 + np.maximum(v - band.v_hi, 0) ** 2).sum(axis=1)
    return f.min()


def own_cost(base, slope, p, band):
    v = base + slope * p
    return float((np.minimum(v - band.v_lo, 0) ** 2 + np.maximum(v - band.v_hi, 0) ** 2).sum())


# --- best response ---------------------------------------------------------------

def test_best_response_unconstrained_takes_full_power():
    (v,), ctx = one_pilot(0.95, [-0.01])
    prof = co.ChargingProfile((1,), np.array([0.0]))
    assert co.best_response(v, prof, PowerBounds(0.0, 3.3), ctx) == 3.3


def test_best_response_stops_at_band_edge():
    (v,), ctx = one_pilot(0.92, [-0.01])
    prof = co.ChargingProfile((1,), np.array([0.0]))
    assert co.best_response(v, prof, PowerBounds(0.0, 3.3), ctx) == pytest.approx(2.0, abs=1e-12)
    # the floor wins over the band
    assert co.best_response(v, prof, PowerBounds(2.5, 3.3), ctx) == 2.5


def test_best_response_crenel_grid():
    (v,), ctx = one_pilot(0.92, [-0.01], kind=PenaltyKind.CRENEL)
    prof = co.ChargingProfile((1,), np.array([0.0]))
    p = co.best_response(v, prof, PowerBounds(0.0, 3.3), ctx, br_grid=331)
    assert 1.99 - 1e-12 <= p <= 2.0 + 1e-12
    # hopeless: every power leaves the pilot out of band, tie goes to the largest power
    (v,), ctx = one_pilot(0.85, [-0.01], kind=PenaltyKind.CRENEL)
    assert co.best_response(v, prof, PowerBounds(0.0, 3.3), ctx) == 3.3


def test_best_response_errors():
    (v,), ctx = one_pilot(0.95, [-0.01])
    prof = co.ChargingProfile((1,), np.array([0.0]))
    with pytest.raises(InfeasibilityError):
        co.best_response(v, prof, PowerBounds(2.0, 1.0), ctx)
    stranger = Vehicle(9, 30, 10.0, 24.0, 24.0, 3.3, 0, 20)
    with pytest.raises(ContractError):
        co.best_response(stranger, prof, PowerBounds(0.0, 3.3), ctx)


def test_quadratic_best_response_against_fine_grid():
    rng = np.random.default_rng(0)
    band = VoltageBand()
    for _ in range(20):
        m = int(rng.integers(1, 12))
        base = rng.uniform(0.8, 1.2, m)
        slope = -rng.uniform(0, 0.03, m)
        lo = float(rng.uniform(0, 2))
        hi = float(rng.uniform(lo, 3.3))
        p = kernels.quadratic_best_response(base, slope, band.v_lo, band.v_hi, lo, hi)
        assert lo <= p <= hi
        assert own_cost(base, slope, p, band) <= grid_oracle(base, slope, lo, hi, band) + 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), crenel=st.booleans())
def test_loop_and_vector_best_responses_agree(seed, crenel):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 10))
    base = rng.uniform(0.8, 1.2, m)
    slope = -rng.uniform(0, 0.03, m)
    lo = float(rng.uniform(0, 2))
    hi = float(rng.uniform(lo, 3.3))
    if crenel:
        a = kernels._crenel_br_loops.py_func(base, slope, 0.9, 1.1, lo, hi, 331)
        b = kernels._crenel_br_numpy(base, slope, 0.9, 1.1, lo, hi, 331)
        assert a == b
    else:
        a = kernels._quadratic_br_loops.py_func(base, slope, 0.9, 1.1, lo, hi)
        b = kernels._quadratic_br_numpy(base, slope, 0.9, 1.1, lo, hi)
        band = VoltageBand()
        assert abs(own_cost(base, slope, a, band) - own_cost(base, slope, b, band)) <= 1e-15


# --- dynamics ----------------------------------------------------------------------

def test_detect_cycle():
    a, b = np.array([1.0, 2.0]), np.array([0.0, 2.0])
    assert co.detect_cycle([a, b, a]) == 0
    assert co.detect_cycle([a, b]) is None
    assert co.detect_cycle([a, b, a + 1e-12]) == 0
    with pytest.raises(ContractError):
        co.detect_cycle([])


def test_single_vehicle_settles_within_two_rounds():
    vehicles, ctx = one_pilot(0.92, [-0.01])
    prof, trace, cause = co.run_slot_brd(vehicles, [PowerBounds(0.0, 3.3)], ctx, ASYNC)
    assert cause is co.TerminationCause.CONVERGED
    assert trace.rounds <= 2
    assert prof.p_kw[0] == pytest.approx(2.0, abs=1e-12)


def test_empty_slot():
    ctx = ObjectiveContext(np.array([1.0]), np.zeros((1, 0)), (2,), ())
    prof, trace, cause = co.run_slot_brd([], [], ctx, ASYNC)
    assert prof.p_kw.size == 0 and cause is co.TerminationCause.CONVERGED


def test_synchronous_antagonists_cycle():
    vehicles, ctx = one_pilot(0.95, [-0.01, -0.01])
    bounds = [PowerBounds(0.0, 3.3)] * 2
    prof, trace, cause = co.run_slot_brd(vehicles, bounds, ctx, SYNC)
    assert cause is co.TerminationCause.CYCLE_DETECTED
    assert trace.rounds <= 20
    # best profile on the cycle is returned
    assert global_objective(prof.p_kw, ctx) == trace.potentials.min()
    # the same pair settles when updating in turn
    _, _, cause = co.run_slot_brd(vehicles, bounds, ctx, ASYNC)
    assert cause is co.TerminationCause.CONVERGED


def test_round_cap():
    vehicles, ctx = one_pilot(0.95, [-0.01, -0.01])
    policy = co.PolicyConfig(schedule=co.Schedule.SYNCHRONOUS, max_rounds=1)
    _, _, cause = co.run_slot_brd(vehicles, [PowerBounds(0.0, 3.3)] * 2, ctx, policy)
    assert cause is co.TerminationCause.ROUND_CAP


def test_vehicle_order_must_match_context():
    vehicles, ctx = one_pilot(0.95, [-0.01, -0.01])
    with pytest.raises(ContractError):
        co.run_slot_brd(vehicles[::-1], [PowerBounds(0.0, 3.3)] * 2, ctx, ASYNC)


def test_policy_validation():
    with pytest.raises(ContractError):
        co.PolicyConfig(max_rounds=0)
    with pytest.raises(ContractError):
        co.PolicyConfig(order="alphabetical")
    assert SYNC.name == "global-sync"


@pytest.fixture(scope="module")
def feeder():
    return nw.load_bundled_feeder()


@pytest.mark.parametrize("seed", range(5))
def test_async_potential_strictly_decreases_to_a_fixed_point(feeder, seed):
    vehicles, bounds, ctx = slot_instance(feeder, seed)
    prof, trace, cause = co.run_slot_brd(vehicles, bounds, ctx, ASYNC)
    assert cause is co.TerminationCause.CONVERGED
    assert (np.diff(trace.potentials) < 0).all()
    assert co.is_fixed_point(vehicles, bounds, ctx, ASYNC, prof)
    assert all(b.contains(p) for b, p in zip(bounds, prof.p_kw))


def test_random_order_is_seeded(feeder):
    vehicles, bounds, ctx = slot_instance(feeder, 9)
    pol = co.PolicyConfig(order="random", order_seed=4)
    a = co.run_slot_brd(vehicles, bounds, ctx, pol)
    b = co.run_slot_brd(vehicles, bounds, ctx, pol)
    np.testing.assert_array_equal(a[0].p_kw, b[0].p_kw)
    assert [e.updater for e in a[1].entries] == [e.updater for e in b[1].entries]


def test_local_scope_runs(feeder):
    from evcoord.metrics import default_neighborhoods
    from dataclasses import replace

    vehicles, bounds, ctx = slot_instance(feeder, 2)
    ctx = replace(ctx, neighborhood_map=default_neighborhoods(feeder.non_slack_ids))
    pol = co.PolicyConfig(scope=co.Scope.LOCAL)
    prof, trace, cause = co.run_slot_brd(vehicles, bounds, ctx, pol)
    assert cause is co.TerminationCause.CONVERGED
    assert co.is_fixed_point(vehicles, bounds, ctx, pol, prof)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_async_potential_never_increases(seed, n):
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, 5, n)
    vehicles = [Vehicle(k, c, 10.0, 24.0, 24.0, 3.3, 0, 20) for k, c in enumerate(ctx.control_nodes)]
    bounds = [PowerBounds(float(lo), 3.3) for lo in rng.uniform(0, 3.3, n)]
    prof, trace, cause = co.run_slot_brd(vehicles, bounds, ctx, ASYNC)
    assert cause is co.TerminationCause.CONVERGED
    assert (np.diff(trace.potentials) <= 0).all()
