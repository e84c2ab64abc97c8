import json

import numpy as np
import pandas as pd
import pytest

from metrics import (ProfitBreakdown, battery_wear, extra_charging_time, fairness, gini, profit_breakdown,
                     summarize, timing_report)
from scenario_io import ScheduleSeries
from simulator import SimulationTrace, simulate
from station import EvSession


def trace_of(steps=None, ev=None, controller='test'):
    return SimulationTrace(controller=controller, steps=pd.DataFrame(steps if steps is not None else []),
                           ev=pd.DataFrame(ev if ev is not None else []), telemetry=pd.DataFrame())


def charging_rows(ev_id, power_kw, minutes, request):
    energy = np.cumsum(np.full(minutes, power_kw / 60.0))
    return [{'minute': m, 'id': ev_id, 'energy_delivered': float(min(e, request)), 'energy_request': request,
             'p_alloc': power_kw, 'p_req': power_kw} for m, e in enumerate(energy)]


@pytest.mark.parametrize("values, expected", [
    ([1.0, 1.0, 1.0, 1.0], 0.0),
    ([0.0, 0.0, 0.0, 1.0], 0.75),
    ([0.0, 0.0], 0.0),
    ([3.0], 0.0),
])
def test_gini_examples(values, expected):
    assert gini(values) == pytest.approx(expected, abs=1e-12)


def test_gini_bounds():
    rng = np.random.default_rng(2)
    for _ in range(100):
        values = rng.exponential(1.0, int(rng.integers(1, 30)))
        n = len(values)
        assert 0.0 <= gini(values) + 1e-12
        assert gini(values) <= (n - 1) / n + 1e-12


def test_gini_rejects_bad_input():
    with pytest.raises(ValueError):
        gini([])
    with pytest.raises(ValueError):
        gini([1.0, -0.5])


def test_fairness_scores():
    ev = [{'id': 'a', 'p_alloc': 50.0, 'p_req': 100.0}, {'id': 'b', 'p_alloc': 10.0, 'p_req': 10.0}]
    report = fairness(trace_of(ev=ev))
    assert report.per_ev['a'] == pytest.approx(0.5)
    assert report.per_ev['b'] == 0.0
    assert report.gini == pytest.approx(0.5)


def test_fairness_scale_invariant():
    ev = [{'id': 'a', 'p_alloc': 30.0, 'p_req': 100.0}, {'id': 'b', 'p_alloc': 40.0, 'p_req': 50.0},
          {'id': 'a', 'p_alloc': 60.0, 'p_req': 90.0}]
    scaled = [{**row, 'p_alloc': 3.0 * row['p_alloc'], 'p_req': 3.0 * row['p_req']} for row in ev]
    assert fairness(trace_of(ev=scaled)).gini == pytest.approx(fairness(trace_of(ev=ev)).gini)


def test_fairness_floor_for_tiny_requests():
    report = fairness(trace_of(ev=[{'id': 'a', 'p_alloc': 0.5, 'p_req': 0.0}]), floor_kw=1.0)
    assert report.per_ev['a'] == pytest.approx(0.5)


@pytest.fixture
def settlement(make_slice):
    p_g = np.concatenate([np.full(30, 130.0), np.full(10, 80.0), np.full(20, 100.0)])
    steps = pd.DataFrame({
        'minute': np.arange(60), 'slot': np.arange(60) // 5, 'p_g': p_g, 'p_ev_total': 100.0,
        'tariff_ev': 0.5, 'price_dam': 0.2, 'price_short': 0.3, 'price_long': 0.09, 'incentives': 0.05,
    })
    schedule = ScheduleSeries(slices=[make_slice(100.0)] * 12, bess_soe_ref=np.zeros(12),
                              p_grid_dp=np.full(12, 100.0))
    return trace_of(steps=steps), schedule


def test_profit_breakdown(settlement, grid):
    trace, schedule = settlement
    profit = profit_breakdown(trace, schedule, grid)
    assert profit.potential_profit == pytest.approx(50.0)
    assert profit.dam_cost == pytest.approx(20.0)
    assert profit.bm_cost == pytest.approx(4.5 - 0.3)
    assert profit.incentives_paid == pytest.approx(3.0)
    assert profit.net_profit == pytest.approx(22.8)


def test_profit_rejects_misaligned_trace(settlement, grid):
    trace, schedule = settlement
    trace.steps.loc[7, 'slot'] = 3
    with pytest.raises(ValueError, match="not aligned"):
        profit_breakdown(trace, schedule, grid)


def test_profit_identity_enforced():
    with pytest.raises(ValueError):
        ProfitBreakdown(dam_cost=1.0, bm_cost=1.0, potential_profit=5.0, incentives_paid=1.0, net_profit=3.0)


def test_battery_wear_one_cycle(params, grid):
    trace = trace_of(steps={'p_b': np.full(60, 2.0 * params.cap_bess)})
    wear = battery_wear(trace, params, rated_cycles=5000, grid=grid)
    assert wear.cycles == pytest.approx(1.0)
    assert wear.wear == pytest.approx(4e-5)
    assert wear.wear_per_day == pytest.approx(4e-5 * 24)


def test_extra_time_zero_for_identical_traces(grid):
    trace = trace_of(ev=charging_rows('a', 20.0, 60, 10.0))
    assert (extra_charging_time(trace, trace, grid) == 0.0).all()


def test_extra_time_when_power_halves(grid):
    reference = trace_of(ev=charging_rows('a', 20.0, 60, 10.0))
    slower = trace_of(ev=charging_rows('a', 10.0, 60, 10.0))
    delta = extra_charging_time(slower, reference, grid)
    assert delta['a'] == pytest.approx(30.0)
    assert (extra_charging_time(reference, slower, grid) == -delta).all()


def test_extra_time_uses_energy_both_runs_reached(grid):
    reference = trace_of(ev=charging_rows('a', 20.0, 60, 30.0))
    partial = trace_of(ev=charging_rows('a', 10.0, 60, 30.0))
    assert extra_charging_time(partial, reference, grid)['a'] == pytest.approx(30.0)


def test_extra_time_session_mismatch(grid):
    with pytest.raises(ValueError, match="different sessions"):
        extra_charging_time(trace_of(ev=charging_rows('a', 20.0, 10, 5.0)),
                            trace_of(ev=charging_rows('b', 20.0, 10, 5.0)), grid)


def test_timing_report():
    samples = [{'controller': 'sg-admm', 'n_ev': 2, 'seconds': 0.2},
               {'controller': 'sg-admm', 'n_ev': 2, 'seconds': 0.4},
               {'controller': 'centralized', 'n_ev': 2, 'seconds': 1.0}]
    report = timing_report(samples).set_index(['controller', 'n_ev'])
    assert report.loc[('sg-admm', 2), 'mean_seconds'] == pytest.approx(0.3)
    assert report.loc[('sg-admm', 2), 'count'] == 2
    assert list(timing_report([]).columns) == ['controller', 'n_ev', 'mean_seconds', 'count']


def test_summarize_simulated_run(scenario_factory, schedule_factory, params, hp, grid):
    session = EvSession(id='a', arrival=0, departure=30, capacity=60.0, soc_arrival=0.2, energy_request=20.0,
                        cc_index=0, cp_index=0)
    scenario = scenario_factory([session], pv=50.0)
    schedule = schedule_factory(scenario, c_budget=80.0)
    trace = simulate(scenario, 'sg-admm', schedule, params, hp, grid, minutes=30)
    summary = summarize(trace, schedule, params, grid)
    assert summary['sessions'] == 1
    assert summary['minutes'] == 30
    assert summary['energy_delivered_kwh'] == pytest.approx(trace.ev['energy_delivered'].iloc[-1])
    assert {'profit', 'wear', 'fairness', 'gcp_violation_minutes', 'nonconverged_fraction'} <= set(summary)
    json.dumps(summary)
