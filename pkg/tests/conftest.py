import os

import numpy as np
import pytest

from config import Hyperparams, StationParams, TimeGrid, SolverOptions
from follower import FollowerProblem
from scenario_io import Scenario, ScheduleSeries
from station import ScheduleSlice

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture
def params():
    return StationParams()


@pytest.fixture
def hp():
    return Hyperparams()


@pytest.fixture
def tight_hp():
    """Stopping bounds well below the tolerances the oracle tests assert."""
    return Hyperparams(eps_abs=1e-6, eps_rel=1e-6)


@pytest.fixture
def tight_options():
    return SolverOptions(follower_tol=1e-9, max_inner_iters=20000)


@pytest.fixture
def grid():
    return TimeGrid()


@pytest.fixture
def config_path():
    return os.path.join(REPO_ROOT, 'config', 'config.yaml')


@pytest.fixture
def sample_scenario_dir():
    return os.path.join(REPO_ROOT, 'sample_data', 'scenario')


@pytest.fixture
def make_follower(hp):
    def factory(ev_id, p_req, p_max=None, cc_index=0, theta=0.0, p_rated=150.0, hyper=None):
        return FollowerProblem.for_ev(ev_id, p_req, p_req if p_max is None else p_max, p_rated,
                                      hyper or hp, theta=theta, dt=1, cc_index=cc_index)
    return factory


@pytest.fixture
def make_slice():
    def factory(c_budget, d_cap=0.10, s_min=None, s_max=None, tariff_ev=0.5, p_bess_setpoint=0.0):
        return ScheduleSlice(c_budget=c_budget, p_bess_setpoint=p_bess_setpoint, d_cap=d_cap,
                             s_min=-c_budget if s_min is None else s_min,
                             s_max=1000.0 if s_max is None else s_max,
                             tariff_ev=tariff_ev, price_dam=0.12, price_short=0.15, price_long=0.09)
    return factory


@pytest.fixture
def scenario_factory(grid):
    """Flat-price scenario over whole days with the given sessions and a constant PV level."""
    def factory(sessions=(), pv=0.0, days=1, price=0.12, tariff=0.5):
        minutes = days * grid.minutes_per_day
        slots = minutes // grid.dt_da
        return Scenario(pv_real=np.full(minutes, float(pv)), price_dam=np.full(slots, price),
                        price_short=np.full(slots, price * 1.25), price_long=np.full(slots, price * 0.75),
                        tariff_ev=np.full(slots, tariff), sessions=list(sessions))
    return factory


@pytest.fixture
def schedule_factory(grid, params):
    """Constant leader inputs for every intra-day slot of a scenario."""
    def factory(scenario, c_budget=100.0, d_cap=0.10, setpoint=0.0, s_max=None, station=None):
        station = station or params
        n = scenario.minutes // grid.dt_id
        upper = max(0.0, station.p_gc * station.eta_tr - c_budget) if s_max is None else s_max
        slice_ = ScheduleSlice(c_budget=c_budget, p_bess_setpoint=setpoint, d_cap=d_cap, s_min=-c_budget,
                               s_max=upper, tariff_ev=0.5, price_dam=0.12, price_short=0.15, price_long=0.09)
        return ScheduleSeries(slices=[slice_] * n,
                              bess_soe_ref=np.full(n, 0.5 * station.cap_bess),
                              p_grid_dp=np.full(n, (c_budget + setpoint) / station.eta_tr))
    return factory
