import os
import json
import filecmp

import numpy as np
import pytest

from config import StationParams, SyntheticOptions
from scenario_io import (PRICE_FILES, ScenarioError, assign_plugs, generate_synthetic, heuristic_schedule,
                         load_scenario, read_schedule, schedule_provider, write_scenario, write_scenario_json,
                         write_schedule)
from station import EvSession

SESSIONS_HEADER = "id,arrival_min,departure_min,capacity_kwh,soc_arrival,energy_kwh,cc_index,cp_index\n"


def write_minimal(directory, pv_rows=1440, sessions=None, pv_kind="pv"):
    os.makedirs(directory, exist_ok=True)
    for name in PRICE_FILES:
        rows = "".join(f"{15 * k},0.12\n" for k in range(96))
        with open(os.path.join(directory, f"{name}.csv"), "w") as f:
            f.write(f"# {name} v1\nts,price\n{rows}")
    with open(os.path.join(directory, "pv.csv"), "w") as f:
        f.write(f"# {pv_kind} v1\nts,kw\n" + "".join(f"{m},0.0\n" for m in range(pv_rows)))
    if sessions is None:
        sessions = ["a,600,660,60,0.2,30,,", "b,610,700,80,0.5,20,,"]
    with open(os.path.join(directory, "sessions.csv"), "w") as f:
        f.write("# sessions v1\n" + SESSIONS_HEADER + "".join(row + "\n" for row in sessions))
    return str(directory)


def session(ev_id, arrival, departure, cc=-1, cp=-1):
    return EvSession(id=ev_id, arrival=arrival, departure=departure, capacity=60.0, soc_arrival=0.2,
                     energy_request=30.0, cc_index=cc, cp_index=cp)


def test_load_minimal_directory(tmp_path):
    scenario = load_scenario(write_minimal(tmp_path / "scn"))
    assert scenario.minutes == 1440
    assert len(scenario.price_dam) == 96
    assert [s.id for s in scenario.sessions] == ["a", "b"]
    assert all(s.cc_index >= 0 and s.cp_index >= 0 for s in scenario.sessions)


def test_sample_scenario_loads(sample_scenario_dir):
    scenario = load_scenario(sample_scenario_dir)
    assert scenario.minutes == 1440
    assert len(scenario.sessions) > 0


def test_truncated_pv_rejected(tmp_path):
    with pytest.raises(ScenarioError) as info:
        load_scenario(write_minimal(tmp_path / "scn", pv_rows=1439))
    assert info.value.field_name == "pv"


def test_overlapping_sessions_on_one_plug(tmp_path):
    rows = ["a,600,660,60,0.2,30,0,0", "b,650,700,80,0.5,20,0,0"]
    with pytest.raises(ScenarioError) as info:
        load_scenario(write_minimal(tmp_path / "scn", sessions=rows))
    assert "sessions a and b overlap" in str(info.value)
    assert info.value.field_name == "sessions"


def test_schema_line_mismatch(tmp_path):
    with pytest.raises(ScenarioError, match="schema line") as info:
        load_scenario(write_minimal(tmp_path / "scn", pv_kind="prices"))
    assert info.value.field_name == "pv"


def test_missing_file(tmp_path):
    directory = write_minimal(tmp_path / "scn")
    os.remove(os.path.join(directory, "price_long.csv"))
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario(directory)


def test_invalid_session_rejected(tmp_path):
    rows = ["a,600,600,60,0.2,30,,"]
    with pytest.raises(ScenarioError, match="arrival < departure"):
        load_scenario(write_minimal(tmp_path / "scn", sessions=rows))


def test_synthetic_is_deterministic(tmp_path):
    write_scenario(generate_synthetic(7), str(tmp_path / "one"))
    write_scenario(generate_synthetic(7), str(tmp_path / "two"))
    names = sorted(os.listdir(tmp_path / "one"))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "one", tmp_path / "two", names, shallow=False)
    assert mismatch == [] and errors == []
    assert len(match) == len(PRICE_FILES) + 3


def test_synthetic_seeds_differ():
    first, second = generate_synthetic(1), generate_synthetic(2)
    assert [s.arrival for s in first.sessions] != [s.arrival for s in second.sessions]


def test_synthetic_without_sessions():
    scenario = generate_synthetic(3, SyntheticOptions(sessions_per_day=0))
    assert scenario.sessions == []
    assert scenario.minutes == 1440


def test_synthetic_respects_plug_count(params):
    scenario = generate_synthetic(11, SyntheticOptions(sessions_per_day=60))
    connected = np.zeros(scenario.minutes, dtype=int)
    for s in scenario.sessions:
        connected[s.arrival:s.departure] += 1
    assert connected.max() <= params.n_plugs


def test_synthetic_pv_bounds(params):
    pv = generate_synthetic(5).pv_real
    assert np.all(pv >= 0.0) and np.all(pv <= params.p_pv_peak)
    assert pv[0] == 0.0
    assert pv[13 * 60] > 0.0


def test_synthetic_options_checked():
    with pytest.raises(ScenarioError) as info:
        generate_synthetic(1, SyntheticOptions(n_days=0))
    assert info.value.field_name == "synthetic.n_days"


def test_json_bundle_round_trip(tmp_path):
    scenario = generate_synthetic(9)
    path = str(tmp_path / "bundle.json")
    write_scenario_json(scenario, path)
    loaded = load_scenario(path)
    np.testing.assert_array_equal(loaded.pv_real, scenario.pv_real)
    np.testing.assert_array_equal(loaded.price_short, scenario.price_short)
    assert [(s.id, s.cc_index, s.cp_index) for s in loaded.sessions] == \
        [(s.id, s.cc_index, s.cp_index) for s in scenario.sessions]
    assert loaded.date == scenario.date


def test_bad_json_bundle(tmp_path):
    path = tmp_path / "bundle.json"
    path.write_text('{"kind": "schedule", "version": 1}')
    with pytest.raises(ScenarioError, match="kind 'scenario'"):
        load_scenario(str(path))


def test_json_bundle_unknown_meta_key(tmp_path):
    path = str(tmp_path / "bundle.json")
    write_scenario_json(generate_synthetic(2), path)
    with open(path) as f:
        data = json.load(f)
    data["meta"]["altitude"] = 120.0
    with open(path, "w") as f:
        json.dump(data, f)
    with pytest.raises(ScenarioError, match="altitude") as info:
        load_scenario(path)
    assert info.value.field_name == "meta"


def test_heuristic_without_evs(scenario_factory, params, grid):
    series = heuristic_schedule(scenario_factory(), params, grid)
    assert len(series) == 1440 // grid.dt_id
    assert all(s.c_budget == 0.0 for s in series.slices)
    assert all(s.s_max == pytest.approx(params.p_gc * params.eta_tr) for s in series.slices)
    assert np.all(series.bess_soe_ref == 0.5 * params.cap_bess)


def test_heuristic_budget_bounded(params, grid):
    scenario = generate_synthetic(13, SyntheticOptions(sessions_per_day=60))
    series = heuristic_schedule(scenario, params, grid)
    cap = params.eta_tr * params.p_gc + params.cap_bess * params.c_rate * params.eta_dh * params.eta_inv
    budgets = np.array([s.c_budget for s in series.slices])
    assert np.all((budgets >= 0.0) & (budgets <= cap))
    assert budgets.max() > 0.0
    assert all(abs(s.p_bess_setpoint) <= params.p_bess_max for s in series.slices)


def test_schedule_file_round_trip(tmp_path, params, grid):
    scenario = generate_synthetic(4)
    series = heuristic_schedule(scenario, params, grid)
    path = str(tmp_path / "schedule.csv")
    write_schedule(series, path, grid)
    loaded = schedule_provider(scenario, "file", params, grid, path=path)
    assert len(loaded) == len(series)
    np.testing.assert_allclose([s.c_budget for s in loaded.slices], [s.c_budget for s in series.slices])
    np.testing.assert_allclose(loaded.p_grid_dp, series.p_grid_dp)


def test_schedule_length_mismatch(tmp_path, scenario_factory, schedule_factory, grid):
    scenario = scenario_factory()
    path = str(tmp_path / "schedule.csv")
    write_schedule(schedule_factory(scenario_factory(days=2)), path, grid)
    with pytest.raises(ScenarioError, match="expected 288"):
        schedule_provider(scenario, "file", path=path)


def test_schedule_missing_optional_columns(tmp_path, params):
    path = tmp_path / "schedule.csv"
    path.write_text("ts,c_kw,bess_kw,d_cap,s_min,s_max,tariff,dam,short,long\n"
                    "0,100,10,0.1,-100,500,0.5,0.12,0.15,0.09\n"
                    "5,80,0,0.1,-80,500,0.5,0.12,0.15,0.09\n")
    series = read_schedule(str(path), params)
    np.testing.assert_allclose(series.p_grid_dp, [110.0 / 0.99, 80.0 / 0.99])
    np.testing.assert_allclose(series.bess_soe_ref, [0.5 * params.cap_bess] * 2)


def test_schedule_invalid_row(tmp_path):
    path = tmp_path / "schedule.csv"
    path.write_text("ts,c_kw,bess_kw,d_cap,s_min,s_max,tariff,dam,short,long\n"
                    "0,100,10,0.1,5,500,0.5,0.12,0.15,0.09\n")
    with pytest.raises(ScenarioError, match="row 0"):
        read_schedule(str(path))


def test_unknown_schedule_mode(scenario_factory):
    with pytest.raises(ScenarioError, match="unknown mode"):
        schedule_provider(scenario_factory(), "optimal")


def test_prices_step_held_per_minute(scenario_factory, grid):
    scenario = scenario_factory()
    scenario.price_dam[1] = 0.3
    minute_prices = scenario.per_minute("price_dam", grid)
    assert len(minute_prices) == 1440
    assert minute_prices[14] == 0.12 and minute_prices[15] == 0.3 and minute_prices[29] == 0.3


def test_assign_plugs_first_fit(params):
    sessions = [session("a", 0, 60), session("b", 10, 70), session("c", 20, 80), session("d", 60, 90)]
    assigned = {s.id: (s.cc_index, s.cp_index) for s in assign_plugs(sessions, params)}
    assert assigned == {"a": (0, 0), "b": (0, 1), "c": (1, 0), "d": (0, 0)}


def test_assign_plugs_keeps_existing_booking(params):
    sessions = [session("a", 0, 60, cc=0, cp=0), session("b", 10, 70)]
    assigned = {s.id: (s.cc_index, s.cp_index) for s in assign_plugs(sessions, params)}
    assert assigned == {"a": (0, 0), "b": (0, 1)}


def test_assign_plugs_without_free_plug():
    with pytest.raises(ScenarioError, match="no free plug"):
        assign_plugs([session("a", 0, 60), session("b", 30, 90)], StationParams(n_cc=1, n_cp=1))
