import os
import json
import filecmp

import pandas as pd
import pytest

from main import EXIT_NONCONVERGED, EXIT_OK, EXIT_VALIDATION, main, parse_evs
from scenario_io import load_scenario, write_scenario, write_schedule
from station import EvSession


def ev(ev_id, arrival, departure, cc):
    return EvSession(id=ev_id, arrival=arrival, departure=departure, capacity=70.0, soc_arrival=0.2,
                     energy_request=40.0, cc_index=cc, cp_index=0)


@pytest.fixture
def busy_inputs(tmp_path, scenario_factory, schedule_factory, grid):
    """Scenario directory with three EVs plugged in from midnight and a constant schedule."""
    def factory(c_budget=200.0):
        scenario = scenario_factory([ev("a", 0, 60, 0), ev("b", 0, 45, 1), ev("c", 2, 60, 2)], pv=30.0)
        directory = str(tmp_path / "scenario")
        write_scenario(scenario, directory, grid)
        schedule = os.path.join(directory, "schedule.csv")
        write_schedule(schedule_factory(scenario, c_budget=c_budget), schedule, grid)
        return directory, schedule
    return factory


def test_parse_evs():
    assert parse_evs("1..3") == [1, 2, 3]
    assert parse_evs("1,5, 10") == [1, 5, 10]


def test_generate_then_run(tmp_path, config_path):
    scenario_dir = str(tmp_path / "generated")
    assert main(["--config", config_path, "--seed", "3", "gen-scenario", "--out", scenario_dir,
                 "--sessions", "5"]) == EXIT_OK
    for name in ("pv.csv", "sessions.csv", "schedule.csv", "meta.json", "price_dam.csv"):
        assert os.path.exists(os.path.join(scenario_dir, name))
    assert len(load_scenario(scenario_dir).sessions) == 5

    out = str(tmp_path / "results")
    code = main(["--config", config_path, "run", "--scenario", scenario_dir,
                 "--schedule", os.path.join(scenario_dir, "schedule.csv"), "--method", "uncontrolled",
                 "--out", out, "--start", "480", "--minutes", "60"])
    assert code == EXIT_OK
    for name in ("trace_uncontrolled.csv", "ev_uncontrolled.csv", "metrics_uncontrolled.json",
                 "summary.json", "timing.csv"):
        assert os.path.exists(os.path.join(out, name))
    with open(os.path.join(out, "summary.json")) as f:
        assert set(json.load(f)["methods"]) == {"uncontrolled"}


def test_generate_json_bundle(tmp_path, config_path):
    bundle = str(tmp_path / "bundles" / "day.json")
    assert main(["--config", config_path, "gen-scenario", "--out", bundle, "--sessions", "4"]) == EXIT_OK
    assert len(load_scenario(bundle).sessions) == 4


def test_missing_scenario_is_a_validation_error(tmp_path, config_path):
    code = main(["--config", config_path, "run", "--scenario", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "results")])
    assert code == EXIT_VALIDATION


def test_invalid_config_is_a_validation_error(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text("hyperparams:\n  tau_rho: 0.5\n")
    assert main(["--config", str(config), "gen-scenario", "--out", str(tmp_path / "s")]) == EXIT_VALIDATION


def test_iteration_cap_policy_exit(tmp_path, busy_inputs):
    scenario_dir, schedule = busy_inputs(c_budget=20.0)
    config = tmp_path / "tight.yaml"
    config.write_text("hyperparams:\n  eps_abs: 1.0e-9\n  eps_rel: 1.0e-9\n")
    code = main(["--config", str(config), "--max-iters", "1", "run", "--scenario", scenario_dir,
                 "--schedule", schedule, "--method", "admm", "--minutes", "5", "--out", str(tmp_path / "out")])
    assert code == EXIT_NONCONVERGED


def test_compare_is_reproducible(tmp_path, config_path, busy_inputs):
    scenario_dir, schedule = busy_inputs()
    runs = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        assert main(["--config", config_path, "compare", "--scenario", scenario_dir, "--schedule", schedule,
                     "--minutes", "10", "--out", out]) == EXIT_OK
        runs.append(out)

    traces = [f"{prefix}_{m}.csv" for prefix in ("trace", "ev", "telemetry")
              for m in ("sg-admm", "admm", "centralized", "uncontrolled")]
    match, mismatch, errors = filecmp.cmpfiles(runs[0], runs[1], traces, shallow=False)
    assert mismatch == [] and errors == []
    for method in ("sg-admm", "admm", "centralized"):
        assert os.path.exists(os.path.join(runs[0], f"extra_time_{method}.csv"))
    with open(os.path.join(runs[0], "summary.json")) as f:
        summary = json.load(f)
    assert set(summary["gini"]) == {"sg-admm", "admm", "centralized", "uncontrolled"}


def test_sweep_writes_timing_table(tmp_path, config_path):
    out = str(tmp_path / "sweep")
    assert main(["--config", config_path, "sweep", "--evs", "1..2", "--repeats", "1",
                 "--methods", "uncontrolled,centralized", "--out", out]) == EXIT_OK
    table = pd.read_csv(os.path.join(out, "timing.csv"))
    assert len(table) == 4
    assert set(table["controller"]) == {"uncontrolled", "centralized"}


def test_sweep_rejects_unknown_method(tmp_path, config_path):
    assert main(["--config", config_path, "sweep", "--evs", "1", "--methods", "greedy",
                 "--out", str(tmp_path / "sweep")]) == EXIT_VALIDATION


def test_unknown_bundle_meta_is_a_validation_error(tmp_path, config_path):
    bundle = str(tmp_path / "day.json")
    assert main(["--config", config_path, "gen-scenario", "--out", bundle, "--sessions", "2"]) == EXIT_OK
    with open(bundle) as f:
        data = json.load(f)
    data["meta"]["site"] = "depot"
    with open(bundle, "w") as f:
        json.dump(data, f)
    code = main(["--config", config_path, "run", "--scenario", bundle, "--method", "uncontrolled",
                 "--minutes", "5", "--out", str(tmp_path / "results")])
    assert code == EXIT_VALIDATION
