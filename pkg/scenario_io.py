"""
Scenario ingestion, synthetic scenario generation and the schedule provider
that stands in for the day-ahead/intra-day layers.

CSV schemas (an optional first line `# <kind> v1` names the file kind):
  prices      ts, price                      ts = slot start minute, $/kWh
  pv          ts, kw                         ts = minute
  sessions    id, arrival_min, departure_min, capacity_kwh, soc_arrival,
              energy_kwh [, cc_index, cp_index, p_rated_kw, p_request_kw, curve_file]
  schedule    ts, c_kw, bess_kw, d_cap, s_min, s_max, tariff, dam, short, long
              [, soe_ref_kwh, dp_kw]
"""

import os
import json
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Dict, Any, Sequence

import numpy as np
import pandas as pd
import pvlib

from charging_curve import PowerSocCurve, load_curve_csv, integrate_soc
from config import StationParams, TimeGrid, ScheduleOptions, SiteOptions, SyntheticOptions
from dispatch import rp_forecast, sun_elevation, imbalance_forecast
from station import EvSession, ScheduleSlice

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRICE_FILES = ('price_dam', 'price_short', 'price_long', 'tariff_ev')
SESSION_COLUMNS = ['id', 'arrival_min', 'departure_min', 'capacity_kwh', 'soc_arrival', 'energy_kwh']
META_KEYS = frozenset({'latitude', 'longitude', 'timezone', 'date'})
SCHEDULE_COLUMNS = ['ts', 'c_kw', 'bess_kw', 'd_cap', 's_min', 's_max', 'tariff', 'dam', 'short', 'long']


class ScenarioError(ValueError):
    """Raised when scenario or schedule data violates its schema or invariants."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class Scenario:
    pv_real: np.ndarray
    price_dam: np.ndarray
    price_short: np.ndarray
    price_long: np.ndarray
    tariff_ev: np.ndarray
    sessions: List[EvSession] = field(default_factory=list)
    latitude: float = SiteOptions.latitude
    longitude: float = SiteOptions.longitude
    timezone: str = SiteOptions.timezone
    date: str = SyntheticOptions.date

    @property
    def minutes(self) -> int:
        return len(self.pv_real)

    def per_minute(self, name: str, grid: TimeGrid) -> np.ndarray:
        """Price series step-held from the day-ahead slots onto minutes."""
        return np.repeat(np.asarray(getattr(self, name), dtype=float), grid.dt_da)

    def site(self) -> SiteOptions:
        return SiteOptions(latitude=self.latitude, longitude=self.longitude, timezone=self.timezone)


@dataclass
class ScheduleSeries:
    slices: List[ScheduleSlice]
    bess_soe_ref: np.ndarray
    p_grid_dp: np.ndarray

    def __len__(self):
        return len(self.slices)


def validate_scenario(scenario: Scenario, params: StationParams, grid: TimeGrid) -> Scenario:
    """Check lengths, values and plug feasibility; raise ScenarioError naming the culprit."""
    n_slots = None
    for name in PRICE_FILES:
        series = np.asarray(getattr(scenario, name), dtype=float)
        if not np.all(np.isfinite(series)):
            raise ScenarioError(name, "non-finite price")
        if n_slots is None:
            n_slots = len(series)
        elif len(series) != n_slots:
            raise ScenarioError(name, f"length {len(series)} does not match price_dam length {n_slots}")
    expected = n_slots * grid.dt_da
    if scenario.minutes != expected:
        raise ScenarioError('pv', f"length {scenario.minutes} does not match {expected} minutes implied by prices")
    if expected == 0 or expected % grid.minutes_per_day != 0:
        raise ScenarioError('pv', f"{expected} minutes is not a whole number of days")
    if not np.all(np.isfinite(scenario.pv_real)) or np.any(scenario.pv_real < 0):
        raise ScenarioError('pv', "values must be finite and non-negative")

    plugs: Dict[tuple, List[EvSession]] = {}
    for session in scenario.sessions:
        if session.departure > scenario.minutes or session.arrival < 0:
            raise ScenarioError('sessions', f"session {session.id} outside the {scenario.minutes}-minute horizon")
        if not (0 <= session.cc_index < params.n_cc and 0 <= session.cp_index < params.n_cp):
            raise ScenarioError('sessions', f"session {session.id} has no valid plug "
                                            f"({session.cc_index}, {session.cp_index})")
        plugs.setdefault((session.cc_index, session.cp_index), []).append(session)
    for plug, booked in plugs.items():
        booked.sort(key=lambda s: (s.arrival, s.id))
        for earlier, later in zip(booked, booked[1:]):
            if later.arrival < earlier.departure:
                raise ScenarioError('sessions', f"sessions {earlier.id} and {later.id} overlap on plug {plug}")

    concurrency = np.zeros(scenario.minutes + 1, dtype=int)
    for session in scenario.sessions:
        concurrency[session.arrival] += 1
        concurrency[session.departure] -= 1
    if len(scenario.sessions) and np.cumsum(concurrency).max() > params.n_plugs:
        raise ScenarioError('sessions', f"more than {params.n_plugs} concurrent sessions")
    return scenario


def assign_plugs(sessions: Sequence[EvSession], params: StationParams) -> List[EvSession]:
    """First-fit plug assignment in arrival order; sessions that already have a plug keep it."""
    bookings: Dict[tuple, List[tuple]] = {(cc, cp): [] for cc in range(params.n_cc) for cp in range(params.n_cp)}
    ordered = sorted(sessions, key=lambda s: (s.arrival, s.id))
    for session in ordered:
        plug = (session.cc_index, session.cp_index)
        if session.cc_index >= 0 and session.cp_index >= 0 and plug in bookings:
            bookings[plug].append((session.arrival, session.departure))

    assigned = []
    for session in ordered:
        if session.cc_index >= 0 and session.cp_index >= 0:
            assigned.append(session)
            continue
        plug = next((p for p, booked in bookings.items()
                     if all(session.departure <= a or d <= session.arrival for a, d in booked)), None)
        if plug is None:
            raise ScenarioError('sessions', f"no free plug for session {session.id} at minute {session.arrival}")
        bookings[plug].append((session.arrival, session.departure))
        assigned.append(_with_plug(session, *plug))
    return assigned


def _with_plug(session: EvSession, cc: int, cp: int) -> EvSession:
    return EvSession(id=session.id, arrival=session.arrival, departure=session.departure,
                     capacity=session.capacity, soc_arrival=session.soc_arrival,
                     energy_request=session.energy_request, cc_index=cc, cp_index=cp,
                     p_rated=session.p_rated, p_request=session.p_request, curve=session.curve)


def _read_csv(path: str, kind: str, required: Sequence[str]) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ScenarioError(kind, f"file not found: {path}")

    encodings = ['utf-8', 'latin-1']
    df = None
    for encoding in encodings:
        try:
            with open(path, 'r', encoding=encoding) as f:
                first = f.readline().strip()
            df = pd.read_csv(path, encoding=encoding, comment='#', float_precision='round_trip')
            break
        except UnicodeDecodeError:
            continue
    if df is None:
        raise ScenarioError(kind, f"could not read {path} with any supported encoding")

    if first.startswith('#'):
        header = first.lstrip('#').split()
        if len(header) != 2 or header[0] != kind or header[1] != f"v{SCHEMA_VERSION}":
            raise ScenarioError(kind, f"schema line '{first}' does not match '# {kind} v{SCHEMA_VERSION}'")

    df = df.dropna(how='all')
    df.columns = [str(col).strip().replace(' ', '_').lower() for col in df.columns]
    missing = [col for col in required if col not in df.columns]
    if missing:
        raise ScenarioError(kind, f"missing columns {missing} in {path}")
    return df


def _series(df: pd.DataFrame, name: str, column: str, step: int) -> np.ndarray:
    values = pd.to_numeric(df[column], errors='coerce').to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise ScenarioError(name, "non-numeric or missing values")
    ts = pd.to_numeric(df['ts'], errors='coerce').to_numpy(dtype=float)
    if not np.array_equal(ts, np.arange(len(values)) * step):
        raise ScenarioError(name, f"ts must run 0, {step}, {2 * step}, ... without gaps")
    return values


def _optional(row: pd.Series, column: str, cast, default):
    if column not in row or pd.isna(row[column]) or row[column] == '':
        return default
    return cast(row[column])


def _sessions_from_frame(df: pd.DataFrame, directory: Optional[str]) -> List[EvSession]:
    sessions = []
    for _, row in df.iterrows():
        curve = None
        curve_file = _optional(row, 'curve_file', str, None)
        if curve_file:
            curve = load_curve_csv(os.path.join(directory or '.', curve_file))
        try:
            sessions.append(EvSession(
                id=str(row['id']),
                arrival=int(row['arrival_min']),
                departure=int(row['departure_min']),
                capacity=float(row['capacity_kwh']),
                soc_arrival=float(row['soc_arrival']),
                energy_request=float(row['energy_kwh']),
                cc_index=_optional(row, 'cc_index', int, -1),
                cp_index=_optional(row, 'cp_index', int, -1),
                p_rated=_optional(row, 'p_rated_kw', float, curve.p_rated if curve else 150.0),
                p_request=_optional(row, 'p_request_kw', float, None),
                curve=curve,
            ))
        except ValueError as e:
            raise ScenarioError('sessions', str(e)) from e
    return sessions


def load_scenario(path: str, params: StationParams = StationParams(), grid: TimeGrid = TimeGrid()) -> Scenario:
    """Load a scenario directory of CSVs, or a single JSON bundle."""
    try:
        if path.endswith('.json'):
            scenario = load_scenario_json(path)
        else:
            series = {}
            for name in PRICE_FILES:
                df = _read_csv(os.path.join(path, f"{name}.csv"), name, ['ts', 'price'])
                series[name] = _series(df, name, 'price', grid.dt_da)
            pv = _series(_read_csv(os.path.join(path, 'pv.csv'), 'pv', ['ts', 'kw']), 'pv', 'kw', grid.dt_rt)
            sessions_df = _read_csv(os.path.join(path, 'sessions.csv'), 'sessions', SESSION_COLUMNS)
            meta = _read_meta(os.path.join(path, 'meta.json'))
            scenario = Scenario(pv_real=pv, sessions=_sessions_from_frame(sessions_df, path), **series, **meta)
        scenario.sessions = assign_plugs(scenario.sessions, params)
        validate_scenario(scenario, params, grid)
    except ScenarioError as e:
        logger.error(f"Error loading scenario {path}: {str(e)}")
        raise

    logger.info(f"Loaded scenario {path}: {scenario.minutes} minutes, {len(scenario.sessions)} sessions")
    return scenario


def _read_meta(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        return _check_meta(json.load(f))


def _check_meta(meta: Any) -> Dict[str, Any]:
    if not isinstance(meta, dict):
        raise ScenarioError('meta', f"expected an object, got {type(meta).__name__}")
    unknown = set(meta) - META_KEYS
    if unknown:
        raise ScenarioError('meta', f"unknown keys {sorted(unknown)}")
    return meta


def _session_record(session: EvSession) -> Dict[str, Any]:
    record = {
        'id': session.id,
        'arrival_min': session.arrival,
        'departure_min': session.departure,
        'capacity_kwh': session.capacity,
        'soc_arrival': session.soc_arrival,
        'energy_kwh': session.energy_request,
        'cc_index': session.cc_index,
        'cp_index': session.cp_index,
        'p_rated_kw': session.p_rated,
        'p_request_kw': session.p_request,
    }
    return record


def load_scenario_json(path: str) -> Scenario:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError('bundle', f"cannot read {path}: {e}") from e
    if data.get('kind') != 'scenario' or data.get('version') != SCHEMA_VERSION:
        raise ScenarioError('bundle', f"expected kind 'scenario' version {SCHEMA_VERSION}")

    try:
        sessions = []
        for record in data.get('sessions', []):
            curve = PowerSocCurve(tuple(tuple(bp) for bp in record['curve'])) if record.get('curve') else None
            sessions.append(EvSession(
                id=str(record['id']), arrival=int(record['arrival_min']), departure=int(record['departure_min']),
                capacity=float(record['capacity_kwh']), soc_arrival=float(record['soc_arrival']),
                energy_request=float(record['energy_kwh']), cc_index=int(record.get('cc_index', -1)),
                cp_index=int(record.get('cp_index', -1)), p_rated=float(record.get('p_rated_kw', 150.0)),
                p_request=record.get('p_request_kw'), curve=curve))
        arrays = {name: np.asarray(data[name], dtype=float) for name in PRICE_FILES}
        pv = np.asarray(data['pv_kw'], dtype=float)
    except KeyError as e:
        raise ScenarioError('bundle', f"missing key {e}") from e
    except ValueError as e:
        raise ScenarioError('bundle', str(e)) from e
    return Scenario(pv_real=pv, sessions=sessions, **arrays, **_check_meta(data.get('meta', {})))


def write_scenario_json(scenario: Scenario, path: str):
    sessions = []
    for session in scenario.sessions:
        record = _session_record(session)
        if session.curve is not None:
            record['curve'] = [list(bp) for bp in session.curve.breakpoints]
        sessions.append(record)
    data = {
        'kind': 'scenario',
        'version': SCHEMA_VERSION,
        'meta': {'latitude': scenario.latitude, 'longitude': scenario.longitude,
                 'timezone': scenario.timezone, 'date': scenario.date},
        'pv_kw': scenario.pv_real.tolist(),
        **{name: np.asarray(getattr(scenario, name)).tolist() for name in PRICE_FILES},
        'sessions': sessions,
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=1)


def write_csv(df: pd.DataFrame, path: str, kind: str):
    """Write a CSV preceded by its schema line."""
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f"# {kind} v{SCHEMA_VERSION}\n")
        df.to_csv(f, index=False)


def write_scenario(scenario: Scenario, directory: str, grid: TimeGrid = TimeGrid()):
    """Write the CSV form of a scenario (sessions keep their plug assignment)."""
    os.makedirs(directory, exist_ok=True)
    for name in PRICE_FILES:
        series = np.asarray(getattr(scenario, name))
        write_csv(pd.DataFrame({'ts': np.arange(len(series)) * grid.dt_da, 'price': series}),
                   os.path.join(directory, f"{name}.csv"), name)
    write_csv(pd.DataFrame({'ts': np.arange(scenario.minutes) * grid.dt_rt, 'kw': scenario.pv_real}),
               os.path.join(directory, 'pv.csv'), 'pv')
    records = [_session_record(s) for s in scenario.sessions]
    columns = SESSION_COLUMNS + ['cc_index', 'cp_index', 'p_rated_kw', 'p_request_kw']
    write_csv(pd.DataFrame(records, columns=columns), os.path.join(directory, 'sessions.csv'), 'sessions')
    with open(os.path.join(directory, 'meta.json'), 'w', encoding='utf-8') as f:
        json.dump({'latitude': scenario.latitude, 'longitude': scenario.longitude,
                   'timezone': scenario.timezone, 'date': scenario.date}, f, indent=2, sort_keys=True)
    logger.info(f"Scenario written to {directory}")


def _check_synthetic(opts: SyntheticOptions):
    checks = [
        (opts.n_days >= 1, 'n_days', "n_days >= 1"),
        (opts.sessions_per_day >= 0, 'sessions_per_day', "sessions_per_day >= 0"),
        (opts.peak_std > 0 and opts.stay_std > 0, 'peak_std', "standard deviations > 0"),
        (0.0 <= opts.morning_share <= 1.0, 'morning_share', "morning_share in [0,1]"),
        (0 < opts.stay_min <= opts.stay_max, 'stay_min', "0 < stay_min <= stay_max"),
        (0 < opts.capacity_min <= opts.capacity_max, 'capacity_min', "0 < capacity_min <= capacity_max"),
        (0.0 <= opts.soc_arrival_min <= opts.soc_arrival_max <= 1.0, 'soc_arrival_min',
         "0 <= soc_arrival_min <= soc_arrival_max <= 1"),
        (0.0 <= opts.fast_share <= 1.0, 'fast_share', "fast_share in [0,1]"),
        (0.0 <= opts.pv_noise_ar < 1.0, 'pv_noise_ar', "pv_noise_ar in [0,1)"),
    ]
    for ok, name, message in checks:
        if not ok:
            raise ScenarioError(f"synthetic.{name}", f"{message} violated")


def synthetic_pv(times: pd.DatetimeIndex, site: SiteOptions, p_peak: float, rng: np.random.Generator,
                 noise_std: float, noise_ar: float) -> np.ndarray:
    """Clear-sky PV scaled to the plant peak with AR(1) multiplicative noise."""
    location = pvlib.location.Location(site.latitude, site.longitude, tz=site.timezone)
    ghi = location.get_clearsky(times, model='haurwitz')['ghi'].to_numpy()
    shocks = rng.normal(0.0, noise_std, len(times))
    noise = np.empty(len(times))
    level = 0.0
    scale = math.sqrt(1.0 - noise_ar * noise_ar)
    for j, shock in enumerate(shocks):
        level = noise_ar * level + scale * shock
        noise[j] = level
    return np.round(np.clip(ghi / 1000.0 * p_peak * (1.0 + noise), 0.0, p_peak), 3)


def generate_synthetic(seed: int, opts: SyntheticOptions = SyntheticOptions(),
                       params: StationParams = StationParams(), grid: TimeGrid = TimeGrid(),
                       site: SiteOptions = SiteOptions()) -> Scenario:
    """Deterministic scenario for a seed: two-peak arrivals, CC-CV EVs, clear-sky PV, daily price shape."""
    _check_synthetic(opts)
    rng = np.random.default_rng(seed)
    per_day = grid.minutes_per_day
    minutes = opts.n_days * per_day

    sessions = []
    for day in range(opts.n_days):
        n = opts.sessions_per_day
        morning = rng.random(n) < opts.morning_share
        arrivals = np.where(morning, rng.normal(opts.morning_peak, opts.peak_std, n),
                            rng.normal(opts.evening_peak, opts.peak_std, n))
        stays = np.clip(np.rint(rng.normal(opts.stay_mean, opts.stay_std, n)), opts.stay_min, opts.stay_max)
        capacities = np.round(rng.uniform(opts.capacity_min, opts.capacity_max, n), 1)
        socs = np.round(rng.uniform(opts.soc_arrival_min, opts.soc_arrival_max, n), 3)
        fast = rng.random(n) < opts.fast_share
        for k in range(n):
            arrival = int(np.clip(np.rint(arrivals[k]), 0, per_day - opts.stay_min)) + day * per_day
            departure = min(arrival + int(stays[k]), minutes)
            energy = math.floor(max(0.0, capacities[k] * (opts.soc_target - socs[k])) * 1000.0) / 1000.0
            sessions.append(EvSession(
                id=f"ev{day:02d}-{k:03d}", arrival=arrival, departure=departure,
                capacity=float(capacities[k]), soc_arrival=float(socs[k]), energy_request=energy,
                p_rated=opts.fast_power if fast[k] else opts.slow_power))
    sessions = assign_plugs(sessions, params)

    times = pd.date_range(pd.Timestamp(opts.date), periods=minutes, freq='min', tz=site.timezone)
    pv = synthetic_pv(times, site, params.p_pv_peak, rng, opts.pv_noise_std, opts.pv_noise_ar)

    slots = minutes // grid.dt_da
    hours = (np.arange(slots) * grid.dt_da % per_day) / 60.0
    shape = opts.price_base + opts.price_amplitude * np.sin(2.0 * np.pi * (hours - 9.0) / 24.0)
    dam = np.round(shape + rng.normal(0.0, 0.01, slots), 5)
    spread = np.abs(rng.normal(0.0, 0.02, slots))
    scenario = Scenario(
        pv_real=pv,
        price_dam=dam,
        price_short=np.round(dam * 1.25 + spread, 5),
        price_long=np.round(dam * 0.75 - spread, 5),
        tariff_ev=np.full(slots, opts.tariff_ev),
        sessions=sessions,
        latitude=site.latitude, longitude=site.longitude, timezone=site.timezone, date=opts.date,
    )
    validate_scenario(scenario, params, grid)
    logger.info(f"Generated synthetic scenario (seed={seed}): {opts.n_days} day(s), {len(sessions)} sessions")
    return scenario


def ideal_demand(scenario: Scenario, grid: TimeGrid) -> np.ndarray:
    """Fleet power per minute if every EV were served at its request from arrival on."""
    demand = np.zeros(scenario.minutes)
    for session in scenario.sessions:
        rate = session.p_request if session.p_request is not None else session.charging_curve.p_rated
        schedule = np.full(session.stay // grid.dt_rt, rate)
        _, energy = integrate_soc(session.charging_curve, session.soc_arrival, schedule, grid.dt_rt, session.capacity)
        delivered = np.cumsum(energy)
        # stop once the energy request is met
        capped = np.minimum(delivered, session.energy_request)
        step_energy = np.diff(np.concatenate(([0.0], capped)))
        power = np.repeat(step_energy * 60.0 / grid.dt_rt, grid.dt_rt)
        demand[session.arrival:session.arrival + len(power)] += power
    return demand


def heuristic_schedule(scenario: Scenario, params: StationParams, grid: TimeGrid,
                       opts: ScheduleOptions = ScheduleOptions()) -> ScheduleSeries:
    """
    Rule-based budgets per intra-day slot.

    C is the slot's mean ideal EV demand at the coupling point, capped by the
    grid import plus the dischargeable BESS power. The BESS setpoint covers
    budget beyond the grid limit, stores the expected PV surplus, and
    otherwise drifts back to the SoE reference over the balancing horizon.
    """
    demand = ideal_demand(scenario, grid) / params.eta_cp
    cap = params.eta_tr * params.p_gc + params.cap_bess * params.c_rate * params.eta_dh * params.eta_inv
    limit = params.p_bess_max

    times = pd.date_range(pd.Timestamp(scenario.date) - pd.Timedelta(minutes=1), periods=scenario.minutes + 1,
                          freq='min', tz=scenario.timezone)
    elevation = sun_elevation(times, scenario.site())

    steps_per_day = grid.minutes_per_day // grid.dt_da
    short = imbalance_forecast(scenario.price_short, steps_per_day)
    long_ = imbalance_forecast(scenario.price_long, steps_per_day)

    soe_ref = opts.soe_ref_fraction * params.cap_bess
    soe_plan = soe_ref
    lo, hi = params.soc_min * params.cap_bess, params.soc_max * params.cap_bess
    slices, refs, dp = [], [], []
    for m0 in range(0, scenario.minutes, grid.dt_id):
        c_budget = float(np.clip(demand[m0:m0 + grid.dt_id].mean(), 0.0, cap))
        p_prev = scenario.pv_real[m0 - 1] if m0 > 0 else 0.0
        # elevation[m] belongs to minute m - 1
        pv_expected = float(rp_forecast(p_prev, elevation[m0 + 1:m0 + 1 + grid.dt_id], elevation[m0],
                                        horizon=grid.dt_id).mean())

        net_load = c_budget - pv_expected * params.eta_pv
        import_cap = params.eta_tr * params.p_gc
        if net_load > import_cap:
            setpoint = -(net_load - import_cap)
        elif net_load < 0:
            setpoint = -net_load
        else:
            setpoint = (soe_ref - soe_plan) / grid.horizon_bm
        setpoint = float(np.clip(setpoint, -limit, limit))
        hours = grid.dt_id / 60.0
        soe_plan += setpoint * params.eta_ch * hours if setpoint >= 0 else setpoint / params.eta_dh * hours
        soe_plan = min(max(soe_plan, lo), hi)

        slot = m0 // grid.dt_da
        slices.append(ScheduleSlice(
            c_budget=c_budget, p_bess_setpoint=setpoint, d_cap=opts.d_cap,
            s_min=-c_budget, s_max=max(0.0, params.p_gc * params.eta_tr - c_budget),
            tariff_ev=float(scenario.tariff_ev[slot]), price_dam=float(scenario.price_dam[slot]),
            price_short=float(short[slot]), price_long=float(long_[slot])))
        refs.append(soe_ref)
        dp.append(min(params.p_gc, (c_budget + setpoint - pv_expected * params.eta_pv) / params.eta_tr))

    return ScheduleSeries(slices=slices, bess_soe_ref=np.array(refs), p_grid_dp=np.array(dp))


def write_schedule(series: ScheduleSeries, path: str, grid: TimeGrid = TimeGrid()):
    records = [{
        'ts': k * grid.dt_id, 'c_kw': s.c_budget, 'bess_kw': s.p_bess_setpoint, 'd_cap': s.d_cap,
        's_min': s.s_min, 's_max': s.s_max, 'tariff': s.tariff_ev, 'dam': s.price_dam,
        'short': s.price_short, 'long': s.price_long,
        'soe_ref_kwh': series.bess_soe_ref[k], 'dp_kw': series.p_grid_dp[k],
    } for k, s in enumerate(series.slices)]
    write_csv(pd.DataFrame(records, columns=SCHEDULE_COLUMNS + ['soe_ref_kwh', 'dp_kw']), path, 'schedule')


def read_schedule(path: str, params: StationParams = StationParams(), grid: TimeGrid = TimeGrid(),
                  opts: ScheduleOptions = ScheduleOptions()) -> ScheduleSeries:
    df = _read_csv(path, 'schedule', SCHEDULE_COLUMNS)
    for column in df.columns:
        df[column] = pd.to_numeric(df[column], errors='coerce')
    if df[SCHEDULE_COLUMNS].isna().any().any():
        raise ScenarioError('schedule', "non-numeric or missing values")
    if not np.array_equal(df['ts'].to_numpy(dtype=float), np.arange(len(df)) * grid.dt_id):
        raise ScenarioError('schedule', f"ts must run on the {grid.dt_id}-minute grid without gaps")

    slices = []
    for k, row in enumerate(df.itertuples(index=False)):
        try:
            slices.append(ScheduleSlice(
                c_budget=float(row.c_kw), p_bess_setpoint=float(row.bess_kw), d_cap=float(row.d_cap),
                s_min=float(row.s_min), s_max=float(row.s_max), tariff_ev=float(row.tariff),
                price_dam=float(row.dam), price_short=float(row.short), price_long=float(row.long)))
        except ValueError as e:
            raise ScenarioError('schedule', f"row {k}: {e}") from e

    soe_ref = (df['soe_ref_kwh'].to_numpy(dtype=float) if 'soe_ref_kwh' in df.columns
               else np.full(len(slices), opts.soe_ref_fraction * params.cap_bess))
    dp = (df['dp_kw'].to_numpy(dtype=float) if 'dp_kw' in df.columns
          else np.array([(s.c_budget + s.p_bess_setpoint) / params.eta_tr for s in slices]))
    return ScheduleSeries(slices=slices, bess_soe_ref=soe_ref, p_grid_dp=dp)


def schedule_provider(scenario: Scenario, mode: str, params: StationParams = StationParams(),
                      grid: TimeGrid = TimeGrid(), opts: ScheduleOptions = ScheduleOptions(),
                      path: Optional[str] = None) -> ScheduleSeries:
    """Leader inputs for every intra-day slot, read from a file or built by the heuristic."""
    if mode == 'file':
        if path is None:
            raise ScenarioError('schedule', "file mode needs a schedule path")
        series = read_schedule(path, params, grid, opts)
    elif mode == 'heuristic':
        series = heuristic_schedule(scenario, params, grid, opts)
    else:
        raise ScenarioError('schedule', f"unknown mode '{mode}' (file | heuristic)")

    expected = scenario.minutes // grid.dt_id
    if len(series) != expected:
        raise ScenarioError('schedule', f"{len(series)} slices for a {scenario.minutes}-minute scenario "
                                        f"(expected {expected})")
    return series
