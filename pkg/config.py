import os
import json
import copy
import logging
from dataclasses import dataclass, asdict, fields
from typing import Dict, Any, Optional

import yaml

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised when a configuration value violates an invariant."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class StationParams:
    """Charging station parameters (kW, kWh, $/kWh, fractions)."""
    eta_pv: float = 0.98
    eta_inv: float = 0.98
    eta_tr: float = 0.99
    eta_cp: float = 0.95
    eta_ch: float = 0.95
    eta_dh: float = 0.95
    c_rate: float = 1.0
    cap_bess: float = 506.7
    soc_min: float = 0.1
    soc_max: float = 0.9
    p_gc: float = 954.5
    p_cc: float = 172.5
    n_cc: int = 10
    n_cp: int = 2
    p_pv_peak: float = 500.0
    price_kwh_bess: float = 115.0
    d_b_eol: float = 0.8

    @property
    def p_bess_max(self) -> float:
        return self.cap_bess * self.c_rate

    @property
    def n_plugs(self) -> int:
        return self.n_cc * self.n_cp


@dataclass(frozen=True)
class Hyperparams:
    f_s: float = 0.8
    b: float = 1.0
    c: float = 0.01
    tau: float = 0.2
    a: float = 0.04
    alpha: float = 10.0
    beta: float = 0.01
    gamma: float = 10.0
    rho0: float = 10.0
    delta: float = 0.04
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    eps_bisect: float = 1e-3
    tau_rho: float = 2.0
    mu: float = 10.0


@dataclass(frozen=True)
class TimeGrid:
    """Horizons in hours, granularities in minutes."""
    horizon_da: int = 24
    horizon_bm: int = 4
    dt_da: int = 15
    dt_id: int = 5
    dt_rt: int = 1

    @property
    def minutes_per_day(self) -> int:
        return self.horizon_da * 60


FOLLOWER_METHODS = ('newton', 'golden')


@dataclass(frozen=True)
class SolverOptions:
    max_inner_iters: int = 500
    max_outer_iters: int = 32
    follower_tol: float = 1e-4
    follower_method: str = 'newton'
    quantum: float = 0.5
    slack_grid: float = 0.5
    sf_segments: int = 32
    max_nonconverged_fraction: float = 0.05


@dataclass(frozen=True)
class ScheduleOptions:
    d_cap: float = 0.10
    soe_ref_fraction: float = 0.5
    pv_q05: float = -15.0
    pv_q95: float = 15.0


@dataclass(frozen=True)
class SiteOptions:
    latitude: float = 46.5167
    longitude: float = 6.55
    timezone: str = "Europe/Zurich"


@dataclass(frozen=True)
class MetricsOptions:
    fairness_floor_kw: float = 1.0
    rated_cycles: int = 5000


@dataclass(frozen=True)
class SyntheticOptions:
    """Synthetic scenario generator knobs (minutes, kWh, kW, $/kWh)."""
    seed: int = 42
    n_days: int = 1
    sessions_per_day: int = 30
    date: str = "2024-06-03"
    morning_peak: float = 510.0
    evening_peak: float = 1050.0
    peak_std: float = 90.0
    morning_share: float = 0.5
    stay_mean: float = 75.0
    stay_std: float = 30.0
    stay_min: int = 15
    stay_max: int = 240
    capacity_min: float = 40.0
    capacity_max: float = 100.0
    fast_share: float = 0.5
    fast_power: float = 150.0
    slow_power: float = 50.0
    soc_arrival_min: float = 0.1
    soc_arrival_max: float = 0.6
    soc_target: float = 0.9
    price_base: float = 0.12
    price_amplitude: float = 0.05
    tariff_ev: float = 0.5
    pv_noise_std: float = 0.05
    pv_noise_ar: float = 0.9


@dataclass(frozen=True)
class LoggingOptions:
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


SECTIONS = {
    'station': StationParams,
    'hyperparams': Hyperparams,
    'time_grid': TimeGrid,
    'solver': SolverOptions,
    'schedule': ScheduleOptions,
    'site': SiteOptions,
    'metrics': MetricsOptions,
    'synthetic': SyntheticOptions,
    'logging': LoggingOptions,
}


@dataclass(frozen=True)
class ValidatedConfig:
    station: StationParams
    hyperparams: Hyperparams
    time_grid: TimeGrid


def _check(condition: bool, field_name: str, message: str):
    if not condition:
        raise ConfigError(field_name, message)


def validate_station(params: StationParams):
    for name in ('eta_pv', 'eta_inv', 'eta_tr', 'eta_cp', 'eta_ch', 'eta_dh'):
        value = getattr(params, name)
        _check(0.0 < value <= 1.0, f"station.{name}", f"{name} in (0,1] violated ({value})")
    for name in ('c_rate', 'cap_bess', 'p_gc', 'p_cc', 'p_pv_peak', 'price_kwh_bess'):
        value = getattr(params, name)
        _check(value > 0, f"station.{name}", f"{name}>0 violated ({value})")
    for name in ('n_cc', 'n_cp'):
        value = getattr(params, name)
        _check(isinstance(value, int) and value > 0, f"station.{name}",
               f"{name} positive integer violated ({value})")
    _check(0.0 <= params.soc_min <= 1.0, "station.soc_min", f"soc_min in [0,1] violated ({params.soc_min})")
    _check(0.0 <= params.soc_max <= 1.0, "station.soc_max", f"soc_max in [0,1] violated ({params.soc_max})")
    _check(params.soc_min < params.soc_max, "station.soc_min",
           f"soc_min < soc_max violated ({params.soc_min} >= {params.soc_max})")
    _check(0.0 < params.d_b_eol < 1.0, "station.d_b_eol", f"d_b_eol in (0,1) violated ({params.d_b_eol})")


def validate_hyperparams(hp: Hyperparams):
    for name in ('rho0', 'eps_abs', 'eps_rel', 'eps_bisect', 'delta'):
        value = getattr(hp, name)
        _check(value > 0, f"hyperparams.{name}", f"{name}>0 violated ({value})")
    _check(hp.tau_rho > 1, "hyperparams.tau_rho", f"tau_rho>1 violated ({hp.tau_rho})")
    _check(hp.mu > 1, "hyperparams.mu", f"mu>1 violated ({hp.mu})")
    _check(hp.beta >= 0, "hyperparams.beta", f"beta>=0 violated ({hp.beta})")
    _check(hp.gamma >= 0, "hyperparams.gamma", f"gamma>=0 violated ({hp.gamma})")
    # SF(p) = b + c*(exp(100*a*p/p_ref) - 1) must stay positive, increasing and convex
    _check(hp.b > 0, "hyperparams.b", f"b>0 violated ({hp.b})")
    _check(hp.c > 0, "hyperparams.c", f"c>0 violated ({hp.c})")
    _check(hp.a > 0, "hyperparams.a", f"a>0 violated ({hp.a})")
    _check(hp.alpha >= 0, "hyperparams.alpha", f"alpha>=0 violated ({hp.alpha})")


def validate_time_grid(grid: TimeGrid):
    for name in ('horizon_da', 'horizon_bm', 'dt_da', 'dt_id', 'dt_rt'):
        value = getattr(grid, name)
        _check(isinstance(value, int) and value > 0, f"time_grid.{name}",
               f"{name} positive integer violated ({value})")
    _check(grid.dt_id % grid.dt_rt == 0, "time_grid.dt_id",
           f"dt_rt divides dt_id violated ({grid.dt_rt}, {grid.dt_id})")
    _check(grid.dt_da % grid.dt_id == 0, "time_grid.dt_da",
           f"dt_id divides dt_da violated ({grid.dt_id}, {grid.dt_da})")
    _check((grid.horizon_da * 60) % grid.dt_da == 0, "time_grid.horizon_da",
           "horizon_da multiple of dt_da violated")
    _check((grid.horizon_bm * 60) % grid.dt_id == 0, "time_grid.horizon_bm",
           "horizon_bm multiple of dt_id violated")


def validate_solver(opts: SolverOptions):
    for name in ('max_inner_iters', 'max_outer_iters', 'sf_segments'):
        value = getattr(opts, name)
        _check(isinstance(value, int) and value > 0, f"solver.{name}",
               f"{name} positive integer violated ({value})")
    for name in ('follower_tol', 'quantum', 'slack_grid'):
        value = getattr(opts, name)
        _check(value > 0, f"solver.{name}", f"{name}>0 violated ({value})")
    _check(0.0 <= opts.max_nonconverged_fraction <= 1.0, "solver.max_nonconverged_fraction",
           "max_nonconverged_fraction in [0,1] violated")
    _check(opts.follower_method in FOLLOWER_METHODS, "solver.follower_method",
           f"follower_method in {FOLLOWER_METHODS} violated ({opts.follower_method})")


def validate_config(params: StationParams, hp: Hyperparams, grid: TimeGrid) -> ValidatedConfig:
    """Return the validated bundle or raise ConfigError on the first violated invariant."""
    validate_station(params)
    validate_hyperparams(hp)
    validate_time_grid(grid)
    return ValidatedConfig(station=params, hyperparams=hp, time_grid=grid)


def _build_section(section: str, values: Dict[str, Any]):
    cls = SECTIONS[section]
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    kwargs = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        # ints stay ints (counts), everything else numeric becomes float
        if isinstance(default, bool) or isinstance(default, str):
            kwargs[key] = value
        elif isinstance(value, str):
            # YAML 1.1 reads exponents without a dot (1e-4) as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{section}.{key}", f"number expected (got '{value}')")
            kwargs[key] = int(value) if isinstance(default, int) and value.is_integer() else value
        elif isinstance(default, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            kwargs[key] = value
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


class Config:
    def __init__(self, config_path: Optional[str] = 'config/config.yaml', overrides: Optional[Dict[str, Any]] = None):
        """Initialize configuration manager"""
        self.config_path = config_path
        self.config_data = self._load_config()
        if overrides:
            self.update_config(overrides, save=False)
        self._validate()

    @staticmethod
    def default_config() -> Dict[str, Dict[str, Any]]:
        return {name: asdict(cls()) for name, cls in SECTIONS.items()}

    def _load_config(self):
        """Load configuration from YAML/JSON file with environment variable overrides"""
        config_data = self.default_config()

        if self.config_path and os.path.exists(self.config_path):
            try:
                with open(self.config_path, 'r') as f:
                    if self.config_path.endswith('.json'):
                        file_config = json.load(f)
                    else:
                        file_config = yaml.safe_load(f)
            except (yaml.YAMLError, json.JSONDecodeError) as e:
                logger.error(f"Error loading configuration {self.config_path}: {str(e)}")
                raise ConfigError(self.config_path, f"unparseable configuration file: {e}") from e
            if file_config:
                self._merge(config_data, file_config)
        elif self.config_path and self.config_path != 'config/config.yaml':
            raise ConfigError(self.config_path, "configuration file not found")

        self._apply_env_overrides(config_data)
        return config_data

    @staticmethod
    def _merge(config_data, file_config):
        if not isinstance(file_config, dict):
            raise ConfigError("<root>", "configuration must be a mapping of sections")
        for section, values in file_config.items():
            if section not in SECTIONS:
                raise ConfigError(section, "unknown section")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigError(section, "section must be a mapping")
            for key, value in values.items():
                if key not in config_data[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                config_data[section][key] = value

    def _apply_env_overrides(self, config):
        """Apply environment variable overrides"""
        if os.getenv('EVCS_LOG_LEVEL'):
            config['logging']['level'] = os.getenv('EVCS_LOG_LEVEL').upper()
        if os.getenv('EVCS_MAX_INNER_ITERS'):
            config['solver']['max_inner_iters'] = int(os.getenv('EVCS_MAX_INNER_ITERS'))
        if os.getenv('EVCS_QUANTUM'):
            config['solver']['quantum'] = float(os.getenv('EVCS_QUANTUM'))
        if os.getenv('EVCS_SEED'):
            config['synthetic']['seed'] = int(os.getenv('EVCS_SEED'))

    def _validate(self):
        validate_config(self.station_params(), self.hyperparams(), self.time_grid())
        validate_solver(self.solver_options())

    def get(self, key_path: str, default=None):
        """Get configuration value using dot notation"""
        try:
            value = self.config_data
            for key in key_path.split('.'):
                value = value[key]
            return value
        except (KeyError, TypeError):
            return default

    def section(self, name: str):
        return _build_section(name, self.config_data.get(name, {}))

    def station_params(self) -> StationParams:
        return self.section('station')

    def hyperparams(self) -> Hyperparams:
        return self.section('hyperparams')

    def time_grid(self) -> TimeGrid:
        return self.section('time_grid')

    def solver_options(self) -> SolverOptions:
        return self.section('solver')

    def schedule_options(self) -> ScheduleOptions:
        return self.section('schedule')

    def site_options(self) -> SiteOptions:
        return self.section('site')

    def metrics_options(self) -> MetricsOptions:
        return self.section('metrics')

    def synthetic_options(self) -> SyntheticOptions:
        return self.section('synthetic')

    def logging_options(self) -> LoggingOptions:
        return self.section('logging')

    def validated(self) -> ValidatedConfig:
        return validate_config(self.station_params(), self.hyperparams(), self.time_grid())

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(self.section(name)) for name in SECTIONS}

    def save_config(self, path: Optional[str] = None):
        """Save configuration to file (JSON or YAML by extension)"""
        target = path or self.config_path
        directory = os.path.dirname(target)
        if directory:
            os.makedirs(directory, exist_ok=True)

        data = self.to_dict()
        with open(target, 'w') as f:
            if target.endswith('.json'):
                json.dump(data, f, indent=2, sort_keys=True)
            else:
                yaml.dump(data, f, default_flow_style=False, indent=2)

        logger.info(f"Configuration saved to {target}")

    def update_config(self, updates: Dict[str, Any], save: bool = False):
        """Update configuration with new values"""
        merged = copy.deepcopy(self.config_data)
        self._merge(merged, updates)
        previous = self.config_data
        self.config_data = merged
        try:
            self._validate()
        except ConfigError:
            self.config_data = previous
            raise
        if save:
            self.save_config()
