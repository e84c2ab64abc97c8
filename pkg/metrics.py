"""
Evaluation metrics over simulation traces.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, Any, Sequence, Union, List

import numpy as np
import pandas as pd

from config import StationParams, TimeGrid, MetricsOptions
from scenario_io import ScheduleSeries
from simulator import SimulationTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProfitBreakdown:
    dam_cost: float
    bm_cost: float
    potential_profit: float
    incentives_paid: float
    net_profit: float

    def __post_init__(self):
        expected = self.potential_profit - self.dam_cost - self.bm_cost - self.incentives_paid
        if abs(self.net_profit - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError("net_profit must equal potential - dam - bm - incentives")


@dataclass(frozen=True)
class FairnessReport:
    per_ev: pd.Series
    gini: float


@dataclass(frozen=True)
class WearReport:
    cycles: float
    wear: float
    wear_per_day: float


def gini(x: Sequence[float]) -> float:
    """G = 2*sum(i*x_i) / (n*sum(x)) - (n+1)/n over x sorted ascending; 0 when sum(x) is 0."""
    values = np.sort(np.asarray(x, dtype=float))
    if values.size == 0:
        raise ValueError("gini needs at least one value")
    if np.any(values < 0):
        raise ValueError("gini is defined for non-negative values only")
    total = values.sum()
    if total == 0:
        return 0.0
    n = values.size
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.sum(ranks * values) / (n * total) - (n + 1.0) / n)


def fairness(trace: SimulationTrace, floor_kw: float = 1.0) -> FairnessReport:
    """Per-EV mean absolute per-unit deviation from the request, and its Gini index."""
    ev = trace.ev
    if ev.empty:
        return FairnessReport(per_ev=pd.Series(dtype=float), gini=0.0)
    deviation = (ev['p_alloc'] - ev['p_req']).abs() / np.maximum(ev['p_req'], floor_kw)
    per_ev = deviation.groupby(ev['id']).mean()
    return FairnessReport(per_ev=per_ev, gini=gini(per_ev.to_numpy()))


def profit_breakdown(trace: SimulationTrace, schedule: ScheduleSeries, grid: TimeGrid = TimeGrid()) -> ProfitBreakdown:
    steps = trace.steps
    if steps.empty:
        return ProfitBreakdown(0.0, 0.0, 0.0, 0.0, 0.0)
    slots = steps['slot'].to_numpy(dtype=int)
    if slots.max() >= len(schedule) or np.any(slots != steps['minute'].to_numpy(dtype=int) // grid.dt_id):
        raise ValueError("trace and schedule are not aligned")

    hours = grid.dt_rt / 60.0
    p_dp = schedule.p_grid_dp[slots]
    p_g = steps['p_g'].to_numpy(dtype=float)
    short = np.maximum(p_g - p_dp, 0.0) * hours
    long_ = np.maximum(p_dp - p_g, 0.0) * hours

    potential = float(np.sum(steps['tariff_ev'] * steps['p_ev_total'] * hours))
    dam_cost = float(np.sum(steps['price_dam'].to_numpy() * p_dp * hours))
    bm_cost = float(np.sum(steps['price_short'].to_numpy() * short - steps['price_long'].to_numpy() * long_))
    incentives = float(steps['incentives'].sum())
    return ProfitBreakdown(dam_cost=dam_cost, bm_cost=bm_cost, potential_profit=potential,
                           incentives_paid=incentives,
                           net_profit=potential - dam_cost - bm_cost - incentives)


def battery_wear(trace: SimulationTrace, params: StationParams, rated_cycles: int = 5000,
                 grid: TimeGrid = TimeGrid()) -> WearReport:
    """Throughput model: equivalent full cycles times the capacity fade per rated cycle."""
    throughput = float(trace.steps['p_b'].abs().sum()) * grid.dt_rt / 60.0 if not trace.steps.empty else 0.0
    cycles = throughput / (2.0 * params.cap_bess)
    wear = cycles * (1.0 - params.d_b_eol) / rated_cycles
    days = max(trace.minutes * grid.dt_rt / grid.minutes_per_day, 1e-12)
    return WearReport(cycles=cycles, wear=wear, wear_per_day=wear / days if trace.minutes else 0.0)


def _completion_minutes(ev: pd.DataFrame, targets: pd.Series, dt: int) -> pd.Series:
    done = {}
    for ev_id, rows in ev.groupby('id', sort=True):
        reached = rows[rows['energy_delivered'] >= targets[ev_id] - 1e-9]
        last = rows['minute'].max() + dt
        done[ev_id] = (reached['minute'].min() + dt) if not reached.empty else last
    return pd.Series(done, dtype=float)


def extra_charging_time(trace_method: SimulationTrace, trace_reference: SimulationTrace,
                        grid: TimeGrid = TimeGrid()) -> pd.Series:
    """
    Minutes the method needs beyond the reference to bring each EV to the
    energy both runs reached (capped by the request).
    """
    method, reference = trace_method.ev, trace_reference.ev
    ids = set(method['id']) if not method.empty else set()
    if ids != (set(reference['id']) if not reference.empty else set()):
        raise ValueError("traces cover different sessions")
    if not ids:
        return pd.Series(dtype=float)

    final_method = method.groupby('id')['energy_delivered'].max()
    final_reference = reference.groupby('id')['energy_delivered'].max()
    request = method.groupby('id')['energy_request'].first()
    targets = pd.concat([final_method, final_reference, request], axis=1).min(axis=1)

    delta = (_completion_minutes(method, targets, grid.dt_rt)
             - _completion_minutes(reference, targets, grid.dt_rt))
    return delta.sort_index()


def timing_report(samples: Union[pd.DataFrame, List[Dict[str, Any]]]) -> pd.DataFrame:
    """Mean wall-clock and sample count per (controller, n_ev)."""
    df = samples if isinstance(samples, pd.DataFrame) else pd.DataFrame(samples)
    if df.empty:
        return pd.DataFrame(columns=['controller', 'n_ev', 'mean_seconds', 'count'])
    report = (df.groupby(['controller', 'n_ev'])['seconds']
                .agg(mean_seconds='mean', count='count')
                .reset_index())
    return report


def summarize(trace: SimulationTrace, schedule: ScheduleSeries, params: StationParams,
              grid: TimeGrid = TimeGrid(), opts: MetricsOptions = MetricsOptions()) -> Dict[str, Any]:
    """Every run-level metric as plain JSON-ready values."""
    steps = trace.steps
    report = fairness(trace, opts.fairness_floor_kw)
    hours = grid.dt_rt / 60.0
    controlled = steps[steps['n_controlled'] > 0] if not steps.empty else steps
    summary = {
        'controller': trace.controller,
        'minutes': trace.minutes,
        'sessions': int(trace.ev['id'].nunique()) if not trace.ev.empty else 0,
        'energy_delivered_kwh': float(steps['p_ev_total'].sum() * hours) if not steps.empty else 0.0,
        'profit': asdict(profit_breakdown(trace, schedule, grid)),
        'wear': asdict(battery_wear(trace, params, opts.rated_cycles, grid)),
        'fairness': {'gini': report.gini,
                     'mean_score': float(report.per_ev.mean()) if len(report.per_ev) else 0.0,
                     'per_ev': {str(k): float(v) for k, v in report.per_ev.items()}},
        'gcp_violation_minutes': int((steps['gcp_violation'] > 0).sum()) if not steps.empty else 0,
        'coupling_violation_minutes': int((steps['coupling_violation'] > 0).sum()) if not steps.empty else 0,
        'infeasible_minutes': int((~controlled['feasible'].astype(bool)).sum()) if not controlled.empty else 0,
        'nonconverged_fraction': trace.nonconverged_fraction() if not steps.empty else 0.0,
        'mean_sg_iterations': float(controlled['sg_iterations'].mean()) if not controlled.empty else 0.0,
        'mean_admm_iterations': float(controlled['admm_iterations'].mean()) if not controlled.empty else 0.0,
    }
    return summary
