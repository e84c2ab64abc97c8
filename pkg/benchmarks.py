"""
Comparison controllers: the centralized discretized optimum, plain ADMM
without incentives, and the uncontrolled greedy policy.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from charging_curve import sf_piecewise
from config import Hyperparams, StationParams, SolverOptions
from follower import FollowerProblem, objective_curve, gradient_curve
from sg_admm import AdmmState, admm_solve
from station import Allocation, ScheduleSlice

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CentralizedProblem:
    followers: Tuple[FollowerProblem, ...]
    slice: ScheduleSlice
    quantum: float = 0.5
    slack_grid: float = 0.5
    sf_segments: Optional[int] = None

    def __post_init__(self):
        if self.quantum <= 0:
            raise ValueError(f"quantum > 0 violated ({self.quantum})")
        if self.slack_grid <= 0:
            raise ValueError(f"slack_grid > 0 violated ({self.slack_grid})")
        if self.sf_segments is not None and self.sf_segments < 1:
            raise ValueError(f"sf_segments >= 1 violated ({self.sf_segments})")
        object.__setattr__(self, 'followers', tuple(self.followers))


def discomfort_curves(fp: FollowerProblem, p: np.ndarray,
                      segments: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Follower cost and gradient without the incentive term; SF tabulated when `segments` is set."""
    if segments is None:
        return objective_curve(fp, p, with_incentive=False), gradient_curve(fp, p, with_incentive=False)
    value, slope = sf_piecewise(fp.sf, segments, p_max=max(fp.p_max, fp.p_req, 1e-6))
    p = np.asarray(p, dtype=float)
    sf_req = float(value(fp.p_req))
    deficit = np.maximum(fp.p_req - p, 0.0)
    cost = fp.beta * deficit ** 2 + fp.gamma * (value(np.maximum(p, fp.p_req)) / sf_req - 1.0)
    grad = np.where(p < fp.p_req, -2.0 * fp.beta * deficit,
                    np.where(p > fp.p_req, fp.gamma * slope(p) / sf_req, 0.0))
    return cost, grad


def incentive_curve(fp: FollowerProblem, p: np.ndarray, d_cap: float, delta: float,
                    segments: Optional[int] = None) -> np.ndarray:
    return np.minimum(d_cap, np.abs(delta * discomfort_curves(fp, p, segments)[1]))


def ev_cost_curve(fp: FollowerProblem, p: np.ndarray, slice_: ScheduleSlice, delta: float,
                  segments: Optional[int] = None) -> np.ndarray:
    """Leader cost attributable to one EV: lost revenue, its discomfort and the incentive paid."""
    energy = p * fp.dt / 60.0
    cost, grad = discomfort_curves(fp, p, segments)
    theta = np.minimum(slice_.d_cap, np.abs(delta * grad))
    return -slice_.tariff_ev * energy + cost + theta * energy


def slack_cost(s: float, alpha: float, dt: float) -> float:
    return alpha * abs(s) * dt / 60.0


def leader_objective(followers: Sequence[FollowerProblem], slice_: ScheduleSlice, p: Sequence[float],
                     s: float, hp: Hyperparams) -> float:
    """sum_i [f*_i + f_i + theta_i(P_i) * P_i * dt] + alpha * |s| * dt."""
    if len(followers) == 0:
        return 0.0
    dt = followers[0].dt
    total = sum(float(ev_cost_curve(fp, np.array([pi], dtype=float), slice_, hp.delta)[0])
                for fp, pi in zip(followers, p))
    return total + slack_cost(s, hp.alpha, dt)


def _min_plus(prev: np.ndarray, cost: np.ndarray, cap: int) -> Tuple[np.ndarray, np.ndarray]:
    """best[t] = min_k prev[t-k] + cost[k] for t <= cap; ties keep the smallest k."""
    size = min(len(prev) + len(cost) - 1, cap + 1)
    best = np.full(size, np.inf)
    choice = np.full(size, -1, dtype=int)
    for k, ck in enumerate(cost):
        if k >= size:
            break
        m = min(len(prev), size - k)
        candidate = prev[:m] + ck
        window = best[k:k + m]
        better = candidate < window
        window[better] = candidate[better]
        choice[k:k + m][better] = k
    return best, choice


def _levels(fp: FollowerProblem, quantum: float) -> np.ndarray:
    return np.arange(int(np.floor(fp.p_max / quantum + 1e-9)) + 1) * quantum


def centralized_solve(cp: CentralizedProblem, hp: Hyperparams, params: StationParams) -> Allocation:
    """
    Exact optimum of the leader problem at the power quantum.

    Per column a min-plus chain over the EVs' quantized powers capped at
    P_CC, then a chain over columns gives the cheapest way to reach every
    total-power level. Each level fixes the slack s = total/eta_cp - C; the
    s+ and s- branches keep the levels whose slack is inside their bound.
    """
    followers = cp.followers
    if not followers:
        raise ValueError("centralized_solve needs at least one follower")
    q = cp.quantum
    slice_ = cp.slice
    ids = tuple(fp.id for fp in followers)

    levels = [_levels(fp, q) for fp in followers]
    costs = [ev_cost_curve(fp, lv, slice_, hp.delta, cp.sf_segments) for fp, lv in zip(followers, levels)]

    columns = {}
    for i, fp in enumerate(followers):
        columns.setdefault(fp.cc_index, []).append(i)
    column_cap = int(np.floor(params.p_cc / q + 1e-9))

    column_tables = []
    for cc in sorted(columns):
        members = columns[cc]
        table = np.zeros(1)
        stages = []
        for i in members:
            table, choice = _min_plus(table, costs[i], column_cap)
            stages.append((i, choice))
        column_tables.append((table, stages))

    fleet = np.zeros(1)
    fleet_stages = []
    for table, stages in column_tables:
        fleet, choice = _min_plus(fleet, table, len(fleet) + len(table))
        fleet_stages.append((choice, stages))

    totals = np.arange(len(fleet)) * q
    slack = totals / params.eta_cp - slice_.c_budget
    value = fleet + hp.alpha * np.abs(slack) * followers[0].dt / 60.0

    best_t, feasible = None, True
    for branch in (slack >= 0) & (slack <= slice_.s_max), (slack <= 0) & (slack >= slice_.s_min):
        candidates = np.flatnonzero(branch & np.isfinite(value))
        if len(candidates) == 0:
            continue
        t = int(candidates[np.argmin(value[candidates])])
        if best_t is None or value[t] < value[best_t] or (value[t] == value[best_t] and t < best_t):
            best_t = t

    if best_t is None:
        reachable = np.flatnonzero(np.isfinite(value))
        distance = np.maximum(slack[reachable] - slice_.s_max, 0.0) + np.maximum(slice_.s_min - slack[reachable], 0.0)
        nearest = int(np.argmin(distance))
        best_t = int(reachable[nearest])
        # quantization can step over a narrow slack range; within one slack grid step it still counts
        feasible = bool(distance[nearest] <= cp.slack_grid)
        if not feasible:
            logger.warning(f"centralized: no total level inside the slack bounds, boundary level {best_t * q:.2f} kW")

    p = np.zeros(len(followers))
    t = best_t
    for choice, stages in reversed(fleet_stages):
        k_column = int(choice[t])
        t -= k_column
        for i, ev_choice in reversed(stages):
            k = int(ev_choice[k_column])
            p[i] = levels[i][k]
            k_column -= k

    theta = np.array([float(incentive_curve(fp, np.array([pi]), slice_.d_cap, hp.delta, cp.sf_segments)[0])
                      for fp, pi in zip(followers, p)])
    return Allocation(ids=ids, p=p, theta=theta, s=float(slack[best_t]), converged=True,
                      feasible=feasible, objective=float(value[best_t]),
                      telemetry=[{'levels': int(len(fleet)), 'quantum': q}])


def distributed_solve(followers: Sequence[FollowerProblem], c_budget: float, hp: Hyperparams,
                      params: StationParams, options: SolverOptions = SolverOptions(),
                      warm: Optional[AdmmState] = None) -> Tuple[Allocation, AdmmState]:
    """Plain ADMM on the budget: no incentives and no slack."""
    plain = [fp.with_theta(0.0) for fp in followers]
    state = admm_solve(plain, c_budget, hp, params, warm, options)
    allocation = Allocation(ids=state.ids, p=state.p.copy(), theta=np.zeros(len(plain)), s=0.0,
                            lam=state.lam, converged=state.converged, feasible=state.converged,
                            admm_iterations=state.k,
                            telemetry=[{'admm_iterations': state.k, 'r_norm': state.r_norm,
                                        's_norm': state.s_norm, 'converged': state.converged}])
    return allocation, state


def uncontrolled_step(followers: Sequence[FollowerProblem]) -> Allocation:
    """Every EV takes its request, capped by the curve."""
    if not followers:
        return Allocation.empty()
    p = np.array([min(fp.p_req, fp.p_max) for fp in followers])
    return Allocation(ids=tuple(fp.id for fp in followers), p=p, theta=np.zeros(len(followers)))

