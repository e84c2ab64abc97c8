"""
Stackelberg-game ADMM controller.

The inner loop is a Gauss-Seidel ADMM over the connected EVs with one
equality coupling (fleet power at the coupling point equals the effective
budget) and one inequality per charging column. The outer loop bisects the
leader slack until the incentives needed to hold the followers at the
resulting allocation fit under the cap D.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Dict, Any, Tuple

import numpy as np

from config import Hyperparams, StationParams, SolverOptions
from follower import FollowerProblem, CouplingContext, best_response, follower_update, follower_gradient
from station import ScheduleSlice

logger = logging.getLogger(__name__)

# kW; floor on the deficit noise tolerated before a trial breaks the bisection order
BRACKET_TOL_KW = 0.05


@dataclass
class AdmmState:
    ids: Tuple[str, ...]
    p: np.ndarray
    lam: float
    mu_cc: np.ndarray
    rho: float
    k: int = 0
    r_norm: float = 0.0
    s_norm: float = 0.0
    converged: bool = False

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho > 0 violated ({self.rho})")
        if np.any(self.mu_cc < 0):
            raise ValueError("mu_cc >= 0 violated")

    def warm_for(self, followers: Sequence[FollowerProblem]) -> np.ndarray:
        """Starting powers for `followers`: previous values where known, p_req for new arrivals."""
        previous = dict(zip(self.ids, self.p))
        return np.array([min(max(previous.get(fp.id, fp.p_req), 0.0), fp.p_max) for fp in followers])


@dataclass
class SgResult:
    allocation: np.ndarray
    theta: np.ndarray
    s_l: float
    sg_iterations: int
    admm_iterations_total: int
    feasible: bool
    converged: bool = True
    lam: float = 0.0
    state: Optional[AdmmState] = None
    trials: List[Dict[str, Any]] = field(default_factory=list)


def _columns(followers: Sequence[FollowerProblem], params: StationParams) -> np.ndarray:
    cc = np.array([fp.cc_index for fp in followers], dtype=int)
    if np.any((cc < 0) | (cc >= params.n_cc)):
        raise ValueError(f"cc_index outside [0, {params.n_cc}) for some follower")
    return cc


def coupling_capacity(followers: Sequence[FollowerProblem], params: StationParams) -> float:
    """Largest fleet power at the coupling point the boxes and column caps allow."""
    cc = _columns(followers, params)
    p_max = np.array([fp.p_max for fp in followers])
    per_column = np.bincount(cc, weights=p_max, minlength=params.n_cc)
    return float(np.minimum(per_column, params.p_cc).sum() / params.eta_cp)


def _box_maximal(followers, cc, params) -> np.ndarray:
    p_max = np.array([fp.p_max for fp in followers])
    per_column = np.bincount(cc, weights=p_max, minlength=params.n_cc)
    scale = np.where(per_column > params.p_cc, params.p_cc / np.maximum(per_column, 1e-12), 1.0)
    return p_max * scale[cc]


def admm_solve(followers: Sequence[FollowerProblem], c_eff: float, hp: Hyperparams,
               params: StationParams, warm: Optional[AdmmState] = None,
               options: SolverOptions = SolverOptions()) -> AdmmState:
    """
    Coordinate the followers so that sum(p)/eta_cp == c_eff and every column
    stays under P_CC.

    Hitting the iteration cap is not an error; the returned state carries
    converged=False and the caller decides.
    """
    if not followers:
        raise ValueError("admm_solve needs at least one follower")
    if not c_eff >= 0:
        raise ValueError(f"c_eff >= 0 violated ({c_eff})")

    ids = tuple(fp.id for fp in followers)
    n = len(followers)
    eta = params.eta_cp
    cc = _columns(followers, params)
    mu = warm.mu_cc.copy() if warm is not None and len(warm.mu_cc) == params.n_cc else np.zeros(params.n_cc)
    lam = warm.lam if warm is not None else 0.0
    rho = warm.rho if warm is not None else hp.rho0

    if c_eff <= 1e-12:
        return AdmmState(ids=ids, p=np.zeros(n), lam=lam, mu_cc=mu, rho=rho, converged=True)

    capacity = coupling_capacity(followers, params)
    if c_eff > capacity * (1.0 + 1e-12) + 1e-9:
        p = _box_maximal(followers, cc, params)
        logger.debug(f"c_eff {c_eff:.3f} kW above coupling capacity {capacity:.3f} kW, box-maximal allocation")
        return AdmmState(ids=ids, p=p, lam=lam, mu_cc=mu, rho=rho,
                         r_norm=c_eff - float(p.sum()) / eta, converged=False)

    p = (warm.warm_for(followers) if warm is not None else np.array([fp.p_req for fp in followers])).tolist()
    columns = cc.tolist()
    col_sum = np.bincount(cc, weights=p, minlength=params.n_cc).tolist()
    mu_cc = mu.tolist()
    total = sum(p) / eta
    p_cc = params.p_cc
    golden = options.follower_method == 'golden'
    sqrt_n = math.sqrt(n)
    r_norm = s_norm = math.inf
    converged = False

    k = 0
    for k in range(1, options.max_inner_iters + 1):
        p_old = list(p)
        # sequential sweep: each follower sees the others' latest values
        for i, fp in enumerate(followers):
            c = columns[i]
            p_i = p[i]
            residual_others = total - p_i / eta - c_eff
            cc_residual_others = col_sum[c] - p_i
            if golden:
                ctx = CouplingContext(lam=lam, mu_cc=mu_cc[c], rho=rho, residual_others=residual_others,
                                      cc_residual_others=cc_residual_others, eta_cp=eta, p_cc=p_cc)
                new = follower_update(fp, ctx, options.follower_tol, 'golden')
            else:
                new = best_response(fp, lam, mu_cc[c], rho, residual_others, cc_residual_others, eta, p_cc,
                                    options.follower_tol)
            total += (new - p_i) / eta
            col_sum[c] += new - p_i
            p[i] = new

        r_eq = total - c_eff
        column_gap = [s - p_cc for s in col_sum]
        lam += rho * r_eq
        mu_cc = [max(0.0, m + rho * g) for m, g in zip(mu_cc, column_gap)]

        r_norm = math.sqrt(r_eq * r_eq + sum(g * g for g in column_gap if g > 0.0))
        s_norm = rho * math.sqrt(sum((a - b) ** 2 for a, b in zip(p, p_old))) / eta
        p_norm = math.sqrt(sum(x * x for x in p)) / eta
        eps_pri = sqrt_n * hp.eps_abs + hp.eps_rel * max(p_norm, c_eff)
        eps_dual = sqrt_n * hp.eps_abs + hp.eps_rel * abs(lam) / eta
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

        if r_norm > hp.mu * s_norm:
            rho *= hp.tau_rho
        elif s_norm > hp.mu * r_norm:
            rho /= hp.tau_rho

    if not converged:
        logger.debug(f"ADMM hit the iteration cap ({options.max_inner_iters}): r={r_norm:.2e} s={s_norm:.2e}")
    return AdmmState(ids=ids, p=np.array(p), lam=lam, mu_cc=np.array(mu_cc), rho=rho, k=k,
                     r_norm=r_norm, s_norm=s_norm, converged=converged)


def _intrinsic_gradient(fp: FollowerProblem, p: float) -> float:
    # follower gradient with the incentive term removed
    return follower_gradient(fp, p) + fp.theta * fp.dt / 60.0


def incentive_gradients(p: Sequence[float], followers: Sequence[FollowerProblem], delta: float) -> np.ndarray:
    return np.array([abs(delta * _intrinsic_gradient(fp, float(pi))) for fp, pi in zip(followers, p)])


def compute_incentives(p: Sequence[float], followers: Sequence[FollowerProblem], d_cap: float,
                       delta: float) -> np.ndarray:
    """theta_i = min(D, |delta * grad f_i(p_i)|), gradient taken without the incentive term."""
    if len(followers) == 0:
        return np.zeros(0)
    return np.minimum(d_cap, incentive_gradients(p, followers, delta))


def incentive_feasible(p: Sequence[float], followers: Sequence[FollowerProblem], d_cap: float,
                       delta: float, converged: bool = True) -> bool:
    if not converged:
        return False
    if len(followers) == 0:
        return True
    return bool(incentive_gradients(p, followers, delta).max() <= d_cap)


def _max_weighted_deficit(p, followers, delta) -> float:
    return max(delta * 2.0 * fp.beta * max(0.0, fp.p_req - pi) for fp, pi in zip(followers, p))


def sg_iteration_bound(eps_bisect: float) -> int:
    """Trials a bisection to relative width eps_bisect needs: s=0, the extreme, then the halvings."""
    return 2 + int(math.ceil(math.log2(1.0 / eps_bisect) - 1e-12))


class _SlackSearch:
    """Runs one ADMM solve per slack value and keeps the trial log."""

    def __init__(self, followers, slice_, hp, params, options, warm):
        self.followers = followers
        self.slice = slice_
        self.hp = hp
        self.params = params
        self.options = options
        self.warm = warm
        self.records: List[Dict[str, Any]] = []
        self.states: List[AdmmState] = []
        self.admm_iterations = 0

    def __call__(self, s: float) -> Tuple[AdmmState, bool]:
        c_eff = max(0.0, self.slice.c_budget + s)
        state = admm_solve(self.followers, c_eff, self.hp, self.params, self.warm, self.options)
        self.warm = state
        self.admm_iterations += state.k
        feasible = incentive_feasible(state.p, self.followers, self.slice.d_cap, self.hp.delta, state.converged)
        # per-EV power accuracy the stopping rule guarantees, in kW at the plug
        eps_pri = (math.sqrt(len(self.followers)) * self.hp.eps_abs
                   + self.hp.eps_rel * max(float(np.linalg.norm(state.p)) / self.params.eta_cp, c_eff))
        self.states.append(state)
        self.records.append({
            's': s,
            'c_eff': c_eff,
            'admm_iterations': state.k,
            'r_norm': state.r_norm,
            's_norm': state.s_norm,
            'converged': state.converged,
            'max_incentive_gradient': float(incentive_gradients(state.p, self.followers, self.hp.delta).max()),
            'max_weighted_deficit': _max_weighted_deficit(state.p, self.followers, self.hp.delta),
            'noise_kw': max(BRACKET_TOL_KW, eps_pri * self.params.eta_cp),
            'feasible': feasible,
        })
        logger.debug(f"slack trial s={s:.4f} c_eff={c_eff:.3f} k={state.k} feasible={feasible}")
        return state, feasible

    def result(self, index: int, feasible: bool) -> SgResult:
        state = self.states[index]
        theta = compute_incentives(state.p, self.followers, self.slice.d_cap, self.hp.delta)
        return SgResult(allocation=state.p.copy(), theta=theta, s_l=self.records[index]['s'],
                        sg_iterations=len(self.records), admm_iterations_total=self.admm_iterations,
                        feasible=feasible, converged=state.converged, lam=state.lam, state=state,
                        trials=list(self.records))

    def order_broken(self) -> bool:
        """True when a converged trial at larger |s| shows a larger deficit than one at smaller |s|, beyond solver noise."""
        weight = 2.0 * self.hp.delta * max(fp.beta for fp in self.followers)
        converged = sorted((abs(r['s']), r['max_weighted_deficit'], r['noise_kw'])
                           for r in self.records if r['converged'])
        return any(later[1] > earlier[1] + weight * max(earlier[2], later[2])
                   for i, earlier in enumerate(converged) for later in converged[i + 1:]
                   if later[0] > earlier[0])


def slack_side(followers: Sequence[FollowerProblem], slice_: ScheduleSlice,
               params: StationParams) -> float:
    """
    Signed extreme of the slack range worth searching.

    The gap between the followers' ideal demand (capped by what the columns
    can absorb) and the budget picks the side: positive searches [0, s_max],
    negative [s_min, 0]. Past the ideal point no follower gets closer to its
    request, so the search stops there or at the slack bound.
    """
    demand = sum(fp.p_req for fp in followers) / params.eta_cp
    gap = min(demand, coupling_capacity(followers, params)) - slice_.c_budget
    if gap > 0:
        return min(slice_.s_max, gap)
    return max(slice_.s_min, gap)


def _scan_bracket(search: _SlackSearch, sign: float, low: float, high: float, high_index: int,
                  width: float, budget: int) -> SgResult:
    """Ascending scan of (low, high) on the eps grid, coarsened to the trials left in the budget."""
    remaining = budget - len(search.records)
    if remaining <= 0:
        return search.result(high_index, True)
    step = max(width, (high - low) / (remaining + 1))
    s = low + step
    while s < high and len(search.records) < budget:
        _, feasible = search(sign * s)
        if feasible:
            return search.result(len(search.records) - 1, True)
        s += step
    return search.result(high_index, True)


def sg_equilibrium(followers: Sequence[FollowerProblem], slice_: ScheduleSlice, hp: Hyperparams,
                   params: StationParams, options: SolverOptions = SolverOptions(),
                   warm: Optional[AdmmState] = None) -> SgResult:
    """
    Smallest |s| whose ADMM allocation needs incentives within D, found by
    bisection. At most sg_iteration_bound(eps_bisect) trials (or
    max_outer_iters if lower) run on every path.
    """
    if not followers:
        raise ValueError("sg_equilibrium needs at least one follower")

    budget = min(options.max_outer_iters, sg_iteration_bound(hp.eps_bisect))
    search = _SlackSearch(followers, slice_, hp, params, options, warm)
    _, feasible = search(0.0)
    if feasible:
        return search.result(0, True)

    extreme = slack_side(followers, slice_, params)
    if extreme == 0.0 or budget < 2:
        return search.result(0, False)

    _, feasible = search(extreme)
    if not feasible:
        logger.debug(f"slack extreme {extreme:.3f} kW infeasible, returning it flagged")
        return search.result(1, False)

    low, high = 0.0, abs(extreme)
    high_index = 1
    sign = 1.0 if extreme > 0 else -1.0
    width = hp.eps_bisect * abs(extreme)
    while high - low > width and len(search.records) < budget:
        mid = 0.5 * (low + high)
        _, feasible = search(sign * mid)
        if feasible:
            high, high_index = mid, len(search.records) - 1
        else:
            low = mid
        if search.order_broken():
            logger.warning(f"slack bisection order violated near s={sign * mid:.3f} kW, "
                           f"scanning [{sign * low:.3f}, {sign * high:.3f}] kW")
            return _scan_bracket(search, sign, low, high, high_index, width, budget)

    return search.result(high_index, True)


def linear_scan_slack(followers: Sequence[FollowerProblem], slice_: ScheduleSlice, hp: Hyperparams,
                      params: StationParams, options: SolverOptions = SolverOptions(),
                      warm: Optional[AdmmState] = None) -> SgResult:
    """Scan the slack side on a grid of step eps_bisect*range and keep the smallest feasible |s|."""
    if not followers:
        raise ValueError("linear_scan_slack needs at least one follower")

    search = _SlackSearch(followers, slice_, hp, params, options, warm)
    _, feasible = search(0.0)
    if feasible:
        return search.result(0, True)

    extreme = slack_side(followers, slice_, params)
    if extreme == 0.0:
        return search.result(0, False)

    steps = int(math.ceil(1.0 / hp.eps_bisect - 1e-9))
    for j in range(1, steps + 1):
        s = extreme * min(1.0, j * hp.eps_bisect)
        _, feasible = search(s)
        if feasible:
            return search.result(len(search.records) - 1, True)
    return search.result(len(search.records) - 1, False)
