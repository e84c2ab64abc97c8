"""
One EV's local problem: cost, gradient and the augmented-Lagrangian best
response used inside the ADMM sweep.
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from charging_curve import StressFunction, sf_eval, sf_derivative
from config import Hyperparams

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_BOX_SLACK = 1e-9


class SolverError(RuntimeError):
    """Numerical failure inside a solver (non-finite objective, bad inputs)."""


@dataclass(frozen=True)
class FollowerProblem:
    p_req: float
    p_max: float
    sf: StressFunction
    beta: float
    gamma: float
    theta: float = 0.0
    dt: float = 1.0
    id: str = ""
    cc_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_req <= self.p_max + _BOX_SLACK:
            raise ValueError(f"follower {self.id}: 0 <= p_req <= p_max violated ({self.p_req}, {self.p_max})")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError(f"follower {self.id}: beta, gamma >= 0 violated")
        object.__setattr__(self, '_sf_req', self.sf.value(self.p_req))
        try:
            sf_max = self.sf.value(self.p_max)
        except OverflowError:
            sf_max = math.inf
        object.__setattr__(self, '_sf_max', sf_max)

    @classmethod
    def for_ev(cls, ev_id: str, p_req: float, p_max: float, p_rated: float, hp: Hyperparams,
               theta: float = 0.0, dt: float = 1.0, cc_index: int = 0) -> "FollowerProblem":
        return cls(p_req=p_req, p_max=p_max, sf=StressFunction.from_hyperparams(hp, p_rated),
                   beta=hp.beta, gamma=hp.gamma, theta=theta, dt=dt, id=ev_id, cc_index=cc_index)

    def with_theta(self, theta: float) -> "FollowerProblem":
        return FollowerProblem(p_req=self.p_req, p_max=self.p_max, sf=self.sf, beta=self.beta,
                               gamma=self.gamma, theta=theta, dt=self.dt, id=self.id,
                               cc_index=self.cc_index)


@dataclass(frozen=True)
class CouplingContext:
    lam: float
    mu_cc: float
    rho: float
    residual_others: float
    cc_residual_others: float
    eta_cp: float
    p_cc: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho > 0 violated ({self.rho})")
        if self.mu_cc < 0:
            raise ValueError(f"mu_cc >= 0 violated ({self.mu_cc})")


def _check_box(fp: FollowerProblem, p: float):
    if not -_BOX_SLACK <= p <= fp.p_max + _BOX_SLACK:
        raise ValueError(f"follower {fp.id}: p={p} outside [0, {fp.p_max}]")


def _cost(fp: FollowerProblem, p: float) -> float:
    if p < fp.p_req:
        deficit = fp.p_req - p
        return fp.beta * deficit * deficit - fp.theta * p * fp.dt / 60.0
    return (fp.gamma * (fp.sf.value(p) / fp._sf_req - 1.0)
            - fp.theta * p * fp.dt / 60.0)


def follower_objective(fp: FollowerProblem, p: float) -> float:
    """beta*(P-)^2 + gamma*(SF(p_req+P+)/SF(p_req) - 1) - theta*p*dt/60."""
    _check_box(fp, p)
    return _cost(fp, p)


def follower_gradient(fp: FollowerProblem, p: float) -> float:
    _check_box(fp, p)
    incentive = fp.theta * fp.dt / 60.0
    if p < fp.p_req:
        return -2.0 * fp.beta * (fp.p_req - p) - incentive
    if p > fp.p_req:
        return fp.gamma * fp.sf.slope(p) / fp._sf_req - incentive
    return -incentive


def objective_curve(fp: FollowerProblem, p: np.ndarray, with_incentive: bool = True) -> np.ndarray:
    """Vectorized follower cost over an array of powers."""
    p = np.asarray(p, dtype=float)
    deficit = np.maximum(fp.p_req - p, 0.0)
    surplus = np.maximum(p - fp.p_req, 0.0)
    cost = fp.beta * deficit ** 2 + fp.gamma * (sf_eval(fp.sf, fp.p_req + surplus) / fp._sf_req - 1.0)
    if with_incentive:
        cost = cost - fp.theta * p * fp.dt / 60.0
    return cost


def gradient_curve(fp: FollowerProblem, p: np.ndarray, with_incentive: bool = True) -> np.ndarray:
    """Vectorized follower gradient; 0 is selected at the kink p = p_req."""
    p = np.asarray(p, dtype=float)
    grad = np.where(p < fp.p_req, -2.0 * fp.beta * (fp.p_req - p), 0.0)
    above = p > fp.p_req
    if np.any(above):
        grad = np.where(above, fp.gamma * sf_derivative(fp.sf, np.maximum(p, 0.0)) / fp._sf_req, grad)
    if with_incentive:
        grad = grad - fp.theta * fp.dt / 60.0
    return grad


def augmented_objective(fp: FollowerProblem, ctx: CouplingContext, p: float) -> float:
    """Follower cost plus the coupling terms of the augmented Lagrangian."""
    shared = p / ctx.eta_cp + ctx.residual_others
    column_excess = max(0.0, p + ctx.cc_residual_others - ctx.p_cc)
    return (_cost(fp, p) + ctx.lam * p / ctx.eta_cp + 0.5 * ctx.rho * shared * shared
            + ctx.mu_cc * p + 0.5 * ctx.rho * column_excess * column_excess)


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Minimize a unimodal f on [lo, hi] to a bracket of width tol."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _golden_response(fp: FollowerProblem, ctx: CouplingContext, tol: float) -> float:
    def objective(p):
        try:
            return augmented_objective(fp, ctx, p)
        except OverflowError:
            return math.inf

    kink = min(fp.p_req, fp.p_max)
    candidates = [kink, 0.0, fp.p_max]
    if kink > tol:
        candidates.append(golden_section(objective, 0.0, kink, tol))
    if fp.p_max - kink > tol:
        candidates.append(golden_section(objective, kink, fp.p_max, tol))

    best_p, best_value = None, math.inf
    for p in candidates:
        value = objective(p)
        if not math.isfinite(value):
            raise SolverError(f"follower {fp.id}: non-finite objective at p={p} (check SF parameters)")
        if value < best_value:
            best_p, best_value = p, value
    return best_p


def best_response(fp: FollowerProblem, lam: float, mu_cc: float, rho: float, residual_others: float,
                  cc_residual_others: float, eta_cp: float, p_cc: float, tol: float = 1e-4) -> float:
    """
    Minimizer of the augmented follower objective from scalar coupling terms.

    The objective is convex on [0, p_max]: the deficit side is piecewise
    quadratic and solved exactly, the surplus side has an increasing convex
    derivative whose root is reached by Newton steps from p_max.
    """
    if not math.isfinite(fp._sf_max):
        raise SolverError(f"follower {fp.id}: non-finite objective at p={fp.p_max} (check SF parameters)")
    q = fp.p_req
    hinge = p_cc - cc_residual_others
    offset = lam / eta_cp + mu_cc - fp.theta * fp.dt / 60.0
    scaled = rho / (eta_cp * eta_cp)

    def coupling_slope(p):
        return offset + rho * (p / eta_cp + residual_others) / eta_cp + rho * max(0.0, p - hinge)

    at_request = coupling_slope(q)
    if at_request >= 0.0:
        # walk down from p_req; the derivative gains slope rho past the column hinge
        a1 = 2.0 * fp.beta + scaled
        top = q
        if top > hinge:
            p = top - at_request / (a1 + rho)
            if p >= hinge:
                return max(p, 0.0)
            at_request -= (a1 + rho) * (top - hinge)
            top = hinge
        return max(top - at_request / a1, 0.0)

    if fp.p_max <= q:
        return q
    weight = fp.gamma / fp._sf_req

    def slope(p):
        return weight * fp.sf.slope(p) + coupling_slope(p)

    if slope(q) >= 0.0:
        return q
    p = fp.p_max
    for _ in range(100):
        value = slope(p)
        if not math.isfinite(value):
            raise SolverError(f"follower {fp.id}: non-finite gradient at p={p} (check SF parameters)")
        if value <= 0.0:
            break
        curvature = weight * fp.sf._k * fp.sf.slope(p) + scaled + (rho if p > hinge else 0.0)
        p_next = max(p - value / curvature, q)
        if p - p_next <= tol:
            p = p_next
            break
        p = p_next
    return p


def follower_update(fp: FollowerProblem, ctx: CouplingContext, tol: float = 1e-4, method: str = 'newton') -> float:
    """
    Best response on [0, p_max].

    `newton` uses the closed-form deficit side and Newton on the surplus
    side; `golden` runs golden-section search on each side of the kink at
    p_req and compares the one-sided minimizers with p_req and the box ends.
    """
    if method == 'golden':
        return _golden_response(fp, ctx, tol)
    if method != 'newton':
        raise ValueError(f"unknown follower method '{method}'")
    return best_response(fp, ctx.lam, ctx.mu_cc, ctx.rho, ctx.residual_others, ctx.cc_residual_others,
                         ctx.eta_cp, ctx.p_cc, tol)
