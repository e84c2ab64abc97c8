"""
EV surrogate model: power-vs-SoC curves, the SF stress function and SoC
time integration.
"""

import math
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import pandas as pd

from config import Hyperparams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerSocCurve:
    """Piecewise-linear maximum charging power (kW) as a function of SoC."""
    breakpoints: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        points = tuple((float(s), float(p)) for s, p in self.breakpoints)
        if len(points) < 2:
            raise ValueError("breakpoints: at least two points required")
        socs = [s for s, _ in points]
        if socs[0] != 0.0 or socs[-1] != 1.0:
            raise ValueError("breakpoints: soc must cover [0, 1]")
        if any(b <= a for a, b in zip(socs, socs[1:])):
            raise ValueError("breakpoints: soc must be strictly increasing")
        if any(p < 0 for _, p in points):
            raise ValueError("breakpoints: p_max must be non-negative")
        object.__setattr__(self, 'breakpoints', points)
        object.__setattr__(self, '_soc', np.array(socs))
        object.__setattr__(self, '_power', np.array([p for _, p in points]))

    @property
    def p_rated(self) -> float:
        """Curve maximum, used as the SF normalization."""
        return float(self._power.max())

    @classmethod
    def cc_cv(cls, p_rated: float, knee: float = 0.8) -> "PowerSocCurve":
        """Constant power up to the knee, linear taper to zero at full charge."""
        return cls(((0.0, p_rated), (knee, p_rated), (1.0, 0.0)))


def curve_eval(curve: PowerSocCurve, soc: float) -> float:
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"soc {soc} outside [0, 1]")
    return float(np.interp(soc, curve._soc, curve._power))


def load_curve_csv(path: str) -> PowerSocCurve:
    """Read a curve from a CSV with `soc` and `p_max` columns."""
    df = pd.read_csv(path, comment='#')
    df.columns = [str(col).strip().lower() for col in df.columns]
    missing = {'soc', 'p_max'} - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    df = df.sort_values('soc')
    return PowerSocCurve(tuple(zip(df['soc'].astype(float), df['p_max'].astype(float))))


@dataclass(frozen=True)
class StressFunction:
    """SF(p) = b + c*(exp(100*a*p/p_ref) - 1), positive, increasing and convex."""
    a: float
    b: float
    c: float
    p_ref: float

    def __post_init__(self):
        if self.p_ref <= 0:
            raise ValueError(f"p_ref must be positive ({self.p_ref})")
        object.__setattr__(self, '_k', 100.0 * self.a / self.p_ref)

    @classmethod
    def from_hyperparams(cls, hp: Hyperparams, p_ref: float) -> "StressFunction":
        return cls(a=hp.a, b=hp.b, c=hp.c, p_ref=p_ref)

    def value(self, p: float) -> float:
        return self.b + self.c * (math.exp(self._k * p) - 1.0)

    def slope(self, p: float) -> float:
        return self.c * self._k * math.exp(self._k * p)


def _check_non_negative(p):
    if np.any(np.asarray(p) < 0):
        raise ValueError(f"power must be non-negative (got {p})")


def sf_eval(sf: StressFunction, p):
    _check_non_negative(p)
    if np.ndim(p) == 0:
        return sf.value(float(p))
    return sf.b + sf.c * (np.exp(sf._k * np.asarray(p, dtype=float)) - 1.0)


def sf_derivative(sf: StressFunction, p):
    _check_non_negative(p)
    if np.ndim(p) == 0:
        return sf.slope(float(p))
    return sf.c * sf._k * np.exp(sf._k * np.asarray(p, dtype=float))


@dataclass(frozen=True)
class PiecewiseLinear:
    knots: np.ndarray
    values: np.ndarray

    def __call__(self, p):
        return np.interp(p, self.knots, self.values)


def sf_piecewise(sf: StressFunction, segments: int = 32, p_max: float = None) -> Tuple[PiecewiseLinear, PiecewiseLinear]:
    """Piecewise-linear tabulations of SF and SF' over [0, p_max] (default 2*p_ref)."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    upper = 2.0 * sf.p_ref if p_max is None else p_max
    knots = np.linspace(0.0, upper, segments + 1)
    return (PiecewiseLinear(knots, sf_eval(sf, knots)),
            PiecewiseLinear(knots, sf_derivative(sf, knots)))


def integrate_soc(curve: PowerSocCurve, soc0: float, p_sched: Sequence[float], dt: float,
                  capacity: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Step the SoC through a power schedule.

    Returns (soc, energy): soc has len(p_sched)+1 entries starting at soc0,
    energy holds the kWh delivered in each step.
    """
    if capacity <= 0:
        raise ValueError(f"capacity must be positive ({capacity})")
    schedule = np.asarray(p_sched, dtype=float)
    if np.any(schedule < 0):
        raise ValueError("p_sched must be non-negative")

    soc = np.empty(len(schedule) + 1)
    energy = np.zeros(len(schedule))
    soc[0] = soc0
    current = soc0
    for j, requested in enumerate(schedule):
        delivered = min(requested, curve_eval(curve, current))
        step_energy = delivered * dt / 60.0
        room = (1.0 - current) * capacity
        if step_energy >= room:
            step_energy = room
            current = 1.0
        else:
            current = current + step_energy / capacity
        energy[j] = step_energy
        soc[j + 1] = current
    return soc, energy
