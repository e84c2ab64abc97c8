"""
Domain types shared by controllers, the simulator and scenario I/O.

Units: kW, kWh, $/kWh, integer minutes from simulation midnight.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, List, Dict, Any

import numpy as np

from charging_curve import PowerSocCurve, curve_eval


@dataclass(frozen=True)
class ScheduleSlice:
    """Leader inputs for one intra-day slot."""
    c_budget: float
    p_bess_setpoint: float
    d_cap: float
    s_min: float
    s_max: float
    tariff_ev: float
    price_dam: float
    price_short: float
    price_long: float

    def __post_init__(self):
        for name in ('c_budget', 'p_bess_setpoint', 'd_cap', 's_min', 's_max',
                     'tariff_ev', 'price_dam', 'price_short', 'price_long'):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.s_min <= 0.0 <= self.s_max:
            raise ValueError(f"s_min <= 0 <= s_max violated ({self.s_min}, {self.s_max})")
        if self.d_cap < 0:
            raise ValueError(f"d_cap >= 0 violated ({self.d_cap})")
        if self.c_budget < 0:
            raise ValueError(f"c_budget >= 0 violated ({self.c_budget})")


@dataclass(frozen=True)
class EvSession:
    """One booking: arrival/departure are minute indices, departure exclusive."""
    id: str
    arrival: int
    departure: int
    capacity: float
    soc_arrival: float
    energy_request: float
    cc_index: int = -1
    cp_index: int = -1
    p_rated: float = 150.0
    p_request: Optional[float] = None
    curve: Optional[PowerSocCurve] = None

    def __post_init__(self):
        if self.arrival >= self.departure:
            raise ValueError(f"session {self.id}: arrival < departure violated")
        if not 0.0 <= self.soc_arrival <= 1.0:
            raise ValueError(f"session {self.id}: soc_arrival in [0,1] violated")
        if self.capacity <= 0:
            raise ValueError(f"session {self.id}: capacity > 0 violated")
        if self.energy_request < 0:
            raise ValueError(f"session {self.id}: energy_request >= 0 violated")
        if self.energy_request > self.capacity * (1.0 - self.soc_arrival) + 1e-9:
            raise ValueError(f"session {self.id}: energy_request <= capacity*(1-soc_arrival) violated")
        if self.p_rated <= 0:
            raise ValueError(f"session {self.id}: p_rated > 0 violated")
        if self.p_request is not None and self.p_request < 0:
            raise ValueError(f"session {self.id}: p_request >= 0 violated")

    @property
    def charging_curve(self) -> PowerSocCurve:
        return self.curve if self.curve is not None else PowerSocCurve.cc_cv(self.p_rated)

    @property
    def stay(self) -> int:
        return self.departure - self.arrival

    def is_connected(self, minute: int) -> bool:
        return self.arrival <= minute < self.departure


@dataclass
class EvState:
    session: EvSession
    soc: float
    p_req: float = 0.0
    p_max: float = 0.0
    p_alloc: float = 0.0
    theta: float = 0.0
    energy_delivered: float = 0.0

    @classmethod
    def arrive(cls, session: EvSession) -> "EvState":
        return cls(session=session, soc=session.soc_arrival)

    def refresh_request(self, dt: float):
        """Update p_max and p_req from the curve at the current SoC."""
        self.p_max, self.p_req = requested_power(self.session, self.soc, self.energy_delivered, dt)


def requested_power(session: EvSession, soc: float, energy_delivered: float, dt: float) -> Tuple[float, float]:
    """
    Physical cap and requested power for one step.

    p_max is the curve cap at soc limited to what the remaining energy request
    can absorb in dt minutes; p_req additionally honours the user request.
    """
    remaining = max(0.0, session.energy_request - energy_delivered)
    p_max = min(curve_eval(session.charging_curve, min(max(soc, 0.0), 1.0)), remaining * 60.0 / dt)
    p_req = p_max if session.p_request is None else min(p_max, session.p_request)
    return p_max, p_req


@dataclass
class Allocation:
    """One control step's solution."""
    ids: Tuple[str, ...]
    p: np.ndarray
    theta: np.ndarray
    s: float = 0.0
    lam: float = 0.0
    converged: bool = True
    feasible: bool = True
    stalled: bool = False
    admm_iterations: int = 0
    sg_iterations: int = 0
    objective: float = float('nan')
    telemetry: List[Dict[str, Any]] = field(default_factory=list)

    @classmethod
    def empty(cls) -> "Allocation":
        return cls(ids=(), p=np.zeros(0), theta=np.zeros(0))

    @property
    def total(self) -> float:
        return float(self.p.sum())
