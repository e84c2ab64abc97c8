"""
Real-time physical dispatch, BESS bookkeeping and the short-term forecasts
the station uses (PV persistence and imbalance prices).
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import pandas as pd
import pvlib

from config import StationParams, SiteOptions

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class DispatchResult:
    p_g: float
    p_b: float
    pv_used: float
    gcp_violation: float
    crate_clipped: bool
    conversion_loss: float = 0.0


def dispatch(c_total: float, p_b_setpoint: float, pv_real: float, params: StationParams) -> DispatchResult:
    """
    One minute of the station dispatch.

    The grid covers the EV load plus the BESS setpoint net of PV, capped at
    the connection limit; the BESS takes the remainder. A BESS saturated on
    its C-rate hands the excess back to the grid, even past P_GC, and that
    excess is reported as a violation.

    conversion_loss is the balance residual p_g*eta_tr + PV - p_b - C left by the
    inverter and charge/discharge efficiencies on a clipped correction; zero otherwise.
    """
    if c_total < 0:
        raise ValueError(f"c_total >= 0 violated ({c_total})")
    if pv_real < 0:
        raise ValueError(f"pv_real >= 0 violated ({pv_real})")

    pv = pv_real * params.eta_pv
    p_g = min(params.p_gc, (c_total + p_b_setpoint - pv) / params.eta_tr)
    p_b = p_g * params.eta_tr + pv - c_total

    limit = params.p_bess_max
    clipped = False
    if p_b > limit:
        excess = p_b - limit
        p_b = limit
        p_g -= excess / (params.eta_inv * params.eta_ch * params.eta_tr)
        clipped = True
    elif p_b < -limit:
        shortfall = -limit - p_b
        p_b = -limit
        p_g += shortfall * params.eta_inv * params.eta_dh * params.eta_tr
        clipped = True

    violation = max(0.0, abs(p_g) - params.p_gc)
    if violation > 0:
        logger.debug(f"GCP exceeded by {violation:.3f} kW (p_g={p_g:.3f})")
    loss = p_g * params.eta_tr + pv - p_b - c_total
    return DispatchResult(p_g=p_g, p_b=p_b, pv_used=pv_real, gcp_violation=violation,
                          crate_clipped=clipped, conversion_loss=loss)


@dataclass(frozen=True)
class BessState:
    soe: float
    capacity: float

    @property
    def soc(self) -> float:
        return self.soe / self.capacity

    @classmethod
    def at_fraction(cls, fraction: float, params: StationParams) -> "BessState":
        return cls(soe=fraction * params.cap_bess, capacity=params.cap_bess)


def soe_step(state: BessState, p_b: float, dt: float, params: StationParams) -> Tuple[BessState, float]:
    """
    Integrate the BESS over dt minutes.

    Returns the new state and the reroute: the part of p_b (kW, same sign)
    the BESS could not take because the SoE hit its window.
    """
    hours = dt / 60.0
    if p_b >= 0:
        soe = state.soe + p_b * params.eta_ch * hours
    else:
        soe = state.soe + p_b / params.eta_dh * hours

    lo = params.soc_min * params.cap_bess
    hi = params.soc_max * params.cap_bess
    reroute = 0.0
    if p_b > 0 and soe > hi:
        absorbed = max(0.0, hi - state.soe) / (params.eta_ch * hours)
        reroute = p_b - absorbed
        soe = max(hi, state.soe)
    elif p_b < 0 and soe < lo:
        delivered = min(0.0, lo - state.soe) * params.eta_dh / hours
        reroute = p_b - delivered
        soe = min(lo, state.soe)
    if reroute:
        logger.debug(f"BESS saturated at soe={soe:.2f} kWh, rerouting {reroute:.3f} kW to the grid")
    return BessState(soe=soe, capacity=state.capacity), reroute


def rp_forecast(p_prev: float, elev_now: ArrayLike, elev_prev: float, horizon: int = 15) -> np.ndarray:
    """
    Robust Persistence: last PV power scaled by the sun elevation ratio.

    elev_now is either one elevation or one per forecast minute.
    """
    if elev_prev <= 0:
        return np.zeros(horizon)
    elevations = np.broadcast_to(np.asarray(elev_now, dtype=float), (horizon,))
    return np.maximum(0.0, p_prev * elevations / elev_prev)


def persistence_bounds(p_prev: float, q05: float, q95: float) -> Tuple[float, float, float]:
    if not q05 <= 0.0 <= q95:
        raise ValueError(f"q05 <= 0 <= q95 violated ({q05}, {q95})")
    return max(0.0, p_prev + q05), p_prev, p_prev + q95


def sun_elevation(times: pd.DatetimeIndex, site: SiteOptions) -> np.ndarray:
    """Apparent sun elevation in degrees for each timestamp."""
    if times.tz is None:
        times = times.tz_localize(site.timezone)
    position = pvlib.solarposition.get_solarposition(times, site.latitude, site.longitude)
    return position['apparent_elevation'].to_numpy()


def imbalance_forecast(realized: ArrayLike, steps_per_day: int) -> np.ndarray:
    """Naive 1-day persistence; the first day has no history and uses itself."""
    realized = np.asarray(realized, dtype=float)
    if steps_per_day <= 0:
        raise ValueError("steps_per_day must be positive")
    forecast = realized.copy()
    if len(realized) > steps_per_day:
        forecast[steps_per_day:] = realized[:-steps_per_day]
    return forecast
