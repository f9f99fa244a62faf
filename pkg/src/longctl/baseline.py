"""TTC-triggered AEB with constant-speed cruise: the reference ADAS controller."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .dynamics import CLASS_SPECS, EnvState, Platoon, VehicleClass, bumper_gap
from .errors import DomainError
from .estimation import TrackedNeighbors


class BaselineParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    ttc_threshold: float = Field(1.4, gt=0)
    aeb_decel: float = Field(-7.5, lt=0)
    cruise_gain: float = Field(0.5, gt=0)
    cruise_cap: float = Field(1.0, gt=0)
    use_kalman: bool = True


def compute_ttc(gap: float, v_rear: float, v_front: float) -> float:
    if not gap > 0:
        raise DomainError(f"TTC undefined for non-positive gap {gap}")
    closing = v_rear - v_front
    if closing <= 0:
        return math.inf
    return gap / closing


def ttc_array(gap, v_rear, v_front):
    """Vectorised TTC: +inf when the gap is opening, 0 once the gap is gone."""
    gap = np.asarray(gap, dtype=float)
    closing = np.asarray(v_rear, dtype=float) - np.asarray(v_front, dtype=float)
    safe = np.where(closing > 0, closing, 1.0)
    ttc = np.where(closing > 0, gap / safe, np.inf)
    return np.where(gap > 0, ttc, 0.0)


def cruise_accel(v, v_set, p: BaselineParams):
    return np.clip(p.cruise_gain * (v_set - v), -p.cruise_cap, p.cruise_cap)


def baseline_action(
    obs: EnvState,
    p: BaselineParams,
    vclass: VehicleClass | str = VehicleClass.LIGHT,
    v_set: float = 20.0,
    latched: bool = False,
    aeb_decel: Optional[float] = None,
) -> float:
    """One step of the baseline controller for the vehicle described by ``obs``.

    Uses the front gap and front velocity only; rear fields are ignored.
    """
    ttc = float(ttc_array(obs.d_fm, obs.v_m, obs.v_f))
    if latched or ttc < p.ttc_threshold:
        decel = p.aeb_decel if aeb_decel is None else aeb_decel
        return max(decel, CLASS_SPECS[VehicleClass(vclass)][1])
    return float(cruise_accel(obs.v_m, v_set, p))


class AdasDriver:
    """Stateful baseline controller for one vehicle: AEB latch plus a front-vehicle track."""

    def __init__(
        self,
        vid: int,
        p: BaselineParams,
        v_set: float,
        aeb_decel: Optional[float] = None,
        tracker: Optional[TrackedNeighbors] = None,
    ):
        self.vid = vid
        self.p = p
        self.v_set = v_set
        self.aeb_decel = p.aeb_decel if aeb_decel is None else aeb_decel
        self.tracker = tracker if p.use_kalman else None
        self.latched = False
        self.trigger_step: Optional[int] = None

    def command(self, platoon: Platoon, step: int) -> float:
        i = platoon.index_of(self.vid)
        me = platoon.vehicles[i]
        if i == 0:
            return float(cruise_accel(me.v, self.v_set, self.p))
        front = platoon.vehicles[i - 1]
        if self.tracker is not None:
            v_front = float(self.tracker.track(front.vid, front.x, step, me.v).mean[1])
        else:
            v_front = front.v
        obs = EnvState(bumper_gap(front, me), math.inf, v_front, me.v, me.v, 0.0, me.a, 0.0)
        if not self.latched and float(ttc_array(obs.d_fm, obs.v_m, obs.v_f)) < self.p.ttc_threshold:
            self.latched = True
            self.trigger_step = step
        return baseline_action(obs, self.p, me.vclass, self.v_set, self.latched, self.aeb_decel)


def run_baseline_scenario(instance, p: Optional[BaselineParams] = None, reward_params=None):
    """Roll out a scenario with every RL slot driven by the baseline controller."""
    from .env import BaselineController, run_episode

    p = p or BaselineParams()
    result = run_episode(instance, BaselineController(p), baseline_params=p, reward_params=reward_params)
    return result.log, result.collision
