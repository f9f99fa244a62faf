"""Longitudinal platoon kinematics, scenario sampling and collision detection.

Positions are vehicle centers along a single lane. Every distance exposed to
controllers and rewards is a bumper-to-bumper gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Annotated, Literal, Optional, Protocol, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError, DomainError

DT = 0.05
ACCEL_CAP = 3.0
GAP_SENTINEL = math.inf


class VehicleClass(str, Enum):
    LIGHT = "light"
    HEAVY = "heavy"


# (length m, max deceleration m/s^2)
CLASS_SPECS: dict[VehicleClass, tuple[float, float]] = {
    VehicleClass.LIGHT: (4.0, -7.5),
    VehicleClass.HEAVY: (6.0, -4.0),
}


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float
    a: float = 0.0
    length: float = 4.0
    max_decel: float = -7.5
    vclass: VehicleClass = VehicleClass.LIGHT
    vid: int = 0
    accel_cap: float = ACCEL_CAP

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError(f"vehicle length must be positive, got {self.length}")
        if not self.max_decel < 0:
            raise DomainError(f"max_decel must be negative, got {self.max_decel}")
        if self.v < 0:
            raise DomainError(f"velocity must be non-negative, got {self.v}")

    @classmethod
    def of_class(cls, vclass: VehicleClass | str, x: float, v: float, vid: int = 0) -> "VehicleState":
        vclass = VehicleClass(vclass)
        length, max_decel = CLASS_SPECS[vclass]
        return cls(x=float(x), v=float(v), length=length, max_decel=max_decel, vclass=vclass, vid=vid)


def advance(x, v, a, dt):
    """Advance position and velocity under constant acceleration for one step.

    Works elementwise on floats or arrays. If the velocity would cross zero
    inside the step, motion stops at the crossing time; vehicles never reverse.
    """
    v_end = v + a * dt
    stops = v_end < 0
    t = np.where(stops, v / np.where(stops, -a, 1.0), dt)
    x_new = x + v * t + 0.5 * a * t * t
    return x_new, np.maximum(v_end, 0.0)


def step_vehicle(veh: VehicleState, commanded_accel: float, dt: float = DT) -> VehicleState:
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if not (math.isfinite(commanded_accel) and math.isfinite(veh.x) and math.isfinite(veh.v)):
        raise DomainError("non-finite vehicle state or command")
    acc = min(max(commanded_accel, veh.max_decel), veh.accel_cap)
    x_new, v_new = advance(np.float64(veh.x), np.float64(veh.v), np.float64(acc), dt)
    return replace(veh, x=float(x_new), v=float(v_new), a=float(acc))


def bumper_gap(front: VehicleState, rear: VehicleState) -> float:
    return (front.x - rear.x) - 0.5 * (front.length + rear.length)


@dataclass
class Platoon:
    vehicles: list[VehicleState]
    rl_indices: tuple[int, ...] = (1,)
    time_step: int = 0
    dt: float = DT

    @property
    def ego(self) -> int:
        return self.rl_indices[0]

    def index_of(self, vid: int) -> int:
        for i, veh in enumerate(self.vehicles):
            if veh.vid == vid:
                return i
        raise KeyError(vid)

    def gaps(self) -> list[float]:
        return [bumper_gap(f, r) for f, r in zip(self.vehicles, self.vehicles[1:])]


def compute_gaps(p: Platoon, ego: int) -> tuple[float, float]:
    veh = p.vehicles
    d_fm = bumper_gap(veh[ego - 1], veh[ego]) if ego > 0 else GAP_SENTINEL
    d_mr = bumper_gap(veh[ego], veh[ego + 1]) if ego + 1 < len(veh) else GAP_SENTINEL
    return d_fm, d_mr


@dataclass(frozen=True)
class CollisionReport:
    occurred: bool
    pair: Optional[tuple[int, int]] = None
    gap_at_event: float = math.nan
    step: int = -1


def detect_collision(p: Platoon, threshold: float = 2.0) -> CollisionReport:
    if threshold < 0:
        raise DomainError("collision threshold must be >= 0")
    for i, gap in enumerate(p.gaps()):
        if gap < threshold:
            return CollisionReport(True, (i, i + 1), gap, p.time_step)
    return CollisionReport(False, step=p.time_step)


@dataclass(frozen=True)
class EnvState:
    d_fm: float
    d_mr: float
    v_f: float
    v_m: float
    v_r: float
    a_f: float
    a_m: float
    a_r: float

    FIELDS = ("d_fm", "d_mr", "v_f", "v_m", "v_r", "a_f", "a_m", "a_r")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in self.FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "EnvState":
        return cls(*(float(x) for x in arr))


# --------------------------------------------------------------------------
# Scenario configuration


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Normal(_Model):
    kind: Literal["normal"] = "normal"
    mean: float
    std: float = Field(0.0, ge=0.0)

    def draw(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, self.std, size)

    @property
    def center(self) -> float:
        return self.mean


class Uniform(_Model):
    kind: Literal["uniform"] = "uniform"
    lo: float
    hi: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.lo > self.hi:
            raise ValueError(f"uniform bounds out of order: {self.lo} > {self.hi}")
        return self

    def draw(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size)

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


Dist = Annotated[Union[Normal, Uniform], Field(discriminator="kind")]


class VehicleSpec(_Model):
    role: Literal["lead", "rl", "follower"]
    vclass: VehicleClass = VehicleClass.LIGHT
    x: Normal
    v0: float = Field(20.0, ge=0.0)


class CutInConfig(_Model):
    trigger_step: int = Field(ge=1)
    insert_role: Literal["leading", "following"]
    vclass: VehicleClass = VehicleClass.LIGHT


class KalmanConfig(_Model):
    jerk_psd: float = Field(5.0, gt=0)
    meas_std: float = Field(0.2, gt=0)
    init_var: tuple[float, float, float] = (0.04, 4.0, 4.0)


def _default_vehicles() -> list[VehicleSpec]:
    return [
        VehicleSpec(role="lead", x=Normal(mean=36.0, std=0.5)),
        VehicleSpec(role="rl", x=Normal(mean=18.0, std=0.5)),
        VehicleSpec(role="follower", x=Normal(mean=0.0, std=0.5)),
    ]


class ScenarioConfig(_Model):
    dt: float = Field(DT, gt=0)
    episode_max_steps: int = Field(1500, ge=1)
    collision_threshold: float = Field(2.0, ge=0)
    vehicles: list[VehicleSpec] = Field(default_factory=_default_vehicles)
    lead_brake_decel: Dist = Normal(mean=-7.5, std=0.2)
    lead_brake_time: Dist = Uniform(lo=1.0, hi=1.5)
    # "adas": TTC-triggered AEB behind the vehicle ahead; "brake": starts braking
    # together with the lead; "cruise": never brakes.
    follower_mode: Literal["adas", "brake", "cruise"] = "adas"
    follower_brake_decel: Dist = Normal(mean=-6.0, std=0.5)
    jitter_accel: Normal = Normal(mean=0.0, std=0.01)
    cutin: Optional[CutInConfig] = None
    # all vehicles at rest for this many consecutive steps ends an episode
    settle_steps: int = Field(40, ge=1)
    kalman: KalmanConfig = KalmanConfig()

    @model_validator(mode="after")
    def _check(self):
        roles = [v.role for v in self.vehicles]
        if len(roles) < 2 or roles[0] != "lead" or roles.count("lead") != 1:
            raise ValueError("first vehicle must be the single lead")
        if "rl" not in roles:
            raise ValueError("scenario needs at least one rl vehicle")
        if "follower" in roles[:-1] or roles.count("follower") > 1:
            raise ValueError("follower must be the last vehicle")
        if self.cutin is not None and self.cutin.trigger_step >= self.episode_max_steps:
            raise ValueError("cut-in trigger outside episode bounds")
        return self


# --------------------------------------------------------------------------
# Scenario instances


@dataclass(frozen=True)
class Driver:
    """Behaviour of a non-RL vehicle.

    ``mode`` is one of ``cruise``, ``brake`` (scripted emergency brake from
    ``brake_step``) or ``adas`` (TTC-triggered AEB at ``brake_decel``).
    """

    mode: str
    brake_decel: float = 0.0
    brake_step: int = -1


@dataclass(frozen=True)
class CutInSpawn:
    trigger_step: int
    insert_role: str
    vclass: VehicleClass
    vid: int


@dataclass
class ScenarioInstance:
    platoon: Platoon
    drivers: dict[int, Driver]
    jitter: np.ndarray
    meas_noise: np.ndarray
    max_steps: int
    threshold: float
    settle_steps: int = 40
    cutin: Optional[CutInSpawn] = None
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    seed: object = None

    @property
    def n_slots(self) -> int:
        return self.jitter.shape[1]


MAX_REDRAWS = 100


def sample_scenario(cfg: ScenarioConfig, seed) -> ScenarioInstance:
    """Draw one instance. ``seed`` is anything ``numpy.random.default_rng`` accepts."""
    rng = np.random.default_rng(seed)
    n = len(cfg.vehicles)
    for _ in range(MAX_REDRAWS):
        xs = [float(spec.x.draw(rng)) for spec in cfg.vehicles]
        vehicles = [
            VehicleState.of_class(spec.vclass, x, spec.v0, vid=i)
            for i, (spec, x) in enumerate(zip(cfg.vehicles, xs))
        ]
        if all(g > cfg.collision_threshold for g in Platoon(vehicles).gaps()):
            break
    else:
        raise ConfigError(f"could not draw ordered initial positions in {MAX_REDRAWS} attempts")

    lead_decel = float(cfg.lead_brake_decel.draw(rng))
    brake_step = int(round(float(cfg.lead_brake_time.draw(rng)) / cfg.dt))
    follow_decel = float(cfg.follower_brake_decel.draw(rng))

    drivers: dict[int, Driver] = {}
    rl: list[int] = []
    for i, spec in enumerate(cfg.vehicles):
        if spec.role == "lead":
            drivers[i] = Driver("brake", min(lead_decel, 0.0), brake_step)
        elif spec.role == "follower":
            if cfg.follower_mode == "brake":
                drivers[i] = Driver("brake", min(follow_decel, 0.0), brake_step)
            elif cfg.follower_mode == "adas":
                drivers[i] = Driver("adas", min(follow_decel, 0.0))
            else:
                drivers[i] = Driver("cruise")
        else:
            rl.append(i)

    n_slots = n + (1 if cfg.cutin else 0)
    steps = cfg.episode_max_steps
    jitter = rng.normal(cfg.jitter_accel.mean, cfg.jitter_accel.std, (steps, n_slots))
    meas = rng.standard_normal((steps, n_slots))

    cutin = None
    if cfg.cutin is not None:
        cutin = CutInSpawn(cfg.cutin.trigger_step, cfg.cutin.insert_role, VehicleClass(cfg.cutin.vclass), n)
        # a cut-in vehicle brakes like the vehicle it copies its speed from
        drivers[n] = Driver("adas", CLASS_SPECS[cutin.vclass][1])

    return ScenarioInstance(
        platoon=Platoon(vehicles, tuple(rl), 0, cfg.dt),
        drivers=drivers,
        jitter=jitter,
        meas_noise=meas,
        max_steps=steps,
        threshold=cfg.collision_threshold,
        settle_steps=cfg.settle_steps,
        cutin=cutin,
        kalman=cfg.kalman,
        seed=seed,
    )


# --------------------------------------------------------------------------
# Feasibility


def stop_window_ok(x_lead, v_lead, d_lead, x_fol, v_fol, d_fol, brake_step, required, dt, max_steps) -> bool:
    """Lead and follower brake from ``brake_step``; True if their centre gap never drops below ``required``."""
    xl, vl, xf, vf = x_lead, v_lead, x_fol, v_fol
    for k in range(max_steps):
        if xl - xf < required:
            return False
        if k > brake_step and vl == 0.0 and vf == 0.0:
            return True
        al = d_lead if (k >= brake_step and vl > 0) else 0.0
        af = d_fol if (k >= brake_step and vf > 0) else 0.0
        xl, vl = advance(xl, vl, al, dt)
        xf, vf = advance(xf, vf, af, dt)
        xl, vl, xf, vf = float(xl), float(vl), float(xf), float(vf)
    return xl - xf >= required


def instance_feasible(inst: ScenarioInstance, ego_length: float = 4.0) -> bool:
    """Per-run feasibility using the run's own draws (no jitter)."""
    veh = inst.platoon.vehicles
    lead, fol = veh[0], veh[-1]
    dl, df = inst.drivers[lead.vid], inst.drivers[fol.vid]
    if df.mode != "brake":
        return True
    n_rl = len(inst.platoon.rl_indices)
    required = n_rl * (ego_length + 2 * inst.threshold) + 0.5 * (lead.length + fol.length)
    return stop_window_ok(
        lead.x, lead.v, dl.brake_decel, fol.x, fol.v, df.brake_decel, dl.brake_step, required,
        inst.platoon.dt, inst.max_steps,
    )


# --------------------------------------------------------------------------
# Stepping


@dataclass(frozen=True)
class Event:
    kind: str  # "brake", "cut_in" or "collision"
    step: int
    detail: dict = field(default_factory=dict)


def insert_cut_in(p: Platoon, spawn: CutInSpawn) -> Platoon:
    """Insert the cut-in vehicle next to the ego at the median of its new neighbours."""
    ego = p.ego
    if spawn.insert_role == "leading":
        if ego == 0:
            raise DomainError("cannot cut in ahead of a vehicle with no leader")
        front, rear, pos = p.vehicles[ego - 1], p.vehicles[ego], ego
    else:
        if ego + 1 >= len(p.vehicles):
            raise DomainError("cannot cut in behind a vehicle with no follower")
        front, rear, pos = p.vehicles[ego], p.vehicles[ego + 1], ego + 1
    new = VehicleState.of_class(spawn.vclass, 0.5 * (front.x + rear.x), 0.5 * (front.v + rear.v), vid=spawn.vid)
    vehicles = list(p.vehicles)
    vehicles.insert(pos, new)
    rl = tuple(i + 1 if i >= pos else i for i in p.rl_indices)
    return Platoon(vehicles, rl, p.time_step, p.dt)


def driver_command(veh: VehicleState, driver: Driver, step: int) -> float:
    """Scripted command for cruise/brake drivers (ADAS commands come from the caller)."""
    if driver.mode == "brake" and step >= driver.brake_step and veh.v > 0:
        return driver.brake_decel
    return 0.0


def step_platoon(
    p: Platoon,
    rl_accels,
    script: ScenarioInstance,
    other_accels: Optional[dict[int, float]] = None,
) -> tuple[Platoon, list[Event]]:
    """Advance the platoon one step.

    ``rl_accels`` holds one command per entry of ``p.rl_indices``.
    ``other_accels`` maps vehicle ids to commands for ADAS-driven vehicles;
    absent ids cruise. A scheduled cut-in is inserted once the platoon reaches
    its trigger step, so the returned platoon already contains it.
    """
    k = p.time_step
    events: list[Event] = []
    rl_accels = list(np.atleast_1d(np.asarray(rl_accels, dtype=float)))
    if len(rl_accels) != len(p.rl_indices):
        raise DomainError(f"expected {len(p.rl_indices)} RL commands, got {len(rl_accels)}")
    rl_cmd = dict(zip(p.rl_indices, rl_accels))
    other_accels = other_accels or {}

    new_vehicles = []
    for i, veh in enumerate(p.vehicles):
        if i in rl_cmd:
            cmd = rl_cmd[i]
        else:
            driver = script.drivers.get(veh.vid, Driver("cruise"))
            if driver.mode == "brake" and k == driver.brake_step:
                events.append(Event("brake", k, {"vid": veh.vid, "decel": driver.brake_decel}))
            if driver.mode == "adas":
                cmd = other_accels.get(veh.vid, 0.0)
            else:
                cmd = driver_command(veh, driver, k)
            if veh.v > 0 and k < script.jitter.shape[0]:
                cmd += float(script.jitter[k, veh.vid])
        new_vehicles.append(step_vehicle(veh, cmd, p.dt))

    nxt = Platoon(new_vehicles, p.rl_indices, k + 1, p.dt)
    if script.cutin is not None and nxt.time_step == script.cutin.trigger_step:
        nxt = insert_cut_in(nxt, script.cutin)
        events.append(Event("cut_in", k + 1, {"vid": script.cutin.vid, "role": script.cutin.insert_role}))
    report = detect_collision(nxt, script.threshold)
    if report.occurred:
        events.append(Event("collision", k + 1, {"pair": report.pair, "gap": report.gap_at_event}))
    return nxt, events


# --------------------------------------------------------------------------
# Observation


class NeighborEstimator(Protocol):
    def estimate(self, p: Platoon, ego: int, step: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Return ((v_front, a_front), (v_rear, a_rear)) estimates for the ego's neighbours."""


def observe(p: Platoon, ego: Optional[int] = None, estimator: Optional[NeighborEstimator] = None) -> EnvState:
    ego = p.ego if ego is None else ego
    veh = p.vehicles
    me = veh[ego]
    d_fm, d_mr = compute_gaps(p, ego)
    if estimator is None:
        front = (veh[ego - 1].v, veh[ego - 1].a) if ego > 0 else (me.v, 0.0)
        rear = (veh[ego + 1].v, veh[ego + 1].a) if ego + 1 < len(veh) else (me.v, 0.0)
    else:
        front, rear = estimator.estimate(p, ego, p.time_step)
    return EnvState(d_fm, d_mr, front[0], me.v, rear[0], front[1], me.a, rear[1])
