"""Deceleration-grid sweep, feasibility oracle, collision statistics and edge-case runners."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .agent import DdpgAgent, load_checkpoint
from .baseline import BaselineParams, cruise_accel, ttc_array
from .dynamics import (
    CLASS_SPECS,
    ACCEL_CAP,
    CutInConfig,
    Normal,
    ScenarioConfig,
    ScenarioInstance,
    Uniform,
    VehicleClass,
    VehicleSpec,
    advance,
    instance_feasible,
    sample_scenario,
    stop_window_ok,
)
from .env import BaselineController, EpisodeResult, PolicyController, run_episode
from .errors import ConfigError, DomainError
from .estimation import kf_init, kf_predict, kf_update

ControllerKind = Literal["baseline", "rl", "untrained"]


def default_decels() -> list[float]:
    return [float(x) for x in np.linspace(-7.5, 0.0, 20)]


def grid_scenario() -> ScenarioConfig:
    """Cell template: the follower brakes together with the lead at the cell's rate."""
    return ScenarioConfig(follower_mode="brake")


class GridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lead_decels: list[float] = Field(default_factory=default_decels)
    follow_decels: list[float] = Field(default_factory=default_decels)
    runs_per_cell: int = Field(100, ge=1)
    scenario: ScenarioConfig = Field(default_factory=grid_scenario)
    controller: ControllerKind = "baseline"
    checkpoint: Optional[str] = None
    untrained_seed: int = 0
    baseline: BaselineParams = BaselineParams()

    @field_validator("lead_decels", "follow_decels")
    @classmethod
    def _non_positive(cls, v):
        if not v or any(d > 0 for d in v):
            raise ValueError("deceleration values must be non-empty and <= 0")
        return v

    def cell_scenario(self, i: int, j: int) -> ScenarioConfig:
        return self.scenario.model_copy(
            update={
                "lead_brake_decel": Normal(mean=self.lead_decels[i], std=0.0),
                "follower_brake_decel": Normal(mean=self.follow_decels[j], std=0.0),
            }
        )


# --------------------------------------------------------------------------
# feasibility


def _roles(cfg: ScenarioConfig):
    specs = cfg.vehicles
    lead = specs[0]
    fol = specs[-1] if specs[-1].role == "follower" else None
    rl = [s for s in specs if s.role == "rl"]
    return lead, rl, fol


def feasibility_oracle(scenario: ScenarioConfig, d_lead: float, d_follow: float) -> bool:
    """Ego-free check that lead and follower leave room for the ego at every step.

    Uses the scenario's mean initial conditions and trigger time. The required
    bumper gap between lead and follower is the ego length(s) plus two
    collision thresholds per ego.
    """
    if d_lead > 0 or d_follow > 0:
        raise DomainError("decelerations must be <= 0")
    lead, rl, fol = _roles(scenario)
    if fol is None:
        return True
    l_len, l_max = CLASS_SPECS[lead.vclass]
    f_len, f_max = CLASS_SPECS[fol.vclass]
    ego_len = sum(CLASS_SPECS[s.vclass][0] for s in rl)
    required = ego_len + 2 * scenario.collision_threshold * len(rl)
    # centre gap: bumper gap + half lengths
    required_centre = required + 0.5 * (l_len + f_len)
    brake_step = int(round(scenario.lead_brake_time.center / scenario.dt))
    return stop_window_ok(
        lead.x.mean, lead.v0, max(d_lead, l_max), fol.x.mean, fol.v0, max(d_follow, f_max),
        brake_step, required_centre, scenario.dt, scenario.episode_max_steps,
    )


def feasibility_mask(cfg: GridConfig) -> np.ndarray:
    return np.array(
        [[feasibility_oracle(cfg.scenario, dl, df) for df in cfg.follow_decels] for dl in cfg.lead_decels],
        dtype=bool,
    )


# --------------------------------------------------------------------------
# vectorised three-vehicle engine


class VecBaseline:
    """Baseline ego (TTC/AEB with a Kalman track of the vehicle ahead) for a batch of runs."""

    def __init__(self, p: BaselineParams):
        self.p = p

    def reset(self, b: "Batch") -> None:
        self.latched = np.zeros(b.n, dtype=bool)
        self.kf = None
        self.v_set = b.v[:, 1].copy()

    def act(self, b: "Batch", k: int) -> np.ndarray:
        return vec_adas(self, b, k, front=0, me=1, aeb=np.full(b.n, self.p.aeb_decel))


def vec_adas(state, b: "Batch", k: int, front: int, me: int, aeb: np.ndarray) -> np.ndarray:
    p = state.p
    gap = (b.x[:, front] - b.x[:, me]) - 0.5 * (b.length[:, front] + b.length[:, me])
    if p.use_kalman:
        kc = b.kalman
        z = b.x[:, front] + kc.meas_std * b.meas[:, min(k, b.meas.shape[1] - 1), front]
        if state.kf is None:
            state.kf = kf_init(z, kc.init_var, v0=b.v[:, me], process_noise=kc.jerk_psd, meas_noise=kc.meas_std**2)
        else:
            state.kf = kf_update(kf_predict(state.kf, b.dt), z)
        v_front = state.kf.mean[:, 1]
    else:
        v_front = b.v[:, front]
    ttc = ttc_array(gap, b.v[:, me], v_front)
    state.latched = state.latched | (ttc < p.ttc_threshold)
    aeb_cmd = np.maximum(aeb, b.max_decel[:, me])
    return np.where(state.latched, aeb_cmd, cruise_accel(b.v[:, me], state.v_set, p))


class VecFollowerAdas:
    def __init__(self, p: BaselineParams, aeb: np.ndarray):
        self.p = p
        self.aeb = aeb

    def reset(self, b: "Batch") -> None:
        self.latched = np.zeros(b.n, dtype=bool)
        self.kf = None
        self.v_set = b.v[:, 2].copy()

    def act(self, b: "Batch", k: int) -> np.ndarray:
        return vec_adas(self, b, k, front=1, me=2, aeb=self.aeb)


class VecPolicy:
    def __init__(self, agent: DdpgAgent):
        self.agent = agent

    def reset(self, b: "Batch") -> None:
        pass

    def act(self, b: "Batch", k: int) -> np.ndarray:
        gap_fm = (b.x[:, 0] - b.x[:, 1]) - 0.5 * (b.length[:, 0] + b.length[:, 1])
        gap_mr = (b.x[:, 1] - b.x[:, 2]) - 0.5 * (b.length[:, 1] + b.length[:, 2])
        obs = np.stack([gap_fm, gap_mr, b.v[:, 0], b.v[:, 1], b.v[:, 2], b.a[:, 0], b.a[:, 1], b.a[:, 2]], axis=1)
        a = self.agent.policy(self.agent.normalize(obs))
        return np.clip(a, self.agent.a_min, self.agent.a_max)


@dataclass
class Batch:
    x: np.ndarray  # (n, 3)
    v: np.ndarray
    a: np.ndarray
    length: np.ndarray
    max_decel: np.ndarray
    modes: list[str]  # lead/follower driver modes (shared across the batch)
    brake_decel: np.ndarray  # (n, 3); ego column unused
    brake_step: np.ndarray  # (n, 3)
    jitter: np.ndarray  # (n, steps, 3)
    meas: np.ndarray  # (n, steps, 3)
    dt: float
    max_steps: int
    threshold: float
    settle_steps: int
    kalman: object

    @property
    def n(self) -> int:
        return self.x.shape[0]


def make_batch(instances: Sequence[ScenarioInstance]) -> Batch:
    first = instances[0]
    for inst in instances:
        if len(inst.platoon.vehicles) != 3 or inst.platoon.rl_indices != (1,) or inst.cutin is not None:
            raise DomainError("the batch engine handles lead / single ego / follower platoons only")
    veh = [inst.platoon.vehicles for inst in instances]

    def col(f):
        return np.array([[f(v) for v in row] for row in veh], dtype=float)

    modes = [first.drivers[0].mode, "rl", first.drivers[2].mode]
    for inst in instances:
        if [inst.drivers[0].mode, "rl", inst.drivers[2].mode] != modes:
            raise DomainError("all runs in a batch must share driver modes")
    return Batch(
        x=col(lambda v: v.x),
        v=col(lambda v: v.v),
        a=col(lambda v: v.a),
        length=col(lambda v: v.length),
        max_decel=col(lambda v: v.max_decel),
        modes=modes,
        brake_decel=np.array([[inst.drivers[0].brake_decel, 0.0, inst.drivers[2].brake_decel] for inst in instances]),
        brake_step=np.array([[inst.drivers[0].brake_step, -1, inst.drivers[2].brake_step] for inst in instances]),
        jitter=np.stack([inst.jitter for inst in instances]),
        meas=np.stack([inst.meas_noise for inst in instances]),
        dt=first.platoon.dt,
        max_steps=first.max_steps,
        threshold=first.threshold,
        settle_steps=first.settle_steps,
        kalman=first.kalman,
    )


@dataclass
class BatchOutcome:
    collided: np.ndarray  # bool (n,)
    ego_collided: np.ndarray
    collision_step: np.ndarray  # -1 when none
    steps: np.ndarray
    final_x: np.ndarray  # (n, 3) at termination
    final_v: np.ndarray
    min_gaps: np.ndarray  # (n, 2)


def run_batch(b: Batch, ego, baseline: BaselineParams) -> BatchOutcome:
    """Simulate all runs in lock-step; each run freezes when its episode would end."""
    n = b.n
    ego.reset(b)
    fol = VecFollowerAdas(baseline, np.minimum(b.brake_decel[:, 2], 0.0)) if b.modes[2] == "adas" else None
    if fol is not None:
        fol.aeb = np.where(b.brake_decel[:, 2] < 0, b.brake_decel[:, 2], baseline.aeb_decel)
        fol.reset(b)
    active = np.ones(n, dtype=bool)
    collided = np.zeros(n, dtype=bool)
    cstep = np.full(n, -1)
    steps = np.zeros(n, dtype=int)
    rest = np.zeros(n, dtype=int)
    fx, fv = b.x.copy(), b.v.copy()
    gaps0 = _gaps(b)
    min_gaps = gaps0.copy()
    for k in range(b.max_steps):
        cmd = np.zeros((n, 3))
        for j in (0, 2):
            if b.modes[j] == "brake":
                braking = (k >= b.brake_step[:, j]) & (b.v[:, j] > 0)
                cmd[:, j] = np.where(braking, b.brake_decel[:, j], 0.0)
        if fol is not None:
            cmd[:, 2] = fol.act(b, k)
        cmd[:, 1] = ego.act(b, k)
        for j in (0, 2):
            moving = b.v[:, j] > 0
            cmd[:, j] = np.where(moving, cmd[:, j] + b.jitter[:, k, j], cmd[:, j])
        acc = np.minimum(np.maximum(cmd, b.max_decel), ACCEL_CAP)
        b.x, b.v = advance(b.x, b.v, acc, b.dt)
        b.a = acc
        g = _gaps(b)
        min_gaps = np.where(active[:, None], np.minimum(min_gaps, g), min_gaps)
        hit = (g < b.threshold).any(axis=1)
        rest = np.where((b.v == 0.0).all(axis=1), rest + 1, 0)
        ending = active & (hit | (rest >= b.settle_steps) | (k + 1 >= b.max_steps))
        new_hit = active & hit
        collided |= new_hit
        cstep = np.where(new_hit, k + 1, cstep)
        steps = np.where(ending, k + 1, steps)
        fx = np.where(ending[:, None], b.x, fx)
        fv = np.where(ending[:, None], b.v, fv)
        active &= ~ending
        if not active.any():
            break
    # in a lead/ego/follower platoon every adjacent pair contains the ego
    return BatchOutcome(collided, collided.copy(), cstep, steps, fx, fv, min_gaps)


def _gaps(b: Batch) -> np.ndarray:
    g0 = (b.x[:, 0] - b.x[:, 1]) - 0.5 * (b.length[:, 0] + b.length[:, 1])
    g1 = (b.x[:, 1] - b.x[:, 2]) - 0.5 * (b.length[:, 1] + b.length[:, 2])
    return np.stack([g0, g1], axis=1)


# --------------------------------------------------------------------------
# grid


def run_seed(seed: int, i: int, j: int, r: int) -> list[int]:
    """Entropy for run ``r`` of cell ``(i, j)``."""
    return [seed, i, j, r]


@dataclass
class CellResult:
    i: int
    j: int
    runs: int
    collisions: int
    middle_collisions: int
    feasible_runs: int
    feasible_run_collisions: int


def _make_ego(cfg: GridConfig, agent: Optional[DdpgAgent]):
    if cfg.controller == "baseline":
        return VecBaseline(cfg.baseline)
    return VecPolicy(agent)


def resolve_agent(cfg: GridConfig) -> Optional[DdpgAgent]:
    if cfg.controller == "rl":
        if not cfg.checkpoint:
            raise ConfigError("the rl controller needs a checkpoint path")
        return load_checkpoint(cfg.checkpoint)
    if cfg.controller == "untrained":
        return DdpgAgent(seed=cfg.untrained_seed)
    return None


def run_cell(cfg: GridConfig, seed: int, i: int, j: int, agent: Optional[DdpgAgent] = None) -> CellResult:
    scen = cfg.cell_scenario(i, j)
    instances = [sample_scenario(scen, run_seed(seed, i, j, r)) for r in range(cfg.runs_per_cell)]
    out = run_batch(make_batch(instances), _make_ego(cfg, agent), cfg.baseline)
    feas = np.array([instance_feasible(inst, CLASS_SPECS[scen.vehicles[1].vclass][0]) for inst in instances])
    return CellResult(
        i, j, len(instances), int(out.collided.sum()), int(out.ego_collided.sum()),
        int(feas.sum()), int((feas & out.collided).sum()),
    )


def _cell_task(args):
    cfg, seed, cells, agent = args
    if agent is None and cfg.controller != "baseline":
        agent = resolve_agent(cfg)
    return [run_cell(cfg, seed, i, j, agent) for i, j in cells]


@dataclass
class GridResult:
    lead_decels: np.ndarray
    follow_decels: np.ndarray
    runs: np.ndarray
    collisions: np.ndarray
    middle_collisions: np.ndarray
    feasible: np.ndarray
    feasible_runs: np.ndarray
    feasible_run_collisions: np.ndarray
    seed: int
    controller: str
    meta: dict = field(default_factory=dict)
    elapsed_s: float = 0.0  # wall clock, kept out of the serialized form

    def __post_init__(self):
        if np.any(self.collisions > self.runs) or np.any(self.middle_collisions > self.collisions):
            raise DomainError("collision counts exceed run counts")

    # aggregates
    def collision_rate(self) -> float:
        return collision_rate(self)

    def success_over_feasible(self) -> float:
        return success_over_feasible(self)

    def p_collision(self) -> float:
        return middle_vehicle_collision_probability(self)

    def cell_collision_fraction(self) -> np.ndarray:
        return self.collisions / np.maximum(self.runs, 1)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "controller": self.controller,
            "lead_decels": self.lead_decels.tolist(),
            "follow_decels": self.follow_decels.tolist(),
            "runs": self.runs.tolist(),
            "collisions": self.collisions.tolist(),
            "middle_collisions": self.middle_collisions.tolist(),
            "feasible": self.feasible.astype(int).tolist(),
            "feasible_runs": self.feasible_runs.tolist(),
            "feasible_run_collisions": self.feasible_run_collisions.tolist(),
            "artifact": "grid",
            "schema_version": 1,
            "collision_rate": self.collision_rate(),
            "meta": self.meta,
        }
        if self.feasible.any():
            d["success_over_feasible"] = self.success_over_feasible()
            d["p_collision"] = self.p_collision()
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "GridResult":
        d = json.loads(Path(path).read_text())

        def arr(k, t=int):
            return np.array(d[k], dtype=t)

        return cls(
            np.array(d["lead_decels"]), np.array(d["follow_decels"]), arr("runs"), arr("collisions"),
            arr("middle_collisions"), arr("feasible", bool), arr("feasible_runs"), arr("feasible_run_collisions"),
            d["seed"], d["controller"], d.get("meta", {}),
        )

    def to_csv(self, path) -> None:
        """Per-cell collision fraction; rows are lead decelerations, columns follower decelerations."""
        frac = self.cell_collision_fraction()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lead\\follow", *[f"{x:.6g}" for x in self.follow_decels]])
            for dl, row, feas in zip(self.lead_decels, frac, self.feasible):
                w.writerow([f"{dl:.6g}", *[f"{v:.4f}{'' if f else '*'}" for v, f in zip(row, feas)]])


def run_grid(cfg: GridConfig, seed: int, workers: int = 1, agent: Optional[DdpgAgent] = None,
             cells: Optional[Sequence[tuple[int, int]]] = None) -> GridResult:
    """Sweep the deceleration grid. Cell results do not depend on ``workers`` or cell order."""
    t0 = time.perf_counter()
    if agent is None:
        agent = resolve_agent(cfg)
    ni, nj = len(cfg.lead_decels), len(cfg.follow_decels)
    pending = list(cells) if cells is not None else [(i, j) for i in range(ni) for j in range(nj)]
    if workers <= 1:
        results = _cell_task((cfg, seed, pending, agent))
    else:
        chunks = [pending[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            results = [c for part in pool.map(_cell_task, [(cfg, seed, ch, agent) for ch in chunks]) for c in part]
    shape = (ni, nj)
    mats = {k: np.zeros(shape, dtype=int) for k in ("runs", "collisions", "middle_collisions", "feasible_runs", "feasible_run_collisions")}
    for c in results:
        for k in mats:
            mats[k][c.i, c.j] = getattr(c, k)
    return GridResult(
        np.array(cfg.lead_decels), np.array(cfg.follow_decels), mats["runs"], mats["collisions"],
        mats["middle_collisions"], feasibility_mask(cfg), mats["feasible_runs"], mats["feasible_run_collisions"],
        seed, cfg.controller, {"runs_per_cell": cfg.runs_per_cell},
        elapsed_s=round(time.perf_counter() - t0, 3),
    )


def collision_rate(g: GridResult) -> float:
    total = int(g.runs.sum())
    if total == 0:
        raise DomainError("grid holds no runs")
    return int(g.collisions.sum()) / total


def _feasible_runs(g: GridResult) -> int:
    n = int(g.runs[g.feasible].sum())
    if n == 0:
        raise DomainError("no feasible cells in the grid")
    return n


def success_over_feasible(g: GridResult) -> float:
    n = _feasible_runs(g)
    return 100.0 * (n - int(g.collisions[g.feasible].sum())) / n


def middle_vehicle_collision_probability(g: GridResult) -> float:
    return int(g.middle_collisions[g.feasible].sum()) / _feasible_runs(g)


def success_over_feasible_runs(g: GridResult) -> float:
    """Strict variant: the denominator counts runs that were feasible under their own draws."""
    n = int(g.feasible_runs.sum())
    if n == 0:
        raise DomainError("no feasible runs")
    return 100.0 * (n - int(g.feasible_run_collisions.sum())) / n


# --------------------------------------------------------------------------
# edge cases


EDGE_CASES = {
    1: "leading-side light cut-in ahead of the ego, heavy follower",
    2: "heavy cut-in behind the ego, heavy follower",
    3: "lead emergency brake, heavy follower",
    4: "lead emergency brake, light follower",
    5: "three RL vehicles between a braking light lead and a heavy follower",
}


EDGE_SPEED = 14.0


def _spec(role, x, vclass="light", v0=EDGE_SPEED) -> VehicleSpec:
    return VehicleSpec(role=role, vclass=vclass, x=Normal(mean=x, std=0.0), v0=v0)


def edge_case_config(case: int, narrow: bool = False, n_rl: int = 3) -> ScenarioConfig:
    """Scripted high-risk scenario. ``narrow`` applies to case 3 only.

    Everyone cruises at 14 m/s; the lead brakes at -7.5 m/s^2 after 5 s.
    ADAS vehicles use the TTC baseline at their class braking limit.
    """
    if case not in EDGE_CASES:
        raise DomainError(f"edge case must be one of {sorted(EDGE_CASES)}, got {case}")
    common = dict(
        lead_brake_decel=Normal(mean=-7.5, std=0.0),
        lead_brake_time=Uniform(lo=5.0, hi=5.0),
        jitter_accel=Normal(mean=0.0, std=0.0),
        follower_brake_decel=Normal(mean=0.0, std=0.0),
        episode_max_steps=1200,
    )
    if case == 1:
        return ScenarioConfig(
            vehicles=[_spec("lead", 110.0), _spec("rl", 40.0), _spec("follower", 0.0, "heavy")],
            cutin=CutInConfig(trigger_step=95, insert_role="leading", vclass="light"),
            **common,
        )
    if case == 2:
        return ScenarioConfig(
            vehicles=[_spec("lead", 80.0), _spec("rl", 55.0), _spec("follower", 0.0, "heavy")],
            cutin=CutInConfig(trigger_step=95, insert_role="following", vclass="heavy"),
            **common,
        )
    if case in (3, 4):
        fol_class = "heavy" if case == 3 else "light"
        if case == 3 and narrow:
            # follower brakes at its limit together with the lead; the resting
            # lead-follower bumper gap is the ego length, two thresholds and one
            # further vehicle length of slack
            ego_len = CLASS_SPECS[VehicleClass.LIGHT][0]
            rest_gap = 2 * ego_len + 2 * 2.0
            lead_stop = EDGE_SPEED**2 / (2 * 7.5)
            fol_stop = EDGE_SPEED**2 / (2 * 4.0)
            centre = rest_gap - lead_stop + fol_stop + 0.5 * (4.0 + 6.0)
            common["follower_brake_decel"] = Normal(mean=-4.0, std=0.0)
            return ScenarioConfig(
                vehicles=[_spec("lead", centre), _spec("rl", centre / 2), _spec("follower", 0.0, "heavy")],
                follower_mode="brake",
                **common,
            )
        return ScenarioConfig(
            vehicles=[_spec("lead", 70.0), _spec("rl", 35.0), _spec("follower", 0.0, fol_class)],
            **common,
        )
    spacing = 30.0
    specs = [_spec("lead", spacing * (n_rl + 1))]
    specs += [_spec("rl", spacing * (n_rl - k)) for k in range(n_rl)]
    specs.append(_spec("follower", 0.0, "heavy"))
    return ScenarioConfig(vehicles=specs, **common)


@dataclass
class EdgeVerdict:
    case: int
    collided: bool
    pair_vids: Optional[tuple[int, int]]
    final_gaps: list[float]
    min_gaps: list[float]
    steps: int

    @property
    def clean(self) -> bool:
        return not self.collided and all(g > 2.0 for g in self.final_gaps)

    def as_dict(self) -> dict:
        return {
            "case": self.case, "collided": self.collided, "pair_vids": self.pair_vids,
            "final_gaps": self.final_gaps, "min_gaps": self.min_gaps, "steps": self.steps, "clean": self.clean,
        }


def _verdict(case: int, res: EpisodeResult) -> EdgeVerdict:
    pair = None
    if res.collision.occurred:
        order = [int(v) for v in res.log.rows[-1]["order"].split("-")]
        a, b = res.collision.pair
        pair = (order[a], order[b])
    return EdgeVerdict(case, res.collision.occurred, pair, [float(g) for g in res.final_gaps],
                       [float(g) for g in res.min_gaps], res.steps)


def make_controller(kind: ControllerKind, agent: Optional[DdpgAgent] = None, baseline: Optional[BaselineParams] = None):
    if kind == "baseline":
        return BaselineController(baseline)
    if agent is None:
        raise ConfigError(f"controller {kind!r} needs an agent")
    return PolicyController(agent)


def run_edge_case(case: int, controller, narrow: bool = False, seed: int = 0, n_rl: int = 3):
    """Run one scripted scenario. Returns (trajectory log, verdict)."""
    cfg = edge_case_config(case, narrow, n_rl)
    res = run_episode(sample_scenario(cfg, seed), controller)
    return res.log, _verdict(case, res)


def multi_agent_rollout(n_rl: int, agent: DdpgAgent, scenario: Optional[ScenarioConfig] = None, seed: int = 0):
    """Every RL vehicle runs the same single-agent policy on its local observation."""
    if n_rl < 1:
        raise DomainError("n_rl must be positive")
    cfg = scenario if scenario is not None else edge_case_config(5, n_rl=n_rl)
    if sum(v.role == "rl" for v in cfg.vehicles) != n_rl:
        raise ConfigError("scenario RL count does not match n_rl")
    res = run_episode(sample_scenario(cfg, seed), PolicyController(agent))
    return res.log, _verdict(5, res)


def summarize_edge_cases(verdicts: Sequence[EdgeVerdict]) -> dict:
    return {str(v.case): v.as_dict() for v in verdicts}


def policy_evaluator(seed: int = 99, stride: int = 3, runs_per_cell: int = 6, log=None):
    """Checkpoint-selection score: coarse-grid success fraction plus a bonus per clean edge case."""
    dec = [float(x) for x in np.linspace(-7.5, 0.0, 20)][::stride]
    mini = GridConfig(controller="untrained", runs_per_cell=runs_per_cell, lead_decels=dec, follow_decels=dec)

    def evaluate(agent: DdpgAgent) -> float:
        sof = run_grid(mini, seed=seed, agent=agent).success_over_feasible()
        ctrl = PolicyController(agent)
        edges = sum(run_edge_case(c, ctrl)[1].clean for c in (1, 2, 3, 4))
        narrow = run_edge_case(3, ctrl, narrow=True)[1].clean
        multi = run_edge_case(5, ctrl)[1].clean
        if log is not None:
            log.info("eval sof %.2f edges %d narrow %d multi %d", sof, edges, narrow, multi)
        return sof / 100 + 0.02 * (edges + narrow + multi)

    return evaluate
