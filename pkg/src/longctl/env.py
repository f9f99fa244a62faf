"""Episode loop around the platoon simulator: ADAS neighbours, rewards, termination, logging."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .baseline import AdasDriver, BaselineParams
from .dynamics import (
    CollisionReport,
    EnvState,
    Event,
    Platoon,
    ScenarioInstance,
    compute_gaps,
    observe,
    step_platoon,
)
from .estimation import TrackedNeighbors, make_tracker
from .reward import RewardParams, step_reward


class TrajectoryLog:
    """Per-step record of every vehicle slot, the primary ego's gaps, reward and events."""

    def __init__(self, n_slots: int):
        self.n_slots = n_slots
        self.rows: list[dict] = []

    def __len__(self) -> int:
        return len(self.rows)

    def record(self, p: Platoon, reward: Optional[float] = None, events: Sequence[Event] = ()) -> None:
        row: dict = {"step": p.time_step, "t": round(p.time_step * p.dt, 10)}
        by_vid = {veh.vid: veh for veh in p.vehicles}
        for vid in range(self.n_slots):
            veh = by_vid.get(vid)
            row[f"x{vid}"] = veh.x if veh else None
            row[f"v{vid}"] = veh.v if veh else None
            row[f"a{vid}"] = veh.a if veh else None
        row["d_fm"], row["d_mr"] = compute_gaps(p, p.ego)
        row["order"] = "-".join(str(v.vid) for v in p.vehicles)
        row["reward"] = reward
        row["events"] = ";".join(e.kind for e in events)
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        if not self.rows:
            raise ValueError("empty trajectory")
        with open(Path(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            w.writeheader()
            for r in self.rows:
                w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


@dataclass
class StepResult:
    obs: EnvState
    reward: float
    terminated: bool  # collision
    truncated: bool  # step cap or everyone at rest
    events: list[Event]
    collision: CollisionReport
    rewards: list[float] = field(default_factory=list)  # one per RL slot


class PlatoonEnv:
    """Drives a sampled scenario forward given commands for the RL slots.

    Non-RL ADAS vehicles run the baseline controller with Kalman-estimated
    front velocity. An episode ends on any collision (terminated), at the step
    cap, or once every vehicle has been at rest for ``settle_steps`` steps
    (both truncations).
    """

    def __init__(
        self,
        instance: ScenarioInstance,
        reward_params: Optional[RewardParams] = None,
        baseline_params: Optional[BaselineParams] = None,
        estimate_neighbors: bool = False,
    ):
        self.instance = instance
        self.reward_params = reward_params or RewardParams()
        self.baseline_params = baseline_params or BaselineParams()
        self.estimate_neighbors = estimate_neighbors
        self.reset()

    def reset(self) -> EnvState:
        inst = self.instance
        self.platoon = copy.deepcopy(inst.platoon)
        self.adas: dict[int, AdasDriver] = {}
        self._sync_adas()
        self.trackers: dict[int, TrackedNeighbors] = {}
        self.rest_count = 0
        self.done = False
        self.collision = CollisionReport(False)
        self.log = TrajectoryLog(inst.n_slots)
        self.log.record(self.platoon)
        return self.observe()

    def _sync_adas(self) -> None:
        for veh in self.platoon.vehicles:
            driver = self.instance.drivers.get(veh.vid)
            if driver is None or driver.mode != "adas" or veh.vid in self.adas:
                continue
            tracker = make_tracker(self.instance) if self.baseline_params.use_kalman else None
            decel = driver.brake_decel if driver.brake_decel < 0 else None
            self.adas[veh.vid] = AdasDriver(veh.vid, self.baseline_params, veh.v, decel, tracker)

    @property
    def rl_vids(self) -> list[int]:
        return [self.platoon.vehicles[i].vid for i in self.platoon.rl_indices]

    def observe(self, slot: int = 0) -> EnvState:
        p = self.platoon
        est = None
        if self.estimate_neighbors:
            vid = p.vehicles[p.rl_indices[slot]].vid
            if vid not in self.trackers:
                self.trackers[vid] = make_tracker(self.instance)
            est = self.trackers[vid]
        return observe(p, p.rl_indices[slot], est)

    def observe_all(self) -> list[EnvState]:
        return [self.observe(i) for i in range(len(self.platoon.rl_indices))]

    def step(self, rl_accels) -> StepResult:
        if self.done:
            raise RuntimeError("episode already finished; call reset()")
        p = self.platoon
        k = p.time_step
        others = {vid: d.command(p, k) for vid, d in self.adas.items()}
        nxt, events = step_platoon(p, rl_accels, self.instance, others)
        self.platoon = nxt
        self._sync_adas()

        report = CollisionReport(False, step=nxt.time_step)
        for e in events:
            if e.kind == "collision":
                pair = e.detail["pair"]
                report = CollisionReport(True, pair, e.detail["gap"], e.step)
        self.collision = report

        obs_all = self.observe_all()
        rewards = []
        # any collision ends the episode with the collision reward for every RL slot
        for obs in obs_all:
            rewards.append(step_reward(obs, self.reward_params, report.occurred))

        if all(v.v == 0.0 for v in nxt.vehicles):
            self.rest_count += 1
        else:
            self.rest_count = 0
        terminated = report.occurred
        truncated = not terminated and (
            nxt.time_step >= self.instance.max_steps or self.rest_count >= self.instance.settle_steps
        )
        self.done = terminated or truncated
        self.log.record(nxt, rewards[0], events)
        return StepResult(obs_all[0], rewards[0], terminated, truncated, events, report, rewards)


# --------------------------------------------------------------------------
# controllers


class Controller(Protocol):
    def reset(self, env: PlatoonEnv) -> None: ...

    def act(self, env: PlatoonEnv) -> list[float]:
        """One command per RL slot."""


class BaselineController:
    """Every RL slot is driven by the TTC/AEB baseline."""

    def __init__(self, p: Optional[BaselineParams] = None):
        self.p = p or BaselineParams()
        self.drivers: dict[int, AdasDriver] = {}

    def reset(self, env: PlatoonEnv) -> None:
        self.drivers = {}

    def act(self, env: PlatoonEnv) -> list[float]:
        out = []
        for vid in env.rl_vids:
            if vid not in self.drivers:
                tracker = make_tracker(env.instance) if self.p.use_kalman else None
                v0 = env.platoon.vehicles[env.platoon.index_of(vid)].v
                self.drivers[vid] = AdasDriver(vid, self.p, v0, None, tracker)
            out.append(self.drivers[vid].command(env.platoon, env.platoon.time_step))
        return out


class PolicyController:
    """Every RL slot runs the same policy on its own local observation."""

    def __init__(self, agent, noise_std: float = 0.0, rng: Optional[np.random.Generator] = None):
        self.agent = agent
        self.noise_std = noise_std
        self.rng = rng

    def reset(self, env: PlatoonEnv) -> None:
        pass

    def act(self, env: PlatoonEnv) -> list[float]:
        return [self.agent.act(obs, self.noise_std, self.rng) for obs in env.observe_all()]


@dataclass
class EpisodeResult:
    log: TrajectoryLog
    collision: CollisionReport
    steps: int
    rewards: list[float]
    final_gaps: list[float]
    min_gaps: list[float]
    truncated: bool

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def run_episode(
    instance: ScenarioInstance,
    controller: Controller,
    reward_params: Optional[RewardParams] = None,
    baseline_params: Optional[BaselineParams] = None,
    estimate_neighbors: bool = False,
) -> EpisodeResult:
    env = PlatoonEnv(instance, reward_params, baseline_params, estimate_neighbors)
    controller.reset(env)
    rewards = []
    min_gaps = list(env.platoon.gaps())
    res = None
    while not env.done:
        res = env.step(controller.act(env))
        rewards.append(res.reward)
        gaps = env.platoon.gaps()
        if len(gaps) != len(min_gaps):
            min_gaps = list(gaps)
        min_gaps = [min(a, b) for a, b in zip(min_gaps, gaps)]
    return EpisodeResult(
        log=env.log,
        collision=env.collision,
        steps=env.platoon.time_step,
        rewards=rewards,
        final_gaps=env.platoon.gaps(),
        min_gaps=min_gaps,
        truncated=bool(res.truncated) if res is not None else False,
    )


def rest_gaps_ok(result: EpisodeResult, threshold: float = 2.0) -> bool:
    return not result.collision.occurred and all(g > threshold for g in result.final_gaps) and math.isfinite(sum(result.final_gaps))
