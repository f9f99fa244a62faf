"""DDPG actor-critic for the middle vehicle: acting, Bellman targets, updates, training, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dynamics import EnvState, ScenarioConfig, sample_scenario
from .env import PlatoonEnv
from .errors import CheckpointError, DomainError
from .nn import Adam, Mlp, ReplayBuffer, load_container, save_container, soft_update
from .reward import RewardParams

log = logging.getLogger(__name__)

STATE_DIM = 8
# distances /50, velocities /30, accelerations /7.5
OBS_SCALE = np.array([1 / 50, 1 / 50, 1 / 30, 1 / 30, 1 / 30, 1 / 7.5, 1 / 7.5, 1 / 7.5])
GAP_CLIP = 100.0


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_episodes: int = Field(2500, ge=1)
    episode_steps: int = Field(1500, ge=1)
    actor_lr: float = Field(1e-3, ge=0)
    critic_lr: float = Field(2e-3, ge=0)
    batch: int = Field(512, ge=1)
    memory: int = Field(10000, ge=1)
    warmup: int = Field(1000, ge=0)
    gamma: float = Field(0.99, ge=0, le=1)
    tau: float = Field(0.005, ge=0, le=1)
    hidden: tuple[int, ...] = (256, 256, 256)
    noise_initial: float = Field(1.0, ge=0)
    noise_decay: float = Field(0.999, gt=0, le=1)
    noise_floor: float = Field(0.05, ge=0)
    seeds: list[int] = Field(default_factory=lambda: list(range(20, 50)))
    reward_variant: Literal["distance", "fixed"] = "distance"
    reward_scale: float = Field(0.01, gt=0)
    eval_every: int = Field(50, ge=1)
    eval_episodes: int = Field(20, ge=1)
    feasible_only: bool = True
    # episodes cycle through these scenario families; empty means the default mix
    scenarios: list[ScenarioConfig] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        return self

    def noise_at(self, episode: int) -> float:
        return max(self.noise_initial * self.noise_decay**episode, self.noise_floor)

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]


class DdpgAgent:
    def __init__(
        self,
        seed: int = 0,
        hidden: Sequence[int] = (256, 256, 256),
        gamma: float = 0.99999,
        tau: float = 0.005,
        actor_lr: float = 1e-3,
        critic_lr: float = 2e-3,
        a_min: float = -7.5,
        a_max: float = 3.0,
        state_dim: int = STATE_DIM,
        obs_scale: Optional[np.ndarray] = None,
        memory: int = 10000,
    ):
        if not 0.0 <= gamma <= 1.0:
            raise DomainError("gamma must lie in [0, 1]")
        if not a_min < 0 < a_max:
            raise DomainError("action bounds must straddle zero")
        rng = np.random.default_rng(seed)
        hidden = list(hidden)
        self.state_dim = state_dim
        self.actor = Mlp([state_dim, *hidden, 1], ["relu"] * len(hidden) + ["tanh"], rng)
        self.critic = Mlp([state_dim + 1, *hidden, 1], ["relu"] * len(hidden) + ["none"], rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor, actor_lr)
        self.critic_opt = Adam(self.critic, critic_lr)
        self.gamma = gamma
        self.tau = tau
        self.a_min = a_min
        self.a_max = a_max
        if obs_scale is None:
            obs_scale = OBS_SCALE if state_dim == STATE_DIM else np.ones(state_dim)
        self.obs_scale = np.asarray(obs_scale, dtype=float)
        self.memory = ReplayBuffer(memory, state_dim)
        self.meta: dict = {"seed": seed, "episodes": 0}

    # ------------------------------------------------------------------ acting
    def normalize(self, s) -> np.ndarray:
        s = s.as_array() if isinstance(s, EnvState) else np.asarray(s, dtype=float)
        s = s.copy()
        if self.state_dim == STATE_DIM:
            s[..., :2] = np.minimum(s[..., :2], GAP_CLIP)
        return s * self.obs_scale

    def scale_action(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, -self.a_min * u, self.a_max * u)

    def unit_action(self, a):
        a = np.asarray(a, dtype=float)
        return np.where(a < 0, a / -self.a_min, a / self.a_max)

    def policy(self, states_norm: np.ndarray) -> np.ndarray:
        """Deterministic physical actions for a batch of normalised states."""
        return self.scale_action(self.actor.forward(states_norm)[..., 0])

    def act(self, s, noise_std: float = 0.0, rng: Optional[np.random.Generator] = None) -> float:
        x = self.normalize(s)
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite state")
        a = float(self.scale_action(self.actor.forward(x)[0]))
        a = min(max(a, self.a_min), self.a_max)
        if noise_std > 0:
            if rng is None:
                raise DomainError("exploration noise needs an rng")
            a = min(max(a + noise_std * rng.standard_normal(), self.a_min), self.a_max)
        return a

    # ---------------------------------------------------------------- learning
    def critic_targets(self, batch, gamma: Optional[float] = None) -> np.ndarray:
        s, u, r, s2, done = batch
        gamma = self.gamma if gamma is None else gamma
        u2 = self.target_actor.forward(s2)
        q2 = self.target_critic.forward(np.concatenate([s2, u2], axis=1))[:, 0]
        return r + gamma * q2 * (1.0 - np.asarray(done, dtype=float))

    def update_critic(self, batch) -> float:
        s, u, r, s2, done = batch
        y = self.critic_targets(batch)
        q, cache = self.critic.forward(np.concatenate([s, np.asarray(u).reshape(-1, 1)], axis=1), cache=True)
        err = q[:, 0] - y
        loss = float(np.mean(err * err))
        grads, _ = self.critic.backward(cache, (2.0 / len(err)) * err[:, None])
        self.critic_opt.step(grads)
        return loss

    def update_actor(self, batch) -> float:
        s = batch[0]
        u, a_cache = self.actor.forward(s, cache=True)
        q, c_cache = self.critic.forward(np.concatenate([s, u], axis=1), cache=True)
        _, g_in = self.critic.backward(c_cache, np.full_like(q, 1.0 / len(q)), param_grads=False)
        # ascend mean Q: descend its negative
        grads, _ = self.actor.backward(a_cache, -g_in[:, -1:])
        self.actor_opt.step(grads)
        return float(np.mean(q))

    def soft_update_targets(self) -> None:
        soft_update(self.target_actor, self.actor, self.tau)
        soft_update(self.target_critic, self.critic, self.tau)

    def learn(self, batch_size: int, rng: np.random.Generator) -> tuple[float, float]:
        batch = self.memory.sample(batch_size, rng)
        lc = self.update_critic(batch)
        qa = self.update_actor(batch)
        self.soft_update_targets()
        return lc, qa

    # ------------------------------------------------------------- persistence
    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        arrays = {}
        for name in ("actor", "critic", "target_actor", "target_critic"):
            arrays.update(getattr(self, name).state_arrays(name))
        arrays.update(self.actor_opt.state_arrays("actor_opt"))
        arrays.update(self.critic_opt.state_arrays("critic_opt"))
        arrays["obs_scale"] = self.obs_scale
        meta = {
            "kind": "ddpg",
            "actor": self.actor.spec(),
            "critic": self.critic.spec(),
            "gamma": self.gamma,
            "tau": self.tau,
            "action_bounds": [self.a_min, self.a_max],
            "state_dim": self.state_dim,
            "actor_opt": self.actor_opt.hyper(),
            "critic_opt": self.critic_opt.hyper(),
            "training": dict(self.meta, **(extra_meta or {})),
        }
        save_container(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "DdpgAgent":
        arrays, meta = load_container(path)
        if meta.get("kind") != "ddpg":
            raise CheckpointError(f"{path} is not an agent checkpoint")
        try:
            agent = cls.__new__(cls)
            agent.state_dim = meta["state_dim"]
            for name in ("actor", "target_actor"):
                setattr(agent, name, Mlp.from_arrays(meta["actor"], arrays, name))
            for name in ("critic", "target_critic"):
                setattr(agent, name, Mlp.from_arrays(meta["critic"], arrays, name))
            agent.actor_opt = Adam(agent.actor, meta["actor_opt"]["lr"])
            agent.actor_opt.load(meta["actor_opt"], arrays, "actor_opt")
            agent.critic_opt = Adam(agent.critic, meta["critic_opt"]["lr"])
            agent.critic_opt.load(meta["critic_opt"], arrays, "critic_opt")
            agent.gamma, agent.tau = meta["gamma"], meta["tau"]
            agent.a_min, agent.a_max = meta["action_bounds"]
            agent.obs_scale = np.array(arrays["obs_scale"])
            agent.memory = ReplayBuffer(1, agent.state_dim)
            agent.meta = meta["training"]
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} is missing {exc}") from exc
        return agent


def save_checkpoint(agent: DdpgAgent, path, extra_meta: Optional[dict] = None) -> None:
    agent.save(path, extra_meta)


def load_checkpoint(path) -> DdpgAgent:
    return DdpgAgent.load(path)


def default_checkpoint_path() -> Path:
    """The trained policy shipped with the package."""
    return Path(__file__).with_name("data") / "policy.npz"


def agent_from_config(cfg: TrainingConfig, seed: int) -> DdpgAgent:
    return DdpgAgent(
        seed=seed,
        hidden=cfg.hidden,
        gamma=cfg.gamma,
        tau=cfg.tau,
        actor_lr=cfg.actor_lr,
        critic_lr=cfg.critic_lr,
        memory=cfg.memory,
    )


# --------------------------------------------------------------------------
# training


@dataclass
class EpisodeStats:
    ret: float
    steps: int
    collision: bool
    min_gaps: tuple[float, float]
    updates: int = 0

    def as_row(self) -> dict:
        return {"return": self.ret, "steps": self.steps, "collision": int(self.collision),
                "min_d_fm": self.min_gaps[0], "min_d_mr": self.min_gaps[1]}


def train_episode(
    agent: DdpgAgent,
    env: PlatoonEnv,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    noise_std: float = 0.0,
    learn: bool = True,
) -> EpisodeStats:
    s = env.reset()
    ret = 0.0
    min_fm = min_mr = math.inf
    updates = 0
    while not env.done and env.platoon.time_step < cfg.episode_steps:
        a = agent.act(s, noise_std, rng)
        res = env.step([a])
        ret += res.reward
        if learn:
            agent.memory.push(agent.normalize(s), float(agent.unit_action(a)), res.reward * cfg.reward_scale,
                              agent.normalize(res.obs), res.terminated)
            if len(agent.memory) >= max(cfg.batch, cfg.warmup):
                agent.learn(cfg.batch, rng)
                updates += 1
        min_fm, min_mr = min(min_fm, res.obs.d_fm), min(min_mr, res.obs.d_mr)
        s = res.obs
    return EpisodeStats(ret, env.platoon.time_step, env.collision.occurred, (min_fm, min_mr), updates)


def default_training_scenarios() -> list[ScenarioConfig]:
    """Scenario families cycled during training.

    The squeeze family spreads lead and follower braking over the whole
    evaluation range; the others put TTC-braking light or heavy followers and
    cut-ins behind or ahead of the ego at lower cruising speeds.
    """
    from .dynamics import CutInConfig, Normal, Uniform, VehicleSpec

    wide = Uniform(lo=-7.5, hi=0.0)
    squeeze = ScenarioConfig(lead_brake_decel=wide, follower_mode="brake", follower_brake_decel=wide)

    def spaced(lead_x, ego_x, v0, fol_class, cutin=None, brake=(1.0, 2.0)):
        return ScenarioConfig(
            vehicles=[
                VehicleSpec(role="lead", x=Normal(mean=lead_x, std=4.0), v0=v0),
                VehicleSpec(role="rl", x=Normal(mean=ego_x, std=3.0), v0=v0),
                VehicleSpec(role="follower", vclass=fol_class, x=Normal(mean=0.0, std=0.0), v0=v0),
            ],
            lead_brake_decel=Uniform(lo=-7.5, hi=-3.0),
            lead_brake_time=Uniform(lo=brake[0], hi=brake[1]),
            cutin=cutin,
        )

    return [
        squeeze,
        spaced(70.0, 35.0, 14.0, "heavy"),
        squeeze,
        spaced(110.0, 40.0, 14.0, "heavy", CutInConfig(trigger_step=30, insert_role="leading"), (1.6, 2.2)),
        squeeze,
        spaced(80.0, 55.0, 14.0, "heavy", CutInConfig(trigger_step=30, insert_role="following", vclass="heavy"), (1.6, 2.2)),
        squeeze,
        spaced(60.0, 30.0, 17.0, "light"),
    ]


MAX_FEASIBLE_DRAWS = 50


def episode_instance(cfg: TrainingConfig, seed: int, episode: int):
    """Scenario for one training episode; squeeze draws with no room for the ego are redrawn."""
    from .dynamics import instance_feasible

    families = cfg.scenarios or default_training_scenarios()
    scen = families[episode % len(families)].model_copy(update={"episode_max_steps": cfg.episode_steps})
    inst = sample_scenario(scen, [seed, episode])
    for attempt in range(1, MAX_FEASIBLE_DRAWS):
        if not cfg.feasible_only or instance_feasible(inst):
            break
        inst = sample_scenario(scen, [seed, episode, attempt])
    return inst


@dataclass
class SeedRun:
    seed: int
    stats: list[EpisodeStats] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)  # (episode, success fraction)
    best_score: float = -math.inf
    best_path: Optional[Path] = None

    @property
    def returns(self) -> np.ndarray:
        return np.array([s.ret for s in self.stats])


Evaluator = Callable[[DdpgAgent], float]


def train_seed(
    cfg: TrainingConfig,
    seed: int,
    out_dir=None,
    evaluator: Optional[Evaluator] = None,
    reward_params: Optional[RewardParams] = None,
) -> tuple[DdpgAgent, SeedRun]:
    rp = reward_params or RewardParams(variant=cfg.reward_variant)
    agent = agent_from_config(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    run = SeedRun(seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for ep in range(cfg.max_episodes):
        env = PlatoonEnv(episode_instance(cfg, seed, ep), rp)
        stats = train_episode(agent, env, cfg, rng, cfg.noise_at(ep))
        run.stats.append(stats)
        agent.meta["episodes"] = ep + 1
        if evaluator is not None and (ep + 1) % cfg.eval_every == 0:
            score = evaluator(agent)
            run.evals.append((ep + 1, score))
            log.info("seed %d episode %d eval %.3f", seed, ep + 1, score)
            if score > run.best_score and out is not None:
                run.best_score = score
                run.best_path = out / f"best_seed{seed}.npz"
                agent.save(run.best_path, {"config_hash": cfg.digest(), "eval_score": score})
        if (ep + 1) % 10 == 0:
            recent = run.returns[-10:]
            log.info("seed %d episode %d mean return %.1f", seed, ep + 1, float(recent.mean()))
    if out is not None:
        agent.save(out / f"final_seed{seed}.npz", {"config_hash": cfg.digest()})
    return agent, run


def scenario_evaluator(cfg: TrainingConfig, episodes: int, seed: int = 10_000, reward_params=None) -> Evaluator:
    """Fraction of noise-free collision-free episodes over a fixed scenario set."""
    rp = reward_params or RewardParams(variant=cfg.reward_variant)
    instances = [episode_instance(cfg, seed, i) for i in range(episodes)]

    def evaluate(agent: DdpgAgent) -> float:
        ok = 0
        for inst in instances:
            env = PlatoonEnv(inst, rp)
            stats = train_episode(agent, env, cfg, np.random.default_rng(0), 0.0, learn=False)
            ok += not stats.collision
        return ok / len(instances)

    return evaluate


def reward_curves(runs: Sequence[SeedRun]) -> dict[str, np.ndarray]:
    n = min(len(r.stats) for r in runs)
    mat = np.stack([r.returns[:n] for r in runs])
    return {"episode": np.arange(1, n + 1), "returns": mat, "mean": mat.mean(axis=0), "std": mat.std(axis=0)}


def write_reward_csv(runs: Sequence[SeedRun], path) -> None:
    c = reward_curves(runs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", *[f"seed{r.seed}" for r in runs], "mean", "std"])
        for i, ep in enumerate(c["episode"]):
            w.writerow([int(ep), *[repr(float(x)) for x in c["returns"][:, i]], repr(float(c["mean"][i])), repr(float(c["std"][i]))])


def smoothed(x: Sequence[float], window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if window < 1 or len(x) < window:
        raise DomainError("window must be between 1 and the series length")
    return np.convolve(x, np.ones(window) / window, mode="valid")


def train(cfg: TrainingConfig, out_dir, evaluator: Optional[Evaluator] = None):
    """Train every seed in turn. Returns (best agent, per-seed runs)."""
    out = Path(out_dir)
    runs = []
    best, best_score = None, -math.inf
    for seed in cfg.seeds:
        agent, run = train_seed(cfg, seed, out, evaluator)
        runs.append(run)
        if run.best_path is not None and run.best_score > best_score:
            best, best_score = DdpgAgent.load(run.best_path), run.best_score
        elif best is None:
            best = agent
    write_reward_csv(runs, out / "reward_curve.csv")
    (out / "train_summary.json").write_text(json.dumps({
        "config_hash": cfg.digest(),
        "seeds": [r.seed for r in runs],
        "best_score": best_score if math.isfinite(best_score) else None,
        "evals": {str(r.seed): r.evals for r in runs},
    }, indent=2))
    if best is not None:
        best.save(out / "best.npz", {"config_hash": cfg.digest()})
    return best, runs
