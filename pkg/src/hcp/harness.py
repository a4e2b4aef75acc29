"""Experiment orchestration: training, evaluation, fine-tuning, stress tests and run manifests."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .embedding import EmbeddingTable
from .envs import REACHER, Box, Env, TaskConfig, compute_reward
from .errors import ConfigError, MigrationError, ProtocolError, SimulationDiverged
from .hardware import ALGORITHMS, BASELINE, HCP_E, HCP_E_DYN, HCP_I, HardwareProvider
from .nn import load_checkpoint, net_arrays, net_from_arrays, save_checkpoint
from .rl import (DdpgAgent, DdpgConfig, PpoAgent, PpoBatch, PpoConfig, ReplayBuffer, ddpg_update, gae,
                 her_relabel, ppo_update, run_episode, sample_robot_index, transitions_to_arrays)
from .rng import derive_seed, make_rng, rng_state
from .robots import HOPPER, MANIPULATOR_TYPES, LinkDef, SamplingRanges, build_pool, planar_arm

log = logging.getLogger(__name__)

TYPES, PLANAR, HOPPER_TORSO_MASS = "types", "planar", "hopper_torso_mass"
ROBOT_KINDS = (TYPES, PLANAR, HOPPER_TORSO_MASS)
# planar arm families: nominal link lengths (m); halfwidth 0.05 unless overridden as ranges.lengths["P2_0"] etc.
PLANAR_TYPES = {"P2": (0.30, 0.25), "P3": (0.22, 0.18, 0.15), "P4": (0.18, 0.15, 0.12, 0.10)}


@dataclass(frozen=True)
class EvalProtocol:
    trials: int = 10
    robots_per_trial: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run. Unknown keys in a config file are errors."""

    name: str = "experiment"
    algorithm: str = HCP_E
    task: TaskConfig = field(default_factory=TaskConfig)
    robot_kind: str = TYPES
    train_types: tuple = tuple("ABCDEFGH")
    held_out_type: str | None = "I"
    pool_size: int = 140  # robots per training type
    pool_seed: int = 0
    ranges: dict = field(default_factory=dict)  # SamplingRanges overrides
    seeds: tuple = (0,)
    episodes: int = 500  # DDPG episode budget
    total_steps: int = 200_000  # PPO environment-step budget
    eval_every: int = 50  # episodes (DDPG) or rollouts (PPO); 0 disables periodic evaluation
    eval_robots: int = 100
    eval_max_steps: int | None = None
    checkpoint_every: int = 0
    embedding_dim: int = 32
    embedding_lr: float = 1e-4
    embedding_init_scale: float = 0.1
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    protocol: EvalProtocol = field(default_factory=EvalProtocol)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.robot_kind not in ROBOT_KINDS:
            raise ConfigError(f"unknown robot_kind {self.robot_kind!r}")
        object.__setattr__(self, "train_types", tuple(self.train_types))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "ranges", _tupled(self.ranges))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.held_out_type is not None and self.held_out_type in self.train_types:
            raise ConfigError("held_out_type must not be a training type")
        if self.robot_kind == TYPES:
            hop = self.task.task == HOPPER
            for t in self.train_types:
                if (t == HOPPER) != hop or (t != HOPPER and t not in MANIPULATOR_TYPES):
                    raise ConfigError(f"robot type {t!r} does not fit task {self.task.task}")
        if self.robot_kind == PLANAR:
            bad = [t for t in self.train_types + ((self.held_out_type,) if self.held_out_type else ())
                   if t not in PLANAR_TYPES]
            if bad or self.task.task == HOPPER:
                raise ConfigError(f"planar pools take types {sorted(PLANAR_TYPES)} and a manipulator task")
        if self.robot_kind == HOPPER_TORSO_MASS and self.task.task != HOPPER:
            raise ConfigError("hopper_torso_mass pools need the hopper task")
        if self.pool_size < 1 or self.episodes < 0 or self.total_steps < 0:
            raise ConfigError("pool_size must be >= 1 and budgets >= 0")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        self.sampling_ranges()  # validates overrides

    @property
    def on_policy(self) -> bool:
        return self.task.task == HOPPER

    def sampling_ranges(self) -> SamplingRanges:
        base = SamplingRanges.hopper() if self.task.task == HOPPER else SamplingRanges.manipulator()
        over = dict(self.ranges)
        unknown = set(over) - {f.name for f in dataclasses.fields(SamplingRanges)}
        if unknown:
            raise ConfigError(f"unknown range keys: {sorted(unknown)}")
        if "lengths" in over:
            over["lengths"] = {**base.lengths, **over["lengths"]}
        return dataclasses.replace(base, **over)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "task":
                v = v.to_dict()
            elif f.name in ("ddpg", "ppo", "protocol"):
                v = dataclasses.asdict(v)
            d[f.name] = _plain(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "task" in d:
                d["task"] = TaskConfig.from_dict(d["task"]) if isinstance(d["task"], dict) else TaskConfig(d["task"])
            for k, c in (("ddpg", DdpgConfig), ("ppo", PpoConfig), ("protocol", EvalProtocol)):
                if k in d:
                    sub = dict(d[k])
                    bad = set(sub) - {f.name for f in dataclasses.fields(c)}
                    if bad:
                        raise ConfigError(f"unknown {k} keys: {sorted(bad)}")
                    if "hidden" in sub:
                        sub["hidden"] = tuple(sub["hidden"])
                    d[k] = c(**sub)
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _tupled(v):
    """Lists to tuples, recursively, so configs compare equal after a YAML round trip."""
    if isinstance(v, dict):
        return {k: _tupled(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return tuple(_tupled(x) for x in v)
    return v


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            d = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    if d is not None and not isinstance(d, dict):
        raise ConfigError("config file must hold a mapping")
    return ExperimentConfig.from_dict(d or {})


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# robot pools


def with_torso_mass(spec, multiplier: float):
    """Copy of a hopper whose torso mass is scaled by ``multiplier``."""
    base = spec.links[0]
    segs = tuple((a, b, m * multiplier) for a, b, m in base.segments)
    links = (LinkDef(segments=segs, radius=base.radius),) + tuple(spec.links[1:])
    mult = (multiplier,) + tuple(spec.mass_multipliers[1:])
    return dataclasses.replace(spec, links=links, mass_multipliers=mult)


def make_pool(cfg: ExperimentConfig, types, count: int, seed: int, tag: str = "train") -> list:
    """Robot pool for the configured robot kind; deterministic in ``seed``."""
    ranges = cfg.sampling_ranges()
    if cfg.robot_kind == TYPES:
        return build_pool(types, count, ranges, seed)
    rng = make_rng(seed, "pool", cfg.robot_kind, tag)
    pool = []
    if cfg.robot_kind == PLANAR:
        for t in types:
            spans = [ranges.lengths.get(f"{t}_{j}", (m, 0.05)) for j, m in enumerate(PLANAR_TYPES[t])]
            for i in range(count):
                lengths = tuple(rng.uniform(m - h, m + h) for m, h in spans)
                damping = float(ranges.sample_damping(rng, 1)[0])
                pool.append(planar_arm(lengths=lengths, masses=(1.0, 0.8, 0.6, 0.5)[:len(lengths)], damping=damping,
                                       robot_id=f"planar-{t}-{tag}-s{seed}-{i:04d}"))
        return pool
    from .robots import sample_robot  # HOPPER_TORSO_MASS
    base = sample_robot(HOPPER, SamplingRanges.fixed(HOPPER), 0, robot_id="hopper-base")
    lo, hi = ranges.mass_multiplier
    for i in range(count):
        m = float(rng.uniform(lo, hi))
        pool.append(dataclasses.replace(with_torso_mass(base, m), robot_id=f"hopper-torso-{tag}-s{seed}-{i:04d}"))
    return pool


def planar_reacher_task(max_steps: int = 100) -> TaskConfig:
    """Reacher in the horizontal plane of a 2-DOF planar arm (0.3 m mount height)."""
    return TaskConfig(task=REACHER, init_box=Box((0.35, 0.2, 0.3), (0.1, 0.1, 0.0)),
                      goal_box=Box((0.3, 0.0, 0.3), (0.3, 0.5, 0.0)), max_steps=max_steps)


def planar_reacher_config(episodes: int = 1000, algorithm: str = BASELINE, pool_size: int = 1, seeds=(0,),
                          **changes) -> ExperimentConfig:
    """Desk-scale single-robot DDPG setup used by the learning smoke tests."""
    cfg = ExperimentConfig(
        name="planar-reacher", algorithm=algorithm, task=planar_reacher_task(), robot_kind=PLANAR,
        train_types=("P2",), held_out_type=None, pool_size=pool_size, ranges={"damping": (0.01, 1.0)},
        seeds=seeds, episodes=episodes, eval_every=100, eval_robots=20,
        ddpg=DdpgConfig(hidden=(64, 64, 64), updates_per_episode=40, warmup_episodes=10, actor_lr=1e-3,
                        critic_lr=1e-3))
    return cfg.replace(**changes) if changes else cfg


def train_pool(cfg: ExperimentConfig) -> list:
    return make_pool(cfg, cfg.train_types, cfg.pool_size, cfg.pool_seed, "train")


def eval_pool(cfg: ExperimentConfig, pool: list) -> list:
    """Robots for periodic evaluation: fresh variants of the training types, or the
    training robots themselves when embeddings are learned (new robots have no row)."""
    if cfg.algorithm == HCP_I:
        return pool[:cfg.eval_robots]
    n_types = max(len(cfg.train_types), 1)
    per = -(-cfg.eval_robots // n_types)
    return make_pool(cfg, cfg.train_types, per, derive_seed(cfg.pool_seed, "eval-pool"), "eval")[:cfg.eval_robots]


def make_provider(cfg: ExperimentConfig, seed: int) -> HardwareProvider:
    table = None
    if cfg.algorithm == HCP_I:
        table = EmbeddingTable(cfg.embedding_dim, lr=cfg.embedding_lr, init_scale=cfg.embedding_init_scale,
                               seed=derive_seed(seed, "embedding"))
    return HardwareProvider(cfg.algorithm, cfg.sampling_ranges(), table)


# ---------------------------------------------------------------------------
# results and files


@dataclass
class EvalResult:
    success_rate_mean: float  # percent
    success_rate_std: float
    final_distances: list
    episode_lengths: list
    trial_rates: list = field(default_factory=list)
    returns: list = field(default_factory=list)

    def __post_init__(self):
        if np.isnan(self.success_rate_mean):  # hopper: returns only
            return
        if not 0.0 <= self.success_rate_mean <= 100.0 or self.success_rate_std < 0:
            raise ValueError("success rate mean must lie in [0, 100] and std >= 0")

    def distance_summary(self) -> dict:
        """Lower extreme, median and upper extreme of the final distances."""
        d = np.asarray([x for x in self.final_distances if np.isfinite(x)])
        if len(d) == 0:
            return {"min": float("nan"), "median": float("nan"), "max": float("nan")}
        return {"min": float(d.min()), "median": float(np.median(d)), "max": float(d.max())}


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# agents and checkpoints


def _dims(cfg: ExperimentConfig, provider: HardwareProvider):
    fixed = provider.dim if not provider.learnable else 0
    learned = provider.dim if provider.learnable else 0
    return fixed, learned


def build_agent(cfg: ExperimentConfig, provider: HardwareProvider, seed: int):
    rng = make_rng(seed, "agent-init")
    fixed, learned = _dims(cfg, provider)
    if cfg.on_policy:
        return PpoAgent(cfg.ppo, 14, cfg.task.action_dim, fixed, learned, rng)
    bounds = (-1.0 - cfg.task.beta * cfg.task.action_dim, 1.0)
    return DdpgAgent(cfg.ddpg, 14, 3, cfg.task.action_dim, fixed, learned, rng, reward_bounds=bounds)


def save_agent(path, cfg: ExperimentConfig, agent, provider: HardwareProvider, extra_meta: dict | None = None):
    arrays = {}
    for name, net in agent.networks().items():
        arrays.update(net_arrays(name, net))
    arrays.update(agent.norm.state_dict("norm"))
    if isinstance(agent, PpoAgent):
        arrays["log_std"] = agent.log_std_params
    if provider.learnable:
        arrays.update(provider.table.state_dict())
    meta = {"config": cfg.to_dict(), "algorithm": cfg.algorithm, "fixed_dim": agent.fixed_dim,
            "learned_dim": agent.learned_dim, "in_dim": agent.in_dim, "code_version": __version__,
            "specs": {name: net.spec.to_dict() for name, net in agent.networks().items()}}
    meta.update(extra_meta or {})
    save_checkpoint(path, arrays, meta)


@dataclass
class LoadedCheckpoint:
    cfg: ExperimentConfig
    agent: object
    provider: HardwareProvider
    meta: dict


def load_agent(path, seed: int = 0) -> LoadedCheckpoint:
    from .nn import MlpSpec
    arrays, meta = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    provider = make_provider(cfg, seed)
    if provider.learnable:
        provider.table.load_state_dict(arrays)
    agent = build_agent(cfg, provider, seed)
    for name in agent.networks():
        net = net_from_arrays(name, MlpSpec.from_dict(meta["specs"][name]), arrays, dtype=np.dtype(
            cfg.ppo.dtype if cfg.on_policy else cfg.ddpg.dtype))
        setattr(agent, name, net)
    agent.norm.load_state_dict(arrays, "norm")
    if isinstance(agent, PpoAgent):
        agent.log_std_params = np.array(arrays["log_std"], float)
    return LoadedCheckpoint(cfg, agent, provider, meta)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_ddpg(agent: DdpgAgent, provider: HardwareProvider, robots: list, task: TaskConfig, seed: int,
                  max_steps: int | None = None) -> tuple[list, list, list]:
    """Deterministic episodes, one per robot. Returns (success flags, final distances, lengths)."""
    if max_steps:
        task = dataclasses.replace(task, max_steps=max_steps)
    env = Env(task)
    succ, dist, lens = [], [], []
    for i, robot in enumerate(robots):
        vf = provider.fixed(robot)
        vl = provider.vector(robot) if provider.learnable else ()
        policy = lambda o: agent.act(o.state, o.goal, vf, vl)  # noqa: E731
        try:
            res = run_episode(env, robot, policy, derive_seed(seed, "eval", i))
        except SimulationDiverged as e:
            log.warning("evaluation episode diverged: %s", e)
            succ.append(False), dist.append(float("nan")), lens.append(env.t)
            continue
        succ.append(res.success), dist.append(res.final_distance), lens.append(res.steps)
    return succ, dist, lens


def evaluate_ppo(agent: PpoAgent, provider: HardwareProvider, robots: list, task: TaskConfig, seed: int,
                 max_steps: int | None = None) -> tuple[list, list]:
    """Deterministic (mean-action) episodes stepped in lockstep. Returns (returns, lengths)."""
    if max_steps:
        task = dataclasses.replace(task, max_steps=max_steps)
    envs = [Env(task) for _ in robots]
    obs = [env.reset(r, derive_seed(seed, "eval", i)) for i, (env, r) in enumerate(zip(envs, robots))]
    fixed = np.array([provider.fixed(r) for r in robots]).reshape(len(robots), -1)
    learned = np.array([provider.vector(r) for r in robots]).reshape(len(robots), -1) if provider.learnable else None
    rets = np.zeros(len(robots))
    lens = np.zeros(len(robots), dtype=int)
    alive = np.ones(len(robots), bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        x = agent.inputs(np.array([obs[i].state for i in idx]), fixed[idx] if agent.fixed_dim else None,
                         learned[idx] if agent.learned_dim else None)
        a, _, _ = agent.act(x)
        for j, i in enumerate(idx):
            try:
                obs[i], r, done, _ = envs[i].step(np.clip(a[j], -1, 1))
            except SimulationDiverged as e:
                log.warning("evaluation episode diverged: %s", e)
                done, r = True, 0.0
            rets[i] += r
            lens[i] = envs[i].t
            if done:
                alive[i] = False
    return rets.tolist(), lens.tolist()


# ---------------------------------------------------------------------------
# training


@dataclass
class RunResult:
    seed: int
    curve_path: Path
    checkpoint_path: Path
    curve: list
    final_metric: float
    updates: int
    diverged_episodes: int
    episodes: int


def _rng_meta(**rngs) -> dict:
    return {k: rng_state(r) for k, r in rngs.items()}


def _seed_dir(out_dir, seed) -> Path:
    d = Path(out_dir) / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def train(cfg: ExperimentConfig, out_dir, seeds=None, init_checkpoint=None, pool=None) -> list[RunResult]:
    """One run per seed; a failing seed is logged and the others continue.

    Writes ``seed_<s>/learning_curve.csv``, ``seed_<s>/checkpoint.npz`` and a
    ``manifest.json`` with the config hash and output digests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(seeds if seeds is not None else cfg.seeds)
    save_config(cfg, out_dir / "config.yaml")
    pool = pool if pool is not None else train_pool(cfg)
    results, errors = [], {}
    for seed in seeds:
        try:
            fn = _train_ppo if cfg.on_policy else _train_ddpg
            results.append(fn(cfg, seed, pool, _seed_dir(out_dir, seed), init_checkpoint))
        except (ConfigError, MigrationError):
            raise
        except Exception as e:  # noqa: BLE001 - a failing seed must not stop the others
            log.exception("seed %d failed", seed)
            errors[seed] = f"{type(e).__name__}: {e}"
    write_manifest(out_dir, cfg, seeds, results, errors, init_checkpoint)
    return results


def _warm_start(agent, provider, init_checkpoint):
    """Copy network weights and normaliser statistics from a checkpoint; embedding rows start fresh."""
    if init_checkpoint is None:
        return
    src = load_agent(init_checkpoint)
    if (src.agent.in_dim, src.agent.fixed_dim, src.agent.learned_dim) != (agent.in_dim, agent.fixed_dim,
                                                                          agent.learned_dim):
        raise MigrationError(f"checkpoint input layout {src.agent.in_dim}/{src.agent.fixed_dim}/"
                             f"{src.agent.learned_dim} does not match {agent.in_dim}/{agent.fixed_dim}/"
                             f"{agent.learned_dim}")
    if type(src.agent) is not type(agent):
        raise MigrationError("checkpoint was trained with a different algorithm family")
    for name, net in agent.networks().items():
        other = src.agent.networks()[name]
        if other.spec != net.spec:
            raise MigrationError(f"network {name} architecture differs from the checkpoint")
        net.set_params(other.params.values)
    agent.norm = src.agent.norm
    if isinstance(agent, PpoAgent):
        agent.log_std_params = src.agent.log_std_params.copy()
    if isinstance(agent, DdpgAgent):
        agent.actor_target = agent.actor.clone()
        agent.critic_target = agent.critic.clone()


def _train_ddpg(cfg: ExperimentConfig, seed: int, pool: list, out: Path, init_checkpoint=None) -> RunResult:
    dc = cfg.ddpg
    task = cfg.task
    provider = make_provider(cfg, seed)
    provider.register(pool)
    agent = build_agent(cfg, provider, seed)
    _warm_start(agent, provider, init_checkpoint)
    evals = eval_pool(cfg, pool)
    rng = make_rng(seed, "train")
    her_rng = make_rng(seed, "her")
    upd_rng = make_rng(seed, "updates")
    env = Env(task)
    buffer = ReplayBuffer(min(dc.buffer_size, max(cfg.episodes, 1) * task.max_steps * (1 + dc.her_k)), 14, 3,
                          task.action_dim)
    fixed_table = np.array([provider.fixed(r) for r in pool]).reshape(len(pool), -1)
    row_of = np.array([provider.row(r) for r in pool], dtype=np.int64)
    def reward_fn(ach, g, a):
        return compute_reward(ach, g, a, task.epsilon, task.beta)
    curve, updates, diverged = [], 0, 0
    losses = {"critic_loss": float("nan"), "actor_loss": float("nan")}
    train_succ = []

    def do_eval(ep):
        s, d, _ = evaluate_ddpg(agent, provider, evals, task, derive_seed(seed, "eval-round"), cfg.eval_max_steps)
        rate = 100.0 * float(np.mean(s)) if s else 0.0
        recent = 100.0 * float(np.mean(train_succ[-100:])) if train_succ else 0.0
        curve.append((ep, rate, recent, losses["critic_loss"], losses["actor_loss"], updates))
        log.info("seed %d episode %d eval success %.1f%% train %.1f%%", seed, ep, rate, recent)

    for ep in range(cfg.episodes):
        if cfg.eval_every and ep % cfg.eval_every == 0:
            do_eval(ep)
        i = sample_robot_index(rng, len(pool))
        robot = pool[i]
        vf = fixed_table[i]
        vl = provider.table.values[row_of[i]].copy() if provider.learnable else ()
        random_ep = rng.random() < dc.random_episode_prob
        noise_rng = make_rng(seed, "noise", ep)
        policy = lambda o: agent.act(o.state, o.goal, vf, vl, noise_rng, random_ep)  # noqa: E731
        try:
            res = run_episode(env, robot, policy, derive_seed(seed, "episode", ep), ep, i)
        except SimulationDiverged as e:
            diverged += 1
            log.warning("discarding diverged episode %d: %s", ep, e)
            continue
        train_succ.append(res.success)
        data = her_relabel(res.transitions, dc.her_k, reward_fn, her_rng, epsilon=task.epsilon)
        arr = transitions_to_arrays(data, 3)
        buffer.add_arrays(**arr)
        parts = [arr["state"], arr["goal"]] + ([fixed_table[arr["robot_idx"]]] if agent.fixed_dim else [])
        agent.norm.update(np.concatenate(parts, axis=1))
        if ep + 1 >= dc.warmup_episodes:
            for _ in range(dc.updates_per_episode):
                stats = ddpg_update(buffer, agent, upd_rng, fixed_table, provider.table, row_of)
                if stats is not None:
                    updates += 1
                    losses = stats
        if cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
            save_agent(out / f"checkpoint_ep{ep + 1}.npz", cfg, agent, provider, {"episodes": ep + 1, "seed": seed,
                       "rng_state": _rng_meta(train=rng, her=her_rng, updates=upd_rng)})
    if cfg.eval_every or cfg.episodes == 0 or not curve:
        do_eval(cfg.episodes)
    path = write_csv(out / "learning_curve.csv",
                     ["episode", "eval_success_rate", "train_success_rate", "critic_loss", "actor_loss", "updates"],
                     curve)
    ck = out / "checkpoint.npz"
    save_agent(ck, cfg, agent, provider, {"episodes": cfg.episodes, "seed": seed, "updates": updates,
               "rng_state": _rng_meta(train=rng, her=her_rng, updates=upd_rng)})
    return RunResult(seed, path, ck, curve, curve[-1][1], updates, diverged, cfg.episodes)


def _train_ppo(cfg: ExperimentConfig, seed: int, pool: list, out: Path, init_checkpoint=None) -> RunResult:
    pc = cfg.ppo
    task = cfg.task
    provider = make_provider(cfg, seed)
    provider.register(pool)
    agent = build_agent(cfg, provider, seed)
    _warm_start(agent, provider, init_checkpoint)
    evals = eval_pool(cfg, pool)
    rng = make_rng(seed, "train")
    act_rng = make_rng(seed, "actions")
    upd_rng = make_rng(seed, "updates")
    K, T = pc.n_actors, pc.horizon
    fixed_table = np.array([provider.fixed(r) for r in pool]).reshape(len(pool), -1)
    row_of = np.array([provider.row(r) for r in pool], dtype=np.int64)
    table = provider.table
    envs = [Env(task) for _ in range(K)]
    n_episodes = 0
    cur = np.zeros(K, dtype=np.int64)
    obs = [None] * K
    ep_ret = np.zeros(K)

    def start(k):
        nonlocal n_episodes
        cur[k] = sample_robot_index(rng, len(pool))
        obs[k] = envs[k].reset(pool[cur[k]], derive_seed(seed, "episode", n_episodes))
        ep_ret[k] = 0.0
        n_episodes += 1

    for k in range(K):
        start(k)
    curve, updates, diverged, steps, rollout = [], 0, 0, 0, 0
    finished: list = []
    losses = {"policy_loss": float("nan"), "value_loss": float("nan"), "entropy": float("nan")}

    def inputs(states, idx):
        learned = table.values[row_of[idx]] if agent.learned_dim else None
        return agent.inputs(states, fixed_table[idx] if agent.fixed_dim else None, learned)

    def do_eval():
        if not cfg.eval_every:
            return float("nan")
        rets, _ = evaluate_ppo(agent, provider, evals, task, derive_seed(seed, "eval-round"), cfg.eval_max_steps)
        return float(np.mean(rets))

    eval_ret = do_eval()
    curve.append((0, 0, eval_ret, float("nan"), losses["policy_loss"], losses["value_loss"], losses["entropy"]))
    while steps < cfg.total_steps:
        S = np.zeros((K, T, 14))
        R = np.zeros((K, T))
        A = np.zeros((K, T, task.action_dim))
        LP = np.zeros((K, T))
        V = np.zeros((K, T))
        NV = np.zeros((K, T))
        END = np.zeros((K, T), bool)
        IDX = np.zeros((K, T), dtype=np.int64)
        valid = np.ones((K, T), bool)
        for t in range(T):
            states = np.array([o.state for o in obs])
            x = inputs(states, cur)
            a, lp, v = agent.act(x, act_rng)
            S[:, t], A[:, t], LP[:, t], V[:, t], IDX[:, t] = states, a, lp, v, cur
            boot = []
            for k in range(K):
                try:
                    obs[k], r, done, info = envs[k].step(np.clip(a[k], -1.0, 1.0))
                except SimulationDiverged as e:
                    diverged += 1
                    log.warning("diverged hopper episode dropped: %s", e)
                    valid[k, t] = False
                    END[k, t] = True
                    start(k)
                    continue
                R[k, t] = r
                ep_ret[k] += r
                if done:
                    END[k, t] = True
                    finished.append(ep_ret[k])
                    if info["truncated"]:
                        boot.append((k, obs[k].state, cur[k]))
                    start(k)
                elif t == T - 1:
                    boot.append((k, obs[k].state, cur[k]))
            if boot:
                ks = [b[0] for b in boot]
                NV[ks, t] = agent.values(inputs(np.array([b[1] for b in boot]), np.array([b[2] for b in boot])))
            if t > 0:
                cont = ~END[:, t - 1]
                NV[cont, t - 1] = V[cont, t]
        steps += K * T
        rollout += 1
        adv = np.concatenate([gae(R[k], V[k], NV[k], END[k], pc.gamma, pc.lam) for k in range(K)])
        ret = adv + V.reshape(-1)
        m = valid.reshape(-1)
        flat_idx = IDX.reshape(-1)[m]
        batch = PpoBatch(S.reshape(-1, 14)[m], fixed_table[flat_idx], row_of[flat_idx],
                         A.reshape(-1, task.action_dim)[m], LP.reshape(-1)[m], V.reshape(-1)[m], adv[m], ret[m])
        try:
            losses = ppo_update(batch, agent, upd_rng, table)
        except FloatingPointError as e:
            dump = out / "nan_dump.npz"
            np.savez(dump, states=batch.states, actions=batch.actions, advantages=batch.advantages)
            raise FloatingPointError(f"{e}; batch dumped to {dump}") from e
        updates += pc.epochs * -(-len(batch.actions) // pc.minibatch)
        parts = [S.reshape(-1, 14)[m]] + ([fixed_table[flat_idx]] if agent.fixed_dim else [])
        agent.norm.update(np.concatenate(parts, axis=1))
        train_ret = float(np.mean(finished[-50:])) if finished else float("nan")
        if cfg.eval_every and (rollout % cfg.eval_every == 0 or steps >= cfg.total_steps):
            eval_ret = do_eval()
        else:
            eval_ret = float("nan")
        curve.append((steps, len(finished), eval_ret, train_ret, losses["policy_loss"], losses["value_loss"],
                      losses["entropy"]))
        log.info("seed %d steps %d train return %.1f eval %.1f", seed, steps, train_ret, eval_ret)
        if cfg.checkpoint_every and rollout % cfg.checkpoint_every == 0:
            save_agent(out / f"checkpoint_r{rollout}.npz", cfg, agent, provider, {"steps": steps, "seed": seed,
                       "rng_state": _rng_meta(train=rng, actions=act_rng, updates=upd_rng)})
    path = write_csv(out / "learning_curve.csv", ["steps", "episodes", "eval_return", "train_return", "policy_loss",
                                                  "value_loss", "entropy"], curve)
    ck = out / "checkpoint.npz"
    save_agent(ck, cfg, agent, provider, {"steps": steps, "seed": seed, "updates": updates,
               "rng_state": _rng_meta(train=rng, actions=act_rng, updates=upd_rng)})
    final = curve[-1][2] if np.isfinite(curve[-1][2]) else curve[-1][3]
    return RunResult(seed, path, ck, curve, float(final), updates, diverged, n_episodes)


# ---------------------------------------------------------------------------
# manifests


def code_version() -> str:
    return __version__


def write_manifest(out_dir, cfg: ExperimentConfig, seeds, results, errors=None, init_checkpoint=None,
                   extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    outputs = {}
    for r in results:
        outputs[str(Path(r.curve_path).relative_to(out_dir))] = file_sha256(r.curve_path)
    manifest = {
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seeds": list(seeds),
        "code_version": code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "init_checkpoint": str(init_checkpoint) if init_checkpoint else None,
        "runs": [{"seed": r.seed, "updates": r.updates, "episodes": r.episodes,
                  "diverged_episodes": r.diverged_episodes, "final_metric": r.final_metric} for r in results],
        "errors": {str(k): v for k, v in (errors or {}).items()},
        "outputs": outputs,
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def rerun_manifest(manifest_path, out_dir) -> dict:
    """Re-run the recorded config and seeds; returns ``{csv: identical?}``."""
    m = json.loads(Path(manifest_path).read_text())
    cfg = ExperimentConfig.from_dict(m["config"])
    if cfg.config_hash() != m["config_hash"]:
        raise ConfigError("manifest config does not match its hash")
    train(cfg, out_dir, seeds=m["seeds"], init_checkpoint=m.get("init_checkpoint"))
    out_dir = Path(out_dir)
    return {rel: (out_dir / rel).exists() and file_sha256(out_dir / rel) == h for rel, h in m["outputs"].items()}


# ---------------------------------------------------------------------------
# protocols


def zero_shot_eval(checkpoint, target_type: str, trials: int = 10, robots_per_trial: int = 100, seed: int = 0,
                   ranges: dict | None = None) -> EvalResult:
    """Deterministic policy on fresh robots of ``target_type``; std is across trials."""
    ck = load_agent(checkpoint)
    cfg = ck.cfg
    if cfg.algorithm == HCP_I:
        raise ProtocolError("learned embeddings have no row for unseen robots; use finetune instead")
    if ranges:
        cfg = cfg.replace(ranges={**cfg.ranges, **ranges})
    rates, dists, lens, rets = [], [], [], []
    for trial in range(trials):
        robots = make_pool(cfg, [target_type], robots_per_trial, derive_seed(seed, "zero-shot", trial), f"zs{trial}")
        if cfg.on_policy:
            r, l = evaluate_ppo(ck.agent, ck.provider, robots, cfg.task, derive_seed(seed, "zs-episodes", trial))
            rets.extend(r), lens.extend(l)
            rates.append(float("nan"))  # no success notion for the hopper; see returns
            continue
        s, d, l = evaluate_ddpg(ck.agent, ck.provider, robots, cfg.task, derive_seed(seed, "zs-episodes", trial),
                                cfg.eval_max_steps)
        rates.append(100.0 * float(np.mean(s)))
        dists.extend(d), lens.extend(l)
    return EvalResult(float(np.mean(rates)), float(np.std(rates)), dists, lens, rates, rets)


def curve_auc(curve_rows, x_key: str, y_key: str) -> float:
    """Mean of the metric over the curve's evaluation points (NaN points skipped)."""
    ys = [float(r[y_key]) for r in curve_rows if r[y_key] not in ("", "nan") and np.isfinite(float(r[y_key]))]
    return float(np.mean(ys)) if ys else float("nan")


@dataclass
class FinetuneResult:
    csv_path: Path
    pretrained_auc: list
    scratch_auc: list
    seeds: tuple


def finetune(checkpoint, new_pool: list, cfg: ExperimentConfig | None, out_dir, seeds=None,
             metric: str | None = None) -> FinetuneResult | Path:
    """Paired pretrained and from-scratch runs on the same pool and seeds.

    A zero budget returns the checkpoint path untouched."""
    src_arrays, meta = load_checkpoint(checkpoint)
    base = ExperimentConfig.from_dict(meta["config"])
    cfg = cfg or base
    budget = cfg.total_steps if cfg.on_policy else cfg.episodes
    if budget == 0:
        return Path(checkpoint)
    if cfg.algorithm != base.algorithm:
        raise MigrationError(f"checkpoint algorithm {base.algorithm} differs from {cfg.algorithm}")
    if cfg.algorithm == HCP_I and cfg.embedding_dim != base.embedding_dim:
        raise MigrationError(f"embedding dim {cfg.embedding_dim} differs from checkpoint {base.embedding_dim}")
    seeds = tuple(seeds if seeds is not None else cfg.seeds)
    out_dir = Path(out_dir)
    pre = train(cfg, out_dir / "pretrained", seeds, init_checkpoint=checkpoint, pool=new_pool)
    scratch = train(cfg, out_dir / "scratch", seeds, pool=new_pool)
    x_key = "steps" if cfg.on_policy else "episode"
    y_key = metric or ("train_return" if cfg.on_policy else "eval_success_rate")
    rows, pa, sa = [], [], []
    for arm, runs, aucs in (("pretrained", pre, pa), ("scratch", scratch, sa)):
        for r in runs:
            cur = read_csv(r.curve_path)
            aucs.append(curve_auc(cur, x_key, y_key))
            for row in cur:
                rows.append((arm, r.seed, row[x_key], row[y_key]))
    path = write_csv(out_dir / "finetune_curves.csv", ["arm", "seed", x_key, y_key], rows)
    return FinetuneResult(path, pa, sa, seeds)


def sign_test_p(wins: int, n: int) -> float:
    """One-sided sign-test p-value for ``wins`` successes out of ``n`` ties-free pairs."""
    from scipy.stats import binomtest
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


DEFAULT_DAMPING_RANGES = ((0.01, 2.0), (2.0, 10.0), (10.0, 20.0), (20.0, 30.0))


def damping_stress_test(checkpoint, damping_ranges=DEFAULT_DAMPING_RANGES, robots: int = 100, seed: int = 0,
                        out_csv=None) -> list[dict]:
    """Success rate, episode lengths and final distances on fresh robots per damping range.

    Every range reuses the same pool seed and episode seeds, so the ranges differ
    only in damping (common random numbers)."""
    ck = load_agent(checkpoint)
    cfg = ck.cfg
    rows = []
    for lo, hi in damping_ranges:
        c = cfg.replace(ranges={**cfg.ranges, "damping": (float(lo), float(hi)), "damping_split": None})
        pool = make_pool(c, cfg.train_types, -(-robots // max(len(cfg.train_types), 1)),
                         derive_seed(seed, "stress"), "stress")[:robots]
        s, d, l = evaluate_ddpg(ck.agent, ck.provider, pool, cfg.task, derive_seed(seed, "stress-episodes"),
                                cfg.eval_max_steps)
        rows.append({"damping_low": float(lo), "damping_high": float(hi), "success_rate": 100.0 * float(np.mean(s)),
                     "mean_length": float(np.mean(l)), "median_distance": float(np.nanmedian(d)),
                     "lengths": l, "distances": d})
    if out_csv:
        write_csv(out_csv, ["damping_low", "damping_high", "success_rate", "mean_length", "median_distance"],
                  [(r["damping_low"], r["damping_high"], r["success_rate"], r["mean_length"], r["median_distance"])
                   for r in rows])
    return rows


def random_policy_success(robots: list, task: TaskConfig, seed: int) -> float:
    """Success rate (%) of uniform random actions; the null model for learning tests."""
    env = Env(task)
    rng = make_rng(seed, "random-policy")
    ok = []
    for i, r in enumerate(robots):
        res = run_episode(env, r, lambda o: rng.uniform(-1, 1, task.action_dim), derive_seed(seed, "random", i))
        ok.append(res.success)
    return 100.0 * float(np.mean(ok))


__all__ = ["ExperimentConfig", "EvalProtocol", "EvalResult", "train", "zero_shot_eval", "finetune",
           "damping_stress_test", "load_config", "save_config", "rerun_manifest", "make_pool", "REACHER",
           "HCP_E", "HCP_I", "HCP_E_DYN", "BASELINE"]
