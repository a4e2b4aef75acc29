"""DDPG with hindsight relabelling, and PPO with GAE.

Policy inputs are ``[normalised(state, goal, fixed v_h), learned v_h]``:
fixed hardware vectors go through the running normaliser, learned embedding
rows are fed raw so that their input gradients are the embedding gradients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import TANH, AdamConfig, Mlp, MlpSpec, adam_update, soft_update

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# observation normalisation


class RunningNorm:
    """Running mean/std over a batch stream; output clipped to ``[-clip, clip]``."""

    def __init__(self, size: int, clip: float = 5.0, eps: float = 1e-2):
        self.size, self.clip, self.eps = size, clip, eps
        self.count = 0.0
        self.sum = np.zeros(size)
        self.sumsq = np.zeros(size)
        self.mean = np.zeros(size)
        self.std = np.ones(size)

    def update(self, x) -> None:
        x = np.asarray(x, float).reshape(-1, self.size)
        self.count += len(x)
        self.sum += x.sum(axis=0)
        self.sumsq += (x * x).sum(axis=0)
        self.mean = self.sum / self.count
        var = np.maximum(self.sumsq / self.count - self.mean ** 2, 0.0)
        self.std = np.maximum(np.sqrt(var), self.eps)

    def __call__(self, x) -> np.ndarray:
        if self.size == 0:
            return np.asarray(x, float)
        return np.clip((np.asarray(x, float) - self.mean) / self.std, -self.clip, self.clip)

    def state_dict(self, prefix: str) -> dict:
        return {f"{prefix}.count": np.array(self.count), f"{prefix}.sum": self.sum, f"{prefix}.sumsq": self.sumsq}

    def load_state_dict(self, d: dict, prefix: str) -> None:
        self.count = float(d[f"{prefix}.count"])
        self.sum = np.array(d[f"{prefix}.sum"], float)
        self.sumsq = np.array(d[f"{prefix}.sumsq"], float)
        if self.count > 0:
            self.mean = self.sum / self.count
            self.std = np.maximum(np.sqrt(np.maximum(self.sumsq / self.count - self.mean ** 2, 0.0)), self.eps)


# ---------------------------------------------------------------------------
# transitions and replay


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    goal: np.ndarray | None = None
    achieved_goal: np.ndarray | None = None  # POI after the step
    episode_id: int = 0
    step_index: int = 0
    robot_id: str = ""
    robot_idx: int = -1

    def obs_aug(self, v_h) -> np.ndarray:
        parts = [self.state] + ([self.goal] if self.goal is not None else []) + [np.asarray(v_h, float)]
        return np.concatenate(parts)

    def next_obs_aug(self, v_h) -> np.ndarray:
        parts = [self.next_state] + ([self.goal] if self.goal is not None else []) + [np.asarray(v_h, float)]
        return np.concatenate(parts)


def her_indices(T: int, k: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """For each step t, ``min(k, T-1-t)`` distinct future steps t' > t drawn uniformly."""
    ts, fs = [], []
    for t in range(T):
        n_future = T - 1 - t
        m = min(k, n_future)
        if m <= 0:
            continue
        pick = t + 1 + rng.choice(n_future, size=m, replace=False)
        ts.append(np.full(m, t))
        fs.append(pick)
    if not ts:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(ts), np.concatenate(fs)


def her_relabel(episode: list, k: int, reward_fn, rng, epsilon: float | None = None) -> list:
    """Originals followed by hindsight copies whose goal is a later achieved POI.

    ``reward_fn(achieved, goal, action)`` is evaluated in batch. A relabelled
    copy is terminal when its reward signals success (``reward > 0`` unless
    ``epsilon`` is given, in which case the distance decides)."""
    if not episode:
        return []
    if any(tr.achieved_goal is None for tr in episode):
        raise ConfigError("hindsight relabelling needs achieved goals")
    t_idx, f_idx = her_indices(len(episode), k, rng)
    if len(t_idx) == 0:
        return list(episode)
    ach = np.array([episode[t].achieved_goal for t in t_idx])
    new_goal = np.array([episode[f].achieved_goal for f in f_idx])
    acts = np.array([episode[t].action for t in t_idx])
    rewards = np.asarray(reward_fn(ach, new_goal, acts), float)
    if epsilon is not None:
        dones = np.linalg.norm(ach - new_goal, axis=1) < epsilon
    else:
        dones = rewards > 0
    out = list(episode)
    for j, (t, g) in enumerate(zip(t_idx, new_goal)):
        src = episode[t]
        out.append(Transition(src.state, src.action, float(rewards[j]), src.next_state, bool(dones[j]), g.copy(),
                              src.achieved_goal, src.episode_id, src.step_index, src.robot_id, src.robot_idx))
    return out


class ReplayBuffer:
    """Preallocated FIFO ring buffer of transitions with uniform sampling."""

    FIELDS = ("state", "next_state", "goal", "achieved", "action", "reward", "done", "robot_idx", "episode_id",
              "step_index")

    def __init__(self, capacity: int, state_dim: int, goal_dim: int, action_dim: int, dtype=np.float32):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.size = 0
        self.ptr = 0
        self.dims = {"state": state_dim, "next_state": state_dim, "goal": goal_dim, "achieved": goal_dim,
                     "action": action_dim}
        self.data = {k: np.zeros((self.capacity, d), dtype=dtype) for k, d in self.dims.items()}
        self.data["reward"] = np.zeros(self.capacity)
        self.data["done"] = np.zeros(self.capacity)
        self.data["robot_idx"] = np.zeros(self.capacity, dtype=np.int64)
        self.data["episode_id"] = np.zeros(self.capacity, dtype=np.int64)
        self.data["step_index"] = np.zeros(self.capacity, dtype=np.int64)

    def __len__(self):
        return self.size

    def add_arrays(self, **arrays) -> None:
        n = len(arrays["reward"])
        if n == 0:
            return
        if n > self.capacity:
            arrays = {k: np.asarray(v)[-self.capacity:] for k, v in arrays.items()}
            n = self.capacity
        idx = (self.ptr + np.arange(n)) % self.capacity
        for k in self.FIELDS:
            self.data[k][idx] = arrays[k]
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def add(self, transitions: list) -> None:
        if not transitions:
            return
        self.add_arrays(**transitions_to_arrays(transitions, self.dims["goal"]))

    def sample(self, rng, batch: int) -> dict:
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return {k: v[idx] for k, v in self.data.items()}

    def state_dict(self) -> dict:
        return {f"buffer.{k}": v[:self.size] for k, v in self.data.items()} | {
            "buffer.ptr": np.array(self.ptr)}


def transitions_to_arrays(transitions: list, goal_dim: int) -> dict:
    z = np.zeros(goal_dim)
    return {
        "state": np.array([t.state for t in transitions]),
        "next_state": np.array([t.next_state for t in transitions]),
        "goal": np.array([t.goal if t.goal is not None else z for t in transitions]),
        "achieved": np.array([t.achieved_goal if t.achieved_goal is not None else z for t in transitions]),
        "action": np.array([t.action for t in transitions]),
        "reward": np.array([t.reward for t in transitions], float),
        "done": np.array([t.done for t in transitions], float),
        "robot_idx": np.array([t.robot_idx for t in transitions], dtype=np.int64),
        "episode_id": np.array([t.episode_id for t in transitions], dtype=np.int64),
        "step_index": np.array([t.step_index for t in transitions], dtype=np.int64),
    }


# ---------------------------------------------------------------------------
# DDPG


@dataclass(frozen=True)
class DdpgConfig:
    hidden: tuple = (128, 256, 256)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    critic_weight_decay: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 128
    buffer_size: int = 1_000_000
    warmup_episodes: int = 50
    updates_per_episode: int = 100
    tau: float = 0.01
    her_k: int = 4
    noise_sigma: float = 0.1  # fraction of the torque limit
    random_episode_prob: float = 0.1
    obs_clip: float = 5.0
    clip_target: bool = True
    embedding_grad_source: str = "both"  # "critic", "actor" or "both"
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.tau <= 1:
            raise ConfigError("tau must lie in [0, 1]")
        if self.embedding_grad_source not in ("critic", "actor", "both"):
            raise ConfigError("embedding_grad_source must be critic, actor or both")
        if self.batch_size < 1 or self.her_k < 0:
            raise ConfigError("batch_size must be >= 1 and her_k >= 0")


class DdpgAgent:
    """Deterministic actor and Q critic; the action enters the critic's second hidden layer."""

    def __init__(self, cfg: DdpgConfig, state_dim: int, goal_dim: int, action_dim: int, fixed_dim: int,
                 learned_dim: int, rng, reward_bounds: tuple | None = None):
        self.cfg = cfg
        self.state_dim, self.goal_dim, self.action_dim = state_dim, goal_dim, action_dim
        self.fixed_dim, self.learned_dim = fixed_dim, learned_dim
        self.in_dim = state_dim + goal_dim + fixed_dim + learned_dim
        dt = np.dtype(cfg.dtype)
        self.actor = Mlp(MlpSpec.make(self.in_dim, cfg.hidden, action_dim, out_act=TANH), rng=rng, dtype=dt)
        self.critic = Mlp(MlpSpec.make(self.in_dim, cfg.hidden, 1, inject_at=1, inject_dim=action_dim),
                          rng=rng, dtype=dt)
        self.actor.init(rng, out_scale=0.1)
        self.actor_target = self.actor.clone()
        self.critic_target = self.critic.clone()
        self.norm = RunningNorm(state_dim + goal_dim + fixed_dim, clip=cfg.obs_clip)
        self.actor_opt = AdamConfig(lr=cfg.actor_lr)
        self.critic_opt = AdamConfig(lr=cfg.critic_lr, weight_decay=cfg.critic_weight_decay)
        self.reward_bounds = reward_bounds
        self.n_updates = 0

    def inputs(self, state, goal, fixed, learned) -> np.ndarray:
        state = np.atleast_2d(state)
        n = len(state)
        parts = [state, np.broadcast_to(np.atleast_2d(goal), (n, self.goal_dim))]
        if self.fixed_dim:
            parts.append(np.broadcast_to(np.atleast_2d(fixed), (n, self.fixed_dim)))
        x = self.norm(np.concatenate(parts, axis=1))
        if self.learned_dim:
            x = np.concatenate([x, np.broadcast_to(np.atleast_2d(learned), (n, self.learned_dim))], axis=1)
        return x

    def act(self, state, goal, fixed=(), learned=(), noise_rng=None, random_action: bool = False) -> np.ndarray:
        if random_action:
            return noise_rng.uniform(-1.0, 1.0, self.action_dim)
        a = self.actor.forward(self.inputs(state, goal, fixed, learned)[0], cache=False).astype(float)
        if noise_rng is not None and self.cfg.noise_sigma > 0:
            a = a + noise_rng.normal(0.0, self.cfg.noise_sigma, self.action_dim)
        return np.clip(a, -1.0, 1.0)

    def update(self, batch: dict, fixed_table: np.ndarray | None = None, learned_rows=None) -> dict:
        """One critic and one actor step on a sampled batch; soft-updates both targets.

        ``fixed_table[robot_idx]`` gives fixed v_h rows; ``learned_rows`` is the
        (B, L) matrix of current embedding rows for the batch. Returns losses and,
        when embeddings are learned, their per-sample input gradients."""
        cfg = self.cfg
        B = len(batch["reward"])
        fixed = fixed_table[batch["robot_idx"]] if self.fixed_dim else None
        x = self._batch_inputs(batch["state"], batch["goal"], fixed, learned_rows)
        x2 = self._batch_inputs(batch["next_state"], batch["goal"], fixed, learned_rows)
        a = batch["action"]
        y = self.td_targets(batch["reward"], batch["done"], x2)
        q = self.critic.forward(x, a)[:, 0].astype(float)
        err = q - y
        critic_loss = float(np.mean(err ** 2))
        gin_c, _ = self.critic.backward((2.0 * err / B)[:, None])
        self.critic.adam_step(self.critic_opt)

        mu = self.actor.forward(x)
        qa = self.critic.forward(x, mu)
        actor_loss = -float(np.mean(qa))
        gin_ca, ga = self.critic.backward(np.full((B, 1), -1.0 / B))
        gin_a, _ = self.actor.backward(ga)
        self.actor.adam_step(self.actor_opt)
        self.critic.zero_grad()

        soft_update(self.actor_target, self.actor, cfg.tau)
        soft_update(self.critic_target, self.critic, cfg.tau)
        self.n_updates += 1
        out = {"critic_loss": critic_loss, "actor_loss": actor_loss, "q_mean": float(np.mean(q))}
        if self.learned_dim:
            L = self.learned_dim
            g = np.zeros((B, L))
            if cfg.embedding_grad_source in ("critic", "both"):
                g += gin_c[:, -L:]
            if cfg.embedding_grad_source in ("actor", "both"):
                g += gin_ca[:, -L:] + gin_a[:, -L:]
            out["embedding_grads"] = g
        return out

    def td_targets(self, reward, done, x2) -> np.ndarray:
        """r + gamma (1 - done) Q'(s', mu'(s')), clipped to the reachable return range."""
        cfg = self.cfg
        mu2 = self.actor_target.forward(x2, cache=False)
        q2 = self.critic_target.forward(x2, mu2, cache=False)[:, 0].astype(float)
        y = np.asarray(reward, float) + cfg.gamma * (1.0 - np.asarray(done, float)) * q2
        if cfg.clip_target and self.reward_bounds is not None:
            lo, hi = self.reward_bounds
            y = np.clip(y, min(lo / (1 - cfg.gamma), 0.0) if cfg.gamma < 1 else -np.inf,
                        max(hi / (1 - cfg.gamma), 0.0) if cfg.gamma < 1 else np.inf)
        return y

    def _batch_inputs(self, state, goal, fixed, learned):
        parts = [state, goal] + ([fixed] if self.fixed_dim else [])
        x = self.norm(np.concatenate(parts, axis=1))
        if self.learned_dim:
            x = np.concatenate([x, learned], axis=1)
        return x

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic, "actor_target": self.actor_target,
                "critic_target": self.critic_target}


def ddpg_update(buffer: ReplayBuffer, agent: DdpgAgent, rng, fixed_table=None, table=None, row_of=None,
                batch_size: int | None = None) -> dict | None:
    """Sample a batch and update; returns None (with a log notice) if the buffer is too small.

    ``table``/``row_of`` route embedding gradients: ``row_of[robot_idx]`` is the
    embedding row of each stored robot."""
    bs = batch_size or agent.cfg.batch_size
    if len(buffer) < bs:
        log.info("skipping update: %d transitions < batch %d", len(buffer), bs)
        return None
    batch = buffer.sample(rng, bs)
    learned = None
    if agent.learned_dim:
        rows = row_of[batch["robot_idx"]]
        learned = table.values[rows]
    out = agent.update(batch, fixed_table, learned)
    if agent.learned_dim:
        apply_row_gradients(table, rows, out["embedding_grads"])
    return out


def apply_row_gradients(table, rows: np.ndarray, grads: np.ndarray) -> None:
    uniq, inv = np.unique(rows, return_inverse=True)
    sums = np.zeros((len(uniq), grads.shape[1]))
    np.add.at(sums, inv, grads)
    table.apply_gradients({table.ids[r]: sums[k] for k, r in enumerate(uniq)})


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeResult:
    transitions: list
    success: bool
    final_distance: float
    steps: int
    total_reward: float
    reachable: bool = True
    infos: list = field(default_factory=list)


def sample_robot_index(rng, pool_size: int) -> int:
    """Uniform draw of the robot used for the next episode."""
    if pool_size < 1:
        raise ConfigError("robot pool is empty")
    return int(rng.integers(pool_size))


def run_episode(env, robot, policy, seed: int, episode_id: int = 0, robot_idx: int = -1) -> EpisodeResult:
    """Roll out ``policy(observation) -> action`` until done.

    Raises ``SimulationDiverged`` with episode context; callers decide whether
    to discard the episode."""
    obs = env.reset(robot, seed)
    transitions, infos = [], []
    total = 0.0
    info = {"success": False, "distance": float("nan")}
    while True:
        a = np.asarray(policy(obs), float)
        nxt, r, done, info = env.step(a)
        transitions.append(Transition(obs.state, a, float(r), nxt.state, bool(info["terminal"]), obs.goal,
                                      nxt.achieved, episode_id, env.t - 1, robot.robot_id, robot_idx))
        infos.append(info)
        total += r
        obs = nxt
        if done:
            break
    ok = any(i["success"] for i in infos)
    return EpisodeResult(transitions, ok, float(info["distance"]), env.t, total, obs.reachable, infos)


# ---------------------------------------------------------------------------
# PPO


@dataclass(frozen=True)
class PpoConfig:
    n_actors: int = 8
    horizon: int = 2048
    lr: float = 1e-4
    hidden: tuple = (128, 128)
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    minibatch: int = 512
    epochs: int = 5
    c1: float = 0.5
    c2: float = 0.015
    init_log_std: float = math.log(0.5)
    obs_clip: float = 5.0
    normalize_advantages: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_actors < 1 or self.horizon < 1 or self.minibatch < 1 or self.epochs < 1:
            raise ConfigError("PPO sizes must be >= 1")
        if not 0 <= self.lam <= 1 or not 0 < self.gamma <= 1:
            raise ConfigError("lam in [0, 1] and gamma in (0, 1] required")


def gae(rewards, values, next_values, episode_ends, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates for one actor's time-ordered steps.

    ``next_values[t]`` is V(s_{t+1}) (0 after a terminal step, the bootstrap
    value after a truncation); ``episode_ends[t]`` stops the recursion."""
    rewards, values, next_values = (np.asarray(x, float) for x in (rewards, values, next_values))
    ends = np.asarray(episode_ends, bool)
    adv = np.zeros(len(rewards))
    last = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] - values[t]
        last = delta + gamma * lam * (0.0 if ends[t] else 1.0) * last
        adv[t] = last
    return adv


def gaussian_log_prob(a, mu, log_std) -> np.ndarray:
    z = (a - mu) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * a.shape[-1] * math.log(2 * math.pi)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * math.log(2 * math.pi * math.e))


def clipped_surrogate(ratio, adv, clip):
    """Per-sample clipped objective and its derivative with respect to the ratio."""
    s1 = ratio * adv
    s2 = np.clip(ratio, 1 - clip, 1 + clip) * adv
    use = s1 <= s2
    return np.where(use, s1, s2), np.where(use, adv, 0.0)


class PpoAgent:
    """Diagonal Gaussian policy with a state-independent learnable log-std, and a value net."""

    def __init__(self, cfg: PpoConfig, state_dim: int, action_dim: int, fixed_dim: int, learned_dim: int, rng):
        self.cfg = cfg
        self.state_dim, self.action_dim = state_dim, action_dim
        self.fixed_dim, self.learned_dim = fixed_dim, learned_dim
        self.in_dim = state_dim + fixed_dim + learned_dim
        dt = np.dtype(cfg.dtype)
        self.policy = Mlp(MlpSpec.make(self.in_dim, cfg.hidden, action_dim), rng=rng, dtype=dt)
        self.policy.init(rng, out_scale=0.01)
        self.value = Mlp(MlpSpec.make(self.in_dim, cfg.hidden, 1), rng=rng, dtype=dt)
        self.log_std_params = np.full(action_dim, cfg.init_log_std)
        self._ls_m = np.zeros(action_dim)
        self._ls_v = np.zeros(action_dim)
        self._ls_step = 0
        self.norm = RunningNorm(state_dim + fixed_dim, clip=cfg.obs_clip)
        self.opt = AdamConfig(lr=cfg.lr)
        self.n_updates = 0

    def inputs(self, states, fixed, learned) -> np.ndarray:
        states = np.atleast_2d(states)
        parts = [states] + ([np.atleast_2d(fixed)] if self.fixed_dim else [])
        x = self.norm(np.concatenate(parts, axis=1))
        if self.learned_dim:
            x = np.concatenate([x, np.atleast_2d(learned)], axis=1)
        return x

    def act(self, x, rng=None):
        """Actions (sampled when ``rng`` is given, else the mean), log-probs and values."""
        mu = self.policy.forward(x, cache=False).astype(float)
        v = self.value.forward(x, cache=False)[:, 0].astype(float)
        if rng is None:
            a = mu
        else:
            a = mu + np.exp(self.log_std_params) * rng.standard_normal(mu.shape)
        return a, gaussian_log_prob(a, mu, self.log_std_params), v

    def values(self, x) -> np.ndarray:
        return self.value.forward(x, cache=False)[:, 0].astype(float)

    def minibatch_step(self, x, a, logp_old, adv, ret) -> dict:
        """One gradient step on the PPO loss; returns losses and input gradients."""
        cfg = self.cfg
        B = len(a)
        mu = self.policy.forward(x).astype(float)
        ls = self.log_std_params
        std = np.exp(ls)
        logp = gaussian_log_prob(a, mu, ls)
        ratio = np.exp(logp - logp_old)
        surr, dsurr_dratio = clipped_surrogate(ratio, adv, cfg.clip)
        # loss = -mean(surr) + c1 * mean((v - ret)^2) - c2 * entropy
        dlogp = -(dsurr_dratio * ratio) / B
        dmu = dlogp[:, None] * (a - mu) / std ** 2
        dls = (dlogp[:, None] * (((a - mu) / std) ** 2 - 1.0)).sum(axis=0) - cfg.c2
        gin_p, _ = self.policy.backward(dmu)
        v = self.value.forward(x)[:, 0].astype(float)
        verr = v - ret
        gin_v, _ = self.value.backward((cfg.c1 * 2.0 * verr / B)[:, None])
        self.policy.adam_step(self.opt)
        self.value.adam_step(self.opt)
        self._ls_step = adam_update(self.log_std_params, dls, self._ls_m, self._ls_v, self._ls_step, cfg.lr)
        ent = gaussian_entropy(ls)
        policy_loss = -float(np.mean(surr))
        value_loss = float(np.mean(verr ** 2))
        out = {"policy_loss": policy_loss, "value_loss": value_loss, "entropy": ent,
               "loss": policy_loss + cfg.c1 * value_loss - cfg.c2 * ent,
               "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip))}
        if self.learned_dim:
            L = self.learned_dim
            out["embedding_grads"] = (gin_p[:, -L:] + gin_v[:, -L:]).astype(float)
        self.n_updates += 1
        return out

    def networks(self) -> dict:
        return {"policy": self.policy, "value": self.value}


@dataclass
class PpoBatch:
    states: np.ndarray
    fixed: np.ndarray
    rows: np.ndarray  # embedding rows (-1 when not learned)
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def ppo_update(batch: PpoBatch, agent: PpoAgent, rng, table=None) -> dict:
    """``epochs`` passes of shuffled minibatches; embedding rows get per-row Adam steps."""
    cfg = agent.cfg
    n = len(batch.actions)
    adv = batch.advantages
    if cfg.normalize_advantages and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stats = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, cfg.minibatch):
            idx = perm[s:s + cfg.minibatch]
            learned = table.values[batch.rows[idx]] if agent.learned_dim else None
            x = agent.inputs(batch.states[idx], batch.fixed[idx] if agent.fixed_dim else None, learned)
            out = agent.minibatch_step(x, batch.actions[idx], batch.logp[idx], adv[idx], batch.returns[idx])
            if not np.isfinite(out["loss"]):
                raise FloatingPointError(f"non-finite PPO loss: {out}")
            if agent.learned_dim:
                apply_row_gradients(table, batch.rows[idx], out.pop("embedding_grads"))
            stats.append(out)
    return {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}


def check_dims(x, n: int, what: str) -> None:
    if np.shape(x)[-1] != n:
        raise DimensionError(f"{what} has {np.shape(x)[-1]} entries, expected {n}")
