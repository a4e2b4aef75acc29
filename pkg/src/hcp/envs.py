"""Task environments: goal reaching, peg insertion and the planar hopper.

Manipulator actions are 7 normalised torques in [-1, 1]; entry i is scaled by
joint i's torque limit and entries beyond the robot's DOF are ignored. The
observed state is joint angles and velocities zero-padded to 7 entries each.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .dynamics import ContactModel, Model, SimState, Surface, step as sim_step
from .errors import ConfigError, DimensionError, SimulationDiverged
from .kinematics import chain_frames
from .robots import HOPPER, MAX_DOF, RobotSpec
from .rng import make_rng
from .rotations import vector_to_rotation

REACHER, PEG_FIXED, PEG_RANDOM = "REACHER", "PEG_FIXED", "PEG_RANDOM"
TASKS = (REACHER, PEG_FIXED, PEG_RANDOM, HOPPER)
ACTION_DIM = MAX_DOF
HOPPER_ACTION_DIM = 3


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.center, float) - np.asarray(self.size, float) / 2

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.center, float) + np.asarray(self.size, float) / 2

    def sample(self, rng) -> np.ndarray:
        return rng.uniform(self.low, self.high)

    def contains(self, p, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(p, float)
        return np.all((p >= self.low - tol) & (p <= self.high + tol), axis=-1)


@dataclass(frozen=True)
class TaskConfig:
    task: str = REACHER
    epsilon: float = 0.02
    beta: float = 0.1
    max_steps: int | None = None  # 200 for manipulators, 2048 for the hopper
    obs_noise: float | None = None  # 0.02 for manipulators, 0 for the hopper
    control_dt: float | None = None  # 0.02 for manipulators, 0.008 for the hopper
    substep: float = 0.002
    init_box: Box = Box((0.55, 0.0, 0.45), (0.3, 0.4, 0.2))
    goal_box: Box = Box((0.55, 0.0, 0.25), (0.3, 0.6, 0.4))
    init_joint_range: float = 0.5
    init_attempts: int = 1000
    # peg insertion
    table_height: float = 0.15
    hole_xy: tuple = (0.65, 0.0)
    table_box_size: float = 0.2
    hole_half_size: float = 0.03
    hole_depth: float = 0.1
    goal_depth: float = 0.05
    peg_length: float = 0.1
    peg_radius: float = 0.015
    peg_points: int = 5
    check_reachability: bool | None = None  # default: on for peg tasks
    contact: ContactModel = field(default_factory=ContactModel)
    # hopper
    healthy_height_fraction: float = 0.7
    healthy_pitch: float = 0.5
    forward_reward_weight: float = 1.0
    alive_bonus: float = 1.0
    ctrl_cost_weight: float = 1e-3
    reset_noise: float = 0.005

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        hop = self.task == HOPPER
        object.__setattr__(self, "max_steps", self.max_steps or (2048 if hop else 200))
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.obs_noise is None:
            object.__setattr__(self, "obs_noise", 0.0 if hop else 0.02)
        if self.control_dt is None:
            object.__setattr__(self, "control_dt", 0.008 if hop else 0.02)
        if self.check_reachability is None:
            object.__setattr__(self, "check_reachability", self.task in (PEG_FIXED, PEG_RANDOM))

    @property
    def is_peg(self) -> bool:
        return self.task in (PEG_FIXED, PEG_RANDOM)

    @property
    def goal_conditioned(self) -> bool:
        return self.task != HOPPER

    @property
    def action_dim(self) -> int:
        return HOPPER_ACTION_DIM if self.task == HOPPER else ACTION_DIM

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["init_box"] = {"center": list(self.init_box.center), "size": list(self.init_box.size)}
        d["goal_box"] = {"center": list(self.goal_box.center), "size": list(self.goal_box.size)}
        d["contact"] = vars(self.contact).copy()
        d["hole_xy"] = list(self.hole_xy)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown task keys: {sorted(unknown)}")
        for k in ("init_box", "goal_box"):
            if k in d and isinstance(d[k], dict):
                d[k] = Box(tuple(d[k]["center"]), tuple(d[k]["size"]))
        if isinstance(d.get("contact"), dict):
            d["contact"] = ContactModel(**d["contact"])
        if "hole_xy" in d:
            d["hole_xy"] = tuple(d["hole_xy"])
        return cls(**d)


@dataclass(frozen=True)
class Observation:
    q_padded: np.ndarray
    qd_padded: np.ndarray
    goal: np.ndarray | None = None
    achieved: np.ndarray | None = None
    reachable: bool = True

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.q_padded, self.qd_padded])


def compute_reward(next_poi, goal, action, epsilon: float = 0.02, beta: float = 0.1):
    """Sparse reward: +1 if the POI is strictly within ``epsilon`` of the goal, else -1,
    minus ``beta * |a|^2``. Works on single vectors or batches (leading axis)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d = np.linalg.norm(np.asarray(next_poi, float) - np.asarray(goal, float), axis=-1)
    a = np.asarray(action, float)
    return np.where(d < epsilon, 1.0, -1.0) - beta * np.sum(a * a, axis=-1)


def success(info) -> bool:
    """Episode success: the distance dropped below epsilon at some step.

    ``info`` is one step's info dict or a sequence of them."""
    if isinstance(info, dict):
        return bool(info["success"])
    return any(bool(i["success"]) for i in info)


def pad(x, n=MAX_DOF) -> np.ndarray:
    out = np.zeros(n)
    x = np.asarray(x, float)
    out[:len(x)] = x
    return out


class Env:
    """One task instance. ``reset`` binds a robot; ``step`` advances one control tick."""

    def __init__(self, config: TaskConfig | None = None, trajectory_path=None):
        self.cfg = config or TaskConfig()
        self.robot: RobotSpec | None = None
        self.model: Model | None = None
        self.state: SimState | None = None
        self.goal = None
        self.reachable = True
        self.t = 0
        self.done = True
        self.init_acceptance = None
        self._rng = None
        self._traj_path = Path(trajectory_path) if trajectory_path else None
        self._traj_rows: list = []
        self.episode_index = -1
        self._ik_cache: dict = {}

    # -- setup ---------------------------------------------------------------

    def _peg_local_points(self, spec: RobotSpec) -> np.ndarray:
        ee_t = np.asarray(spec.ee_offset[0], float)
        s = np.linspace(0.0, self.cfg.peg_length, self.cfg.peg_points)
        ee_R = vector_to_rotation(spec.ee_offset[1])
        return ee_t + np.outer(s, ee_R[:, 0])

    def _compile(self, spec: RobotSpec, hole_center=None):
        cfg = self.cfg
        if cfg.task == HOPPER:
            if not spec.floating_base:
                raise ConfigError("the hopper task needs a hopper robot")
            return Model.from_spec(spec, surface=Surface(0.0), contact=cfg.contact)
        if spec.floating_base:
            raise ConfigError(f"task {cfg.task} needs a fixed-base manipulator")
        if not cfg.is_peg:
            return Model.from_spec(spec)
        pts = self._peg_local_points(spec)
        cps = [(spec.dof - 1, p, cfg.peg_radius) for p in pts]
        surf = Surface(hole_center[2], tuple(hole_center[:2]), (cfg.hole_half_size,) * 2, cfg.hole_depth)
        return Model.from_spec(spec, surface=surf, contact=cfg.contact, contact_points=cps)

    def poi(self, q=None) -> np.ndarray:
        """Point of interest: end effector (reacher) or peg bottom (peg tasks)."""
        q = self.state.q if q is None else q
        if self.cfg.is_peg:
            return poi_positions(self.robot, np.asarray(q)[None], self.cfg.peg_length)[0]
        return poi_positions(self.robot, np.asarray(q)[None], 0.0)[0]

    def reset(self, robot: RobotSpec, seed: int) -> Observation:
        cfg = self.cfg
        self.robot = robot
        self._rng = make_rng(seed, "env", cfg.task)
        self.t = 0
        self.done = False
        self.reachable = True
        self.episode_index += 1
        self._traj_rows = []
        if cfg.task == HOPPER:
            self.model = self._compile(robot)
            self.state = self.model.initial_state(*hopper_initial_state(robot, self._rng, cfg.reset_noise))
            self.nominal_height = hopper_nominal_height(robot)
            return self._observe()
        if cfg.is_peg:
            hole = np.array([cfg.hole_xy[0], cfg.hole_xy[1], cfg.table_height])
            if cfg.task == PEG_RANDOM:
                hole = hole + self._rng.uniform(-cfg.table_box_size / 2, cfg.table_box_size / 2, 3)
            self.hole = hole
            self.goal = hole - np.array([0.0, 0.0, cfg.goal_depth])
            self.model = self._compile(robot, hole)
            q0 = np.zeros(robot.dof)  # horizontal, fully stretched
        else:
            self.model = self._compile(robot)
            self.goal = cfg.goal_box.sample(self._rng)
            key = (robot, cfg.init_box)
            if key not in self._ik_cache:
                self._ik_cache[key] = solve_ik(robot, cfg.init_box.center, _elbow_up_guess(robot))
            q0, ok, rate = sample_initial_pose(robot, cfg.init_box, self._rng, cfg.init_joint_range,
                                               cfg.init_attempts, center=self._ik_cache[key])
            self.init_acceptance = rate
            self.reachable = ok
        if cfg.check_reachability and self.reachable:
            self.reachable = goal_reachable(robot, self.goal, peg_length=cfg.peg_length if cfg.is_peg else 0.0,
                                            vertical=cfg.is_peg, tol=cfg.epsilon / 2, rng=self._rng)
        self.state = self.model.initial_state(q0)
        return self._observe()

    # -- stepping -----------------------------------------------------------

    def _observe(self) -> Observation:
        cfg = self.cfg
        st = self.state
        if cfg.task == HOPPER:
            q = pad(st.q[1:])
            qd = pad(np.clip(st.qd, -10.0, 10.0))
            return Observation(q, qd)
        n = self.robot.dof
        q, qd = st.q.copy(), st.qd.copy()
        if cfg.obs_noise > 0:
            q += self._rng.uniform(-cfg.obs_noise, cfg.obs_noise, n)
            qd += self._rng.uniform(-cfg.obs_noise, cfg.obs_noise, n)
        return Observation(pad(q), pad(qd), self.goal.copy(), self.poi(), self.reachable)

    def step(self, action):
        if self.done:
            raise RuntimeError("episode finished; call reset")
        cfg = self.cfg
        a = np.asarray(action, float)
        if a.shape != (cfg.action_dim,):
            raise DimensionError(f"action must have {cfg.action_dim} entries")
        if not np.all(np.isfinite(a)):
            raise ValueError("action must be finite")
        a = np.clip(a, -1.0, 1.0)
        n = self.model.n_act
        used = a[:n]
        tau = used * self.model.gear[self.model.n_base:]
        x_before = self.state.q[0]
        try:
            self.state = sim_step(self.model, self.state, tau, cfg.control_dt, cfg.substep)
        except SimulationDiverged as e:
            self.done = True
            e.context.update(robot_id=self.robot.robot_id, episode=self.episode_index, step=self.t)
            raise
        self.t += 1
        info = {"steps": self.t, "reachable": self.reachable, "terminal": False, "truncated": False}
        if cfg.task == HOPPER:
            reward, fell = self._hopper_reward(x_before, used)
            info.update(success=False, distance=float("nan"), fell=fell, x=float(self.state.q[0]))
            terminal = fell
        else:
            poi = self.poi()
            dist = float(np.linalg.norm(poi - self.goal))
            reward = float(compute_reward(poi, self.goal, used, cfg.epsilon, cfg.beta))
            ok = dist < cfg.epsilon
            info.update(success=ok, distance=dist)
            terminal = ok
        if self._traj_path is not None:
            self._record(tau)
        info["terminal"] = terminal
        truncated = not terminal and self.t >= cfg.max_steps
        info["truncated"] = truncated
        self.done = terminal or truncated
        if self.done and self._traj_path is not None:
            self._flush_trajectory()
        return self._observe(), reward, self.done, info

    def _hopper_reward(self, x_before, a):
        cfg = self.cfg
        q = self.state.q
        fwd = (q[0] - x_before) / cfg.control_dt
        r = cfg.forward_reward_weight * fwd + cfg.alive_bonus - cfg.ctrl_cost_weight * float(a @ a)
        fell = bool(q[1] < cfg.healthy_height_fraction * self.nominal_height or abs(q[2]) > cfg.healthy_pitch)
        return float(r), fell

    # -- trajectory dump ----------------------------------------------------

    def _record(self, tau):
        st = self.state
        poi = self.poi() if self.cfg.task != HOPPER else st.q[:2]
        self._traj_rows.append([st.t, *st.q, *st.qd, *tau, *np.atleast_1d(poi)])

    def _flush_trajectory(self):
        path = self._traj_path
        path.parent.mkdir(parents=True, exist_ok=True)
        nb, na = self.model.nb, self.model.n_act
        header = (["episode", "t"] + [f"q{i}" for i in range(nb)] + [f"qd{i}" for i in range(nb)]
                  + [f"tau{i}" for i in range(na)] + [f"poi{i}" for i in range(len(self._traj_rows[0]) - 1 - 2 * nb - na)])
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(header)
            for row in self._traj_rows:
                w.writerow([self.episode_index, *(f"{x:.9g}" for x in row)])
        self._traj_rows = []


# ---------------------------------------------------------------------------
# geometry helpers


def poi_positions(spec: RobotSpec, Q, peg_length: float = 0.0) -> np.ndarray:
    """POI for a batch of configurations; the peg hangs along the EE x-axis."""
    rots, pos = chain_frames(spec, Q)
    return pos[:, -1] + peg_length * rots[:, -1, :, 0]


def solve_ik(spec: RobotSpec, target, q0=None, peg_length: float = 0.0) -> np.ndarray:
    """Bounded least-squares IK for the POI position."""
    lo = np.array([j.angle_limits[0] for j in spec.joints])
    hi = np.array([j.angle_limits[1] for j in spec.joints])
    q0 = np.zeros(spec.dof) if q0 is None else np.clip(q0, lo + 1e-6, hi - 1e-6)
    target = np.asarray(target, float)
    sol = least_squares(lambda q: poi_positions(spec, q[None], peg_length)[0] - target, q0, bounds=(lo, hi),
                        max_nfev=200)
    return sol.x


def _elbow_up_guess(spec: RobotSpec) -> np.ndarray:
    """Shoulder raised, elbow lowered (template joints J1 and J3, when present)."""
    q = np.zeros(spec.dof)
    names = [j.name for j in spec.joints]
    for name, val in (("J1", -0.8), ("J3", 1.6)):
        if name in names:
            q[names.index(name)] = val
    return q


def sample_initial_pose(spec: RobotSpec, box: Box, rng, joint_range: float = 0.5, attempts: int = 1000,
                        batch: int = 100, center=None):
    """Rejection-sample joint angles until the end effector lies in ``box``.

    Proposals are uniform within ``joint_range`` rad of an IK pose for the box
    centre (clipped to limits). Returns ``(q, ok, acceptance_rate)``; on failure
    ``q`` is the IK pose and ``ok`` is False. ``center`` may pass a precomputed IK pose."""
    if center is None:
        center = solve_ik(spec, box.center, _elbow_up_guess(spec))
    lo = np.array([max(j.angle_limits[0], c - joint_range) for j, c in zip(spec.joints, center)])
    hi = np.array([min(j.angle_limits[1], c + joint_range) for j, c in zip(spec.joints, center)])
    tried = 0
    while tried < attempts:
        k = min(batch, attempts - tried)
        Q = rng.uniform(lo, hi, size=(k, spec.dof))
        inside = box.contains(poi_positions(spec, Q))
        tried += k
        if inside.any():
            i = int(np.argmax(inside))
            return Q[i], True, 1.0 / (tried - k + i + 1)
    return center, False, 0.0


def goal_reachable(spec: RobotSpec, goal, peg_length: float = 0.0, vertical: bool = False, tol: float = 0.01,
                   rng=None, samples: int = 1000, refine: int = 8, vertical_tol: float = 0.15) -> bool:
    """Whether some joint configuration within limits puts the POI within ``tol`` of
    ``goal`` (and, for the peg, holds the peg within ``vertical_tol`` rad of pointing
    down). Random sampling picks starting points that are refined by bounded
    least squares."""
    rng = rng if rng is not None else np.random.default_rng(0)
    goal = np.asarray(goal, float)
    lo = np.array([j.angle_limits[0] for j in spec.joints])
    hi = np.array([j.angle_limits[1] for j in spec.joints])
    down = np.array([0.0, 0.0, -1.0])
    w_axis = 0.1  # metres per unit of axis misalignment

    def residual(q):
        rots, pos = chain_frames(spec, q[None])
        p = pos[0, -1] + peg_length * rots[0, -1, :, 0]
        r = p - goal
        if vertical:
            r = np.concatenate([r, w_axis * (rots[0, -1, :, 0] - down)])
        return r

    Q = rng.uniform(lo, hi, size=(samples, spec.dof))
    rots, pos = chain_frames(spec, Q)
    P = pos[:, -1] + peg_length * rots[:, -1, :, 0]
    cost = np.linalg.norm(P - goal, axis=1)
    if vertical:
        cost = cost + w_axis * np.linalg.norm(rots[:, -1, :, 0] - down, axis=1)
    for i in np.argsort(cost)[:refine]:
        sol = least_squares(residual, Q[i], bounds=(lo, hi), xtol=1e-10, ftol=1e-10, max_nfev=200)
        rots_s, pos_s = chain_frames(spec, sol.x[None])
        axis = rots_s[0, -1, :, 0]
        p = pos_s[0, -1] + peg_length * axis
        if np.linalg.norm(p - goal) < tol and (not vertical or np.arccos(np.clip(axis @ down, -1, 1)) < vertical_tol):
            return True
    return False


# ---------------------------------------------------------------------------
# hopper helpers


def hopper_nominal_height(spec: RobotSpec) -> float:
    """Torso-centre height when standing upright with the foot on the ground."""
    L = spec.segment_lengths
    return L["torso"] / 2 + L["thigh"] + L["leg"] + spec.links[-1].radius


def hopper_initial_state(spec: RobotSpec, rng, noise: float = 0.005):
    q = np.zeros(6)
    q[1] = hopper_nominal_height(spec)
    q += rng.uniform(-noise, noise, 6)
    qd = rng.uniform(-noise, noise, 6)
    return q, qd


# ---------------------------------------------------------------------------
# episode summaries


class EpisodeSummaryWriter:
    """Streams one CSV row per episode: episode, robot_id, success, final_distance, steps."""

    FIELDS = ("episode", "robot_id", "success", "final_distance", "steps")

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.FIELDS)

    def write(self, episode, robot_id, success_flag, final_distance, steps):
        self._w.writerow([episode, robot_id, int(bool(success_flag)), f"{final_distance:.9g}", steps])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def with_task(cfg: TaskConfig, **changes) -> TaskConfig:
    return replace(cfg, **changes)
