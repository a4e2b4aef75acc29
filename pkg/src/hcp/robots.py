"""Procedural robot generation: templates, sampling ranges, robot pools.

Manipulator types A-I are subsets of one 7-DOF chain (``data/templates.yaml``);
removing a joint freezes it at zero, so its offset is folded into the next
present joint and its link becomes part of the previous present link.
The planar hopper is a floating torso with three actuated hinges.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, NotApplicableError, ValidationError
from .rng import derive_seed, make_rng
from .rotations import rotation_to_vector, vector_to_rotation

MANIPULATOR_TYPES = tuple("ABCDEFGHI")
HOPPER = "HOPPER"
CUSTOM = "CUSTOM"
TYPE_DOF = {**{t: 5 for t in "ABCD"}, **{t: 6 for t in "EFGH"}, "I": 7, HOPPER: 3}
MAX_DOF = 7


@lru_cache(maxsize=None)
def load_templates() -> dict:
    text = resources.files("hcp").joinpath("data/templates.yaml").read_text()
    return yaml.safe_load(text)


def _vec(x) -> tuple:
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class JointDef:
    """One joint. The joint frame is placed at ``offset_translation`` (parent
    coordinates) with fixed mount rotation ``offset_rotation``; the joint then
    rotates (or slides) about ``axis_direction`` expressed in its own frame,
    which is the local z-axis for every template joint."""

    name: str
    offset_translation: tuple
    offset_rotation: tuple
    damping: float
    friction: float
    armature: float
    torque_limit: float
    angle_limits: tuple
    axis_direction: tuple = (0.0, 0.0, 1.0)
    kind: str = "revolute"

    def __post_init__(self):
        axis = np.asarray(self.axis_direction, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValidationError(f"{self.name}: axis_direction must be a unit vector")
        if min(self.damping, self.friction, self.armature) < 0:
            raise ValidationError(f"{self.name}: damping, friction and armature must be >= 0")
        if not self.torque_limit > 0:
            raise ValidationError(f"{self.name}: torque_limit must be positive")
        lo, hi = self.angle_limits
        if not lo < hi:
            raise ValidationError(f"{self.name}: angle limits need lo < hi")
        if self.kind not in ("revolute", "prismatic"):
            raise ValidationError(f"{self.name}: unknown joint kind {self.kind!r}")


@dataclass(frozen=True)
class LinkDef:
    """Rigid link made of solid-cylinder segments ``(start, end, mass)`` given in
    the frame of the joint that drives it (the robot base frame for link 0)."""

    segments: tuple
    radius: float

    @property
    def mass(self) -> float:
        return float(sum(s[2] for s in self.segments))


@dataclass(frozen=True)
class RobotSpec:
    robot_id: str
    type_tag: str
    joints: tuple
    links: tuple  # len(joints) + 1; links[0] is the base (torso for the hopper)
    ee_offset: tuple  # (translation, rotation vector) relative to the last joint frame
    floating_base: bool = False
    mass_multipliers: tuple = ()
    segment_lengths: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.joints)
        if n == 0:
            raise ValidationError("robot needs at least one joint")
        if self.type_tag in TYPE_DOF and TYPE_DOF[self.type_tag] != n:
            raise ValidationError(f"type {self.type_tag} needs {TYPE_DOF[self.type_tag]} joints, got {n}")
        if self.type_tag not in TYPE_DOF and self.type_tag != CUSTOM:
            raise ValidationError(f"unknown type tag {self.type_tag!r}")
        if n > MAX_DOF:
            raise ValidationError("at most 7 joints are supported")
        if len(self.links) != n + 1:
            raise ValidationError("need one link per joint plus the base link")
        if any(m <= 0 for m in self.link_masses[1:]) or (self.floating_base and self.links[0].mass <= 0):
            raise ValidationError("link masses must be positive")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def link_masses(self) -> tuple:
        return tuple(link.mass for link in self.links)

    @property
    def torque_limits(self) -> np.ndarray:
        return np.array([j.torque_limit for j in self.joints])

    def to_dict(self) -> dict:
        return {
            "robot_id": self.robot_id,
            "type": self.type_tag,
            "floating_base": self.floating_base,
            "joints": [dataclasses.asdict(j) for j in self.joints],
            "links": [{"radius": l.radius, "segments": [list(map(list, s[:2])) + [s[2]] for s in l.segments]}
                      for l in self.links],
            "ee_offset": {"translation": list(self.ee_offset[0]), "rotation": list(self.ee_offset[1])},
            "mass_multipliers": list(self.mass_multipliers),
            "segment_lengths": dict(self.segment_lengths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotSpec":
        joints = tuple(
            JointDef(**{**j, "offset_translation": _vec(j["offset_translation"]),
                        "offset_rotation": _vec(j["offset_rotation"]),
                        "axis_direction": _vec(j["axis_direction"]),
                        "angle_limits": _vec(j["angle_limits"])})
            for j in d["joints"])
        links = tuple(
            LinkDef(segments=tuple((_vec(s[0]), _vec(s[1]), float(s[2])) for s in l["segments"]),
                    radius=float(l["radius"]))
            for l in d["links"])
        ee = (_vec(d["ee_offset"]["translation"]), _vec(d["ee_offset"]["rotation"]))
        return cls(robot_id=d["robot_id"], type_tag=d["type"], joints=joints, links=links,
                   ee_offset=ee, floating_base=bool(d.get("floating_base", False)),
                   mass_multipliers=_vec(d.get("mass_multipliers", ())),
                   segment_lengths={k: float(v) for k, v in d.get("segment_lengths", {}).items()})


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform sampling ranges. Lengths are ``name -> (mean, halfwidth)``;
    dynamics ranges are closed ``(low, high)``. When ``damping_split`` is set and
    ``damping_split_point`` lies strictly inside the damping range, that fraction
    of damping values is drawn below the split point and the rest above it."""

    lengths: dict
    damping: tuple = (0.01, 30.0)
    friction: tuple = (0.0, 10.0)
    armature: tuple = (0.01, 4.0)
    mass_multiplier: tuple = (0.25, 4.0)
    damping_split: float | None = 0.5
    damping_split_point: float = 1.0

    def __post_init__(self):
        for name, (mean, hw) in self.lengths.items():
            if hw < 0:
                raise ConfigError(f"negative halfwidth for {name}")
        for name in ("damping", "friction", "armature", "mass_multiplier"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range has low > high")
        if self.damping_split is not None and not 0.0 <= self.damping_split <= 1.0:
            raise ConfigError("damping_split must lie in [0, 1]")
        if min(self.damping[0], self.friction[0], self.armature[0], self.mass_multiplier[0]) < 0:
            raise ConfigError("dynamics ranges must be nonnegative")

    @classmethod
    def manipulator(cls, **overrides) -> "SamplingRanges":
        segs = load_templates()["manipulator"]["segments"]
        lengths = {k: (float(v["mean"]), float(v["halfwidth"])) for k, v in segs.items()}
        return dataclasses.replace(cls(lengths=lengths), **overrides)

    @classmethod
    def hopper(cls, **overrides) -> "SamplingRanges":
        segs = load_templates()["hopper"]["segments"]
        lengths = {k: (float(v["mean"]), float(v["halfwidth"])) for k, v in segs.items()}
        base = cls(lengths=lengths, damping=(0.01, 5.0), friction=(0.0, 2.0), armature=(0.1, 2.0),
                   mass_multiplier=(0.25, 2.0), damping_split=None)
        return dataclasses.replace(base, **overrides)

    @classmethod
    def fixed(cls, kind: str = "manipulator") -> "SamplingRanges":
        """Zero-width ranges at the template means and range midpoints."""
        r = cls.hopper() if kind == HOPPER.lower() or kind == HOPPER else cls.manipulator()
        mid = lambda t: ((t[0] + t[1]) / 2,) * 2  # noqa: E731
        return dataclasses.replace(
            r, lengths={k: (m, 0.0) for k, (m, _) in r.lengths.items()},
            damping=mid(r.damping), friction=mid(r.friction), armature=mid(r.armature),
            mass_multiplier=(1.0, 1.0))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lengths"] = {k: list(v) for k, v in self.lengths.items()}
        for k in ("damping", "friction", "armature", "mass_multiplier"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingRanges":
        d = dict(d)
        d["lengths"] = {k: tuple(v) for k, v in d["lengths"].items()}
        for k in ("damping", "friction", "armature", "mass_multiplier"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def sample_damping(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.damping
        sp = self.damping_split_point
        u = rng.random(size)
        x = rng.random(size)
        if self.damping_split is None or not lo < sp < hi:
            return lo + (hi - lo) * x
        below = u < self.damping_split
        return np.where(below, lo + (sp - lo) * x, sp + (hi - sp) * x)


@dataclass(frozen=True)
class JointTemplate:
    name: str
    index: int
    orientation: tuple  # world orientation at q = 0 (rotation vector)
    offset_translation: tuple  # nominal mount relative to the previous present joint
    offset_rotation: tuple
    torque_limit: float
    angle_limits: tuple
    default_mass: float


def present_joints(type_tag: str) -> list[int]:
    t = load_templates()
    if type_tag == HOPPER:
        raise NotApplicableError("the hopper is not built from the 7-DOF chain")
    if type_tag not in t["types"]:
        raise ConfigError(f"unknown robot type {type_tag!r}")
    names = [j["name"] for j in t["manipulator"]["joints"]]
    omit = set(t["types"][type_tag]["omit"])
    return [i for i, n in enumerate(names) if n not in omit]


def layout_mask(type_tag: str) -> int:
    return sum(1 << i for i in present_joints(type_tag))


def type_joint_layout(type_tag: str) -> list[JointTemplate]:
    """Present joints of a manipulator type with nominal (mean-length) mounts."""
    idx = present_joints(type_tag)
    lengths = {k: m for k, (m, _) in SamplingRanges.manipulator().lengths.items()}
    geo = _chain_geometry(lengths)
    tj = load_templates()["manipulator"]["joints"]
    out = []
    prev_p, prev_R = np.zeros(3), np.eye(3)
    for i in idx:
        p, R = geo["positions"][i], geo["rotations"][i]
        out.append(JointTemplate(
            name=tj[i]["name"], index=i, orientation=_vec(tj[i]["orientation"]),
            offset_translation=_vec(prev_R.T @ (p - prev_p)),
            offset_rotation=_vec(rotation_to_vector(prev_R.T @ R)),
            torque_limit=float(tj[i]["torque_limit"]), angle_limits=_vec(tj[i]["angle_limits"]),
            default_mass=float(tj[i]["default_mass"])))
        prev_p, prev_R = p, R
    return out


def _chain_geometry(lengths: dict) -> dict:
    """World geometry of the full 7-DOF chain at q = 0 for given segment lengths.

    Returns joint positions/rotations, the end-effector point, and the list of
    segments ``(owner, start, end)`` where owner -1 is the base, k is the link
    driven by joint k.
    """
    t = load_templates()["manipulator"]
    seg_dirs = {k: np.asarray(v["direction"], dtype=float) for k, v in t["segments"].items()}
    positions, rotations, segments = [], [], []
    p = np.zeros(3)
    owner = -1
    for k, j in enumerate(t["joints"]):
        for s in j["segments"]:
            q = p + lengths[s] * seg_dirs[s]
            segments.append((owner, p.copy(), q.copy()))
            p = q
        positions.append(p.copy())
        rotations.append(vector_to_rotation(j["orientation"]))
        owner = k
    for s in t["end_effector"]["segments"]:
        q = p + lengths[s] * seg_dirs[s]
        segments.append((owner, p.copy(), q.copy()))
        p = q
    return {"positions": positions, "rotations": rotations, "ee": p, "segments": segments}


def _check_type(type_tag: str):
    if type_tag != HOPPER and type_tag not in MANIPULATOR_TYPES:
        raise ConfigError(f"unknown robot type {type_tag!r}")


def sample_robot(type_tag: str, ranges: SamplingRanges | None = None, rng_seed: int = 0,
                 robot_id: str | None = None) -> RobotSpec:
    """Draw one robot of ``type_tag``; deterministic in ``rng_seed``."""
    _check_type(type_tag)
    if ranges is None:
        ranges = SamplingRanges.hopper() if type_tag == HOPPER else SamplingRanges.manipulator()
    rng = make_rng(rng_seed, "robot", type_tag)
    rid = robot_id or f"{type_tag}-{rng_seed}"
    if type_tag == HOPPER:
        return _sample_hopper(ranges, rng, rid)
    return _sample_manipulator(type_tag, ranges, rng, rid)


def _draw_lengths(ranges: SamplingRanges, names, rng) -> dict:
    out = {}
    for name in names:
        if name not in ranges.lengths:
            raise ConfigError(f"sampling ranges lack link length {name!r}")
    u = rng.uniform(-1.0, 1.0, size=len(names))
    for name, x in zip(names, u):
        mean, hw = ranges.lengths[name]
        out[name] = float(mean + hw * x)
    return out


def _draw_dynamics(ranges: SamplingRanges, n_joints: int, n_links: int, rng):
    damping = ranges.sample_damping(rng, n_joints)
    friction = rng.uniform(*ranges.friction, size=n_joints)
    armature = rng.uniform(*ranges.armature, size=n_joints)
    mult = rng.uniform(*ranges.mass_multiplier, size=n_links)
    return damping, friction, armature, mult


def _sample_manipulator(type_tag, ranges, rng, rid) -> RobotSpec:
    t = load_templates()["manipulator"]
    lengths = _draw_lengths(ranges, list(t["segments"]), rng)
    idx = present_joints(type_tag)
    n = len(idx)
    damping, friction, armature, mult = _draw_dynamics(ranges, n, n, rng)
    geo = _chain_geometry(lengths)
    tj = t["joints"]

    # which present link owns each original link (-1 = base)
    owner_of = {}
    cur = -1
    for k in range(-1, len(tj)):
        if k >= 0 and k in idx:
            cur = idx.index(k)
        owner_of[k] = cur
    frames = [(np.zeros(3), np.eye(3))] + [(geo["positions"][i], geo["rotations"][i]) for i in idx]

    joints = []
    for m, i in enumerate(idx):
        pp, pR = frames[m]
        p, R = frames[m + 1]
        joints.append(JointDef(
            name=tj[i]["name"], offset_translation=_vec(pR.T @ (p - pp)),
            offset_rotation=_vec(rotation_to_vector(pR.T @ R)),
            damping=float(damping[m]), friction=float(friction[m]), armature=float(armature[m]),
            torque_limit=float(tj[i]["torque_limit"]), angle_limits=_vec(tj[i]["angle_limits"]),
            axis_direction=_vec(tj[i]["axis"])))

    default_mass = {-1: float(t["base_mass"]), **{k: float(j["default_mass"]) for k, j in enumerate(tj)}}
    seg_len = {}
    for owner, a, b in geo["segments"]:
        seg_len[owner] = seg_len.get(owner, 0.0) + float(np.linalg.norm(b - a))
    link_segs: list[list] = [[] for _ in range(n + 1)]
    for owner, a, b in geo["segments"]:
        li = owner_of[owner] + 1
        p, R = frames[li]
        L = float(np.linalg.norm(b - a))
        share = L / seg_len[owner] if seg_len[owner] > 0 else 1.0
        scale = 1.0 if li == 0 else float(mult[li - 1])
        link_segs[li].append((_vec(R.T @ (a - p)), _vec(R.T @ (b - p)), default_mass[owner] * share * scale))
    links = tuple(LinkDef(segments=tuple(s), radius=float(t["link_radius"])) for s in link_segs)

    p_last, R_last = frames[-1]
    ee = (_vec(R_last.T @ (geo["ee"] - p_last)), (0.0, 0.0, 0.0))
    return RobotSpec(robot_id=rid, type_tag=type_tag, joints=tuple(joints), links=links, ee_offset=ee,
                     mass_multipliers=_vec(mult), segment_lengths=lengths)


def _sample_hopper(ranges, rng, rid) -> RobotSpec:
    t = load_templates()["hopper"]
    names = ["torso", "thigh", "leg", "foot"]
    L = _draw_lengths(ranges, names, rng)
    damping, friction, armature, mult = _draw_dynamics(ranges, 3, 4, rng)
    lim = t["angle_limits"]
    tau = float(t["torque_limit"])
    down = (-np.pi / 2, 0.0, 0.0)  # joint z-axis along world +y; local +y points down
    offsets = [((0.0, 0.0, -L["torso"] / 2), down), ((0.0, L["thigh"], 0.0), (0.0, 0.0, 0.0)),
               ((0.0, L["leg"], 0.0), (0.0, 0.0, 0.0))]
    joints = tuple(
        JointDef(name=nm, offset_translation=_vec(off), offset_rotation=_vec(rot),
                 damping=float(damping[i]), friction=float(friction[i]), armature=float(armature[i]),
                 torque_limit=tau, angle_limits=_vec(lim[nm]))
        for i, (nm, (off, rot)) in enumerate(zip(names[1:], offsets)))
    dm, rad = t["default_masses"], t["radii"]
    mass = {nm: float(dm[nm]) * float(mult[i]) for i, nm in enumerate(names)}
    heel = float(t["heel_fraction"]) * L["foot"]
    segs = {
        "torso": ((0.0, 0.0, L["torso"] / 2), (0.0, 0.0, -L["torso"] / 2)),
        "thigh": ((0.0, 0.0, 0.0), (0.0, L["thigh"], 0.0)),
        "leg": ((0.0, 0.0, 0.0), (0.0, L["leg"], 0.0)),
        "foot": ((-heel, 0.0, 0.0), (L["foot"] - heel, 0.0, 0.0)),
    }
    links = tuple(LinkDef(segments=((segs[nm][0], segs[nm][1], mass[nm]),), radius=float(rad[nm])) for nm in names)
    ee = ((L["foot"] - heel, 0.0, 0.0), (0.0, 0.0, 0.0))
    return RobotSpec(robot_id=rid, type_tag=HOPPER, joints=joints, links=links, ee_offset=ee,
                     floating_base=True, mass_multipliers=_vec(mult), segment_lengths=L)


def build_pool(type_tags, count_per_type: int, ranges: SamplingRanges | None = None, seed: int = 0) -> list[RobotSpec]:
    """``count_per_type`` robots of every tag, in tag order; ids are unique per pool seed."""
    type_tags = list(type_tags)
    if not type_tags:
        raise ConfigError("build_pool needs at least one robot type")
    if count_per_type < 1:
        raise ConfigError("count_per_type must be >= 1")
    pool = []
    for tag in type_tags:
        _check_type(tag)
        for i in range(count_per_type):
            s = derive_seed(seed, "pool", tag, i)
            pool.append(sample_robot(tag, ranges, s, robot_id=f"{tag}-s{seed}-{i:04d}"))
    return pool


def make_chain(joints, links, ee_offset=((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), robot_id="custom") -> RobotSpec:
    """Hand-built fixed-base robot (tests, planar demos)."""
    return RobotSpec(robot_id=robot_id, type_tag=CUSTOM, joints=tuple(joints), links=tuple(links),
                     ee_offset=(_vec(ee_offset[0]), _vec(ee_offset[1])))


def planar_arm(lengths=(0.3, 0.25), masses=(1.0, 0.8), height=0.3, damping=0.5, friction=0.0,
               armature=0.05, torque_limit=5.0, robot_id="planar") -> RobotSpec:
    """Horizontal planar arm: vertical joint axes, links along +x at q = 0."""
    joints, links = [], [LinkDef(segments=(((0.0, 0.0, 0.0), (0.0, 0.0, height), 1.0),), radius=0.04)]
    prev = (0.0, 0.0, height)
    for i, (L, m) in enumerate(zip(lengths, masses)):
        joints.append(JointDef(name=f"J{i}", offset_translation=prev, offset_rotation=(0.0, 0.0, 0.0),
                               damping=damping, friction=friction, armature=armature,
                               torque_limit=torque_limit, angle_limits=(-3.05, 3.05)))
        links.append(LinkDef(segments=(((0.0, 0.0, 0.0), (L, 0.0, 0.0), m),), radius=0.03))
        prev = (L, 0.0, 0.0)
    return make_chain(joints, links, ee_offset=(prev, (0.0, 0.0, 0.0)), robot_id=robot_id)


def write_pool(path, pool) -> None:
    with open(path, "w") as fh:
        for spec in pool:
            fh.write(json.dumps(spec.to_dict(), sort_keys=True) + "\n")


def read_pool(path) -> list[RobotSpec]:
    with open(Path(path)) as fh:
        return [RobotSpec.from_dict(json.loads(line)) for line in fh if line.strip()]
