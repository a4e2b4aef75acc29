"""Forward kinematics and the explicit hardware encoding.

The explicit encoding concatenates relative poses of consecutive frames along
the chain, evaluated at the reference configuration q = 0::

    v_h = P_base->J0 (+) P_J0->J1 (+) ... (+) P_J(n-1)->EE   (6 numbers each)

with ``P = d (+) e``: ``d`` is the world-frame difference of frame origins and
``e`` the rotation vector of the parent-to-child relative rotation. Robots with
fewer than 7 joints are zero-padded at the end to a fixed length of 48.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnsupportedError
from .robots import MAX_DOF, RobotSpec
from .rotations import check_rotation, rotation_to_vector, vector_to_rotation

BLOCK = 6
EXPLICIT_DIM = BLOCK * (MAX_DOF + 1)


@dataclass(frozen=True)
class Pose:
    translation: np.ndarray
    rotation: np.ndarray  # world-from-local

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.eye(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.translation + self.rotation @ other.translation, self.rotation @ other.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class RelativePose:
    d: np.ndarray
    e: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d, self.e])


@dataclass(frozen=True)
class HardwareVector:
    values: np.ndarray
    layout: str  # "explicit" | "implicit" | "explicit+dyn" | "none"
    n_active_blocks: int = 0

    def __len__(self):
        return len(self.values)


def _mounts(spec: RobotSpec):
    R = np.stack([vector_to_rotation(j.offset_rotation) for j in spec.joints])
    d = np.array([j.offset_translation for j in spec.joints], dtype=float)
    axes = np.array([j.axis_direction for j in spec.joints], dtype=float)
    prismatic = np.array([j.kind == "prismatic" for j in spec.joints])
    return R, d, axes, prismatic


def _axis_rotations(axes, angles):
    """Batched Rodrigues: axes (n, 3) unit, angles (N, n) -> (N, n, 3, 3)."""
    c = np.cos(angles)[..., None, None]
    s = np.sin(angles)[..., None, None]
    K = np.zeros(axes.shape[:1] + (3, 3))
    K[:, 0, 1], K[:, 0, 2] = -axes[:, 2], axes[:, 1]
    K[:, 1, 0], K[:, 1, 2] = axes[:, 2], -axes[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -axes[:, 1], axes[:, 0]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def _check_q(spec: RobotSpec, Q: np.ndarray):
    if Q.shape[-1] != spec.dof:
        raise DimensionError(f"expected {spec.dof} joint values, got {Q.shape[-1]}")
    if not np.all(np.isfinite(Q)):
        raise DimensionError("joint values must be finite")
    lo = np.array([j.angle_limits[0] for j in spec.joints]) - 2 * np.pi
    hi = np.array([j.angle_limits[1] for j in spec.joints]) + 2 * np.pi
    if np.any(Q < lo) or np.any(Q > hi):
        raise DimensionError("joint values far outside their limits")


def chain_frames(spec: RobotSpec, Q) -> tuple[np.ndarray, np.ndarray]:
    """Joint frames for a batch of configurations.

    ``Q`` has shape (N, n). Returns rotations (N, n+1, 3, 3) and origins
    (N, n+1, 3); index n is the end-effector frame.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    _check_q(spec, Q)
    N, n = Q.shape
    Rm, dm, axes, prismatic = _mounts(spec)
    Rj = _axis_rotations(axes, np.where(prismatic, 0.0, Q))
    slide = np.where(prismatic, Q, 0.0)[..., None] * axes  # (N, n, 3)
    rots = np.empty((N, n + 1, 3, 3))
    pos = np.empty((N, n + 1, 3))
    R = np.broadcast_to(np.eye(3), (N, 3, 3))
    p = np.zeros((N, 3))
    for i in range(n):
        Rmount = R @ Rm[i]
        p = p + R @ dm[i] + np.einsum("nij,nj->ni", Rmount, slide[:, i])
        R = Rmount @ Rj[:, i]
        rots[:, i], pos[:, i] = R, p
    ee_t, ee_r = spec.ee_offset
    pos[:, n] = p + R @ np.asarray(ee_t, dtype=float)
    rots[:, n] = R @ vector_to_rotation(ee_r)
    return rots, pos


def forward_kinematics(spec: RobotSpec, q) -> list[Pose]:
    """World poses of every joint frame followed by the end effector."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise DimensionError("q must be a vector")
    rots, pos = chain_frames(spec, q[None])
    return [Pose(pos[0, i].copy(), rots[0, i].copy()) for i in range(spec.dof + 1)]


def point_positions(spec: RobotSpec, Q, offset=None) -> np.ndarray:
    """End-effector positions (N, 3), optionally displaced by ``offset`` in the EE frame."""
    rots, pos = chain_frames(spec, Q)
    p = pos[:, -1]
    if offset is not None:
        p = p + rots[:, -1] @ np.asarray(offset, dtype=float)
    return p


def relative_pose(parent: Pose, child: Pose) -> RelativePose:
    check_rotation(parent.rotation)
    check_rotation(child.rotation)
    d = np.asarray(child.translation, dtype=float) - np.asarray(parent.translation, dtype=float)
    e = rotation_to_vector(parent.rotation.T @ child.rotation)
    return RelativePose(d, e)


def compose_relative(parent: Pose, rel: RelativePose) -> Pose:
    """Inverse of :func:`relative_pose`: rebuild the child pose."""
    return Pose(parent.translation + rel.d, parent.rotation @ vector_to_rotation(rel.e))


def explicit_encoding(spec: RobotSpec, reference_q=None) -> HardwareVector:
    n = spec.dof
    if n > MAX_DOF:
        raise UnsupportedError("explicit encoding supports at most 7 joints")
    q = np.zeros(n) if reference_q is None else np.asarray(reference_q, dtype=float)
    frames = [Pose.identity()] + forward_kinematics(spec, q)
    out = np.zeros(EXPLICIT_DIM)
    for b in range(n + 1):
        out[BLOCK * b: BLOCK * (b + 1)] = relative_pose(frames[b], frames[b + 1]).as_vector()
    return HardwareVector(out, "explicit", n + 1)


def dynamics_vector(spec: RobotSpec, ranges) -> np.ndarray:
    """Ground-truth dynamics scaled into [0, 1): per joint damping, friction,
    armature, then per moving-link mass multipliers; zero-padded to 7 joints and
    8 links."""
    def scale(x, lo_hi):
        lo, hi = lo_hi
        if hi <= lo:
            return np.zeros_like(x)
        return np.clip((x - lo) / (hi - lo), 0.0, np.nextafter(1.0, 0.0))

    J = np.zeros((MAX_DOF, 3))
    for i, j in enumerate(spec.joints):
        J[i] = [scale(np.float64(j.damping), ranges.damping), scale(np.float64(j.friction), ranges.friction),
                scale(np.float64(j.armature), ranges.armature)]
    M = np.zeros(MAX_DOF + 1)
    mult = np.asarray(spec.mass_multipliers, dtype=float)
    M[:len(mult)] = scale(mult, ranges.mass_multiplier)
    return np.concatenate([J.ravel(), M])


DYN_DIM = 3 * MAX_DOF + MAX_DOF + 1
