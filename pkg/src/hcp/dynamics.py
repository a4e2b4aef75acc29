"""Rigid-body simulation of serial chains.

Forward dynamics uses the articulated-body algorithm (spatial vectors ordered
angular-then-linear, body coordinates). Joint damping, smoothed Coulomb friction
and joint-limit springs are integrated linearly-implicitly: their diagonal
derivatives are added to the articulated inertia, which keeps stiff friction
stable at the 2 ms substep. Contacts are penalty spring-dampers on a plane,
optionally with a rectangular hole.

``inverse_dynamics`` is an independent world-frame Newton-Euler recursion in
plain numpy; it is used for the mass matrix, energy bookkeeping and as the
check on the articulated-body code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DimensionError, SimulationDiverged
from .robots import RobotSpec
from .rotations import vector_to_rotation

GRAVITY = np.array([0.0, 0.0, -9.81])
SUBSTEP = 0.002
CONTROL_DT = 0.02
JOINT_SMOOTHING = 0.01
LIMIT_STIFFNESS = 200.0
LIMIT_DAMPING = 5.0


@dataclass(frozen=True)
class ContactModel:
    stiffness: float = 1e4
    damping: float = 100.0
    friction_coeff: float = 1.0
    smoothing_velocity: float = 0.1

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("contact stiffness and damping must be >= 0")
        if not self.smoothing_velocity > 0:
            raise ValueError("smoothing_velocity must be positive")


@dataclass(frozen=True)
class Surface:
    """Horizontal plane ``z = height``; points over the hole footprint feel no force."""

    height: float = 0.0
    hole_center: tuple | None = None  # (x, y)
    hole_half_size: tuple = (0.03, 0.03)
    hole_depth: float = 0.1

    def as_array(self, contact: ContactModel) -> np.ndarray:
        has = self.hole_center is not None
        cx, cy = self.hole_center if has else (0.0, 0.0)
        return np.array([self.height, float(has), cx, cy, self.hole_half_size[0], self.hole_half_size[1],
                         contact.stiffness, contact.damping, contact.friction_coeff, contact.smoothing_velocity,
                         self.hole_depth])


@dataclass
class SimState:
    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0
    contact_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        if self.q.shape != self.qd.shape:
            raise DimensionError("q and qd must have the same length")

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.qd.copy(), self.t, self.contact_flags.copy())


def _segment_inertia(a, b, m, r):
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = float(np.linalg.norm(b - a))
    c = (a + b) / 2
    if L < 1e-12:
        Ic = 0.4 * m * r * r * np.eye(3)
    else:
        u = (b - a) / L
        uu = np.outer(u, u)
        Ic = m * (3 * r * r + L * L) / 12.0 * (np.eye(3) - uu) + 0.5 * m * r * r * uu
    return m, c, Ic


def spatial_inertia(segments, radius) -> np.ndarray:
    """6x6 spatial inertia about the link frame origin from rod segments."""
    I6 = np.zeros((6, 6))
    for a, b, m in segments:
        if m <= 0:
            continue
        m, c, Ic = _segment_inertia(a, b, m, radius)
        C = np.array([[0, -c[2], c[1]], [c[2], 0, -c[0]], [-c[1], c[0], 0]])
        I6[:3, :3] += Ic + m * C @ C.T
        I6[:3, 3:] += m * C
        I6[3:, :3] += m * C.T
        I6[3:, 3:] += m * np.eye(3)
    return I6


def _com(segments):
    m_tot, mc = 0.0, np.zeros(3)
    for a, b, m in segments:
        m_tot += m
        mc += m * (np.asarray(a, float) + np.asarray(b, float)) / 2
    return m_tot, (mc / m_tot if m_tot > 0 else np.zeros(3))


@dataclass
class Model:
    """Compiled arrays for one robot (optionally with a floating planar base)."""

    spec: RobotSpec
    jtype: np.ndarray
    axis: np.ndarray
    mount_R: np.ndarray
    mount_p: np.ndarray
    I6: np.ndarray
    damping: np.ndarray
    friction: np.ndarray
    armature: np.ndarray
    lim: np.ndarray  # (nb, 4): lo, hi, stiffness, damping
    gear: np.ndarray  # torque limit per body, 0 for passive joints
    gravity: np.ndarray
    cp_body: np.ndarray
    cp_pos: np.ndarray
    cp_radius: np.ndarray
    surf: np.ndarray
    n_base: int  # unactuated leading coordinates (3 for the hopper)
    smoothing: float = JOINT_SMOOTHING
    com_local: np.ndarray = None
    masses: np.ndarray = None

    @property
    def nb(self) -> int:
        return len(self.jtype)

    @property
    def n_act(self) -> int:
        return self.nb - self.n_base

    def arrays(self):
        return (self.jtype, self.axis, self.mount_R, self.mount_p, self.I6, self.damping, self.friction,
                self.armature, self.lim, self.gravity, self.cp_body, self.cp_pos, self.cp_radius, self.surf,
                self.smoothing)

    @classmethod
    def from_spec(cls, spec: RobotSpec, surface: Surface | None = None, contact: ContactModel | None = None,
                  contact_points=(), gravity=GRAVITY, limit_stiffness=LIMIT_STIFFNESS,
                  limit_damping=LIMIT_DAMPING, joint_smoothing=JOINT_SMOOTHING) -> "Model":
        """Compile ``spec``. ``contact_points`` lists ``(joint_index, local_point, radius)``
        with joint_index -1 for the base link; the hopper adds heel and toe itself."""
        contact = contact or ContactModel()
        jt, ax, mR, mp, I6, dmp, fr, arm, lim, gear, com, mass = ([] for _ in range(12))
        n_base = 0
        base_R = np.eye(3)
        if spec.floating_base:
            # x slide, z slide, pitch hinge about world +y (frame z), carrying the torso
            base_R = vector_to_rotation([-np.pi / 2, 0, 0])
            for k, (typ, axis, R) in enumerate([(1, [1, 0, 0], np.eye(3)), (1, [0, 0, 1], np.eye(3)),
                                                (0, [0, 0, 1], base_R)]):
                jt.append(typ)
                ax.append(axis)
                mR.append(R)
                mp.append(np.zeros(3))
                dmp.append(0.0)
                fr.append(0.0)
                arm.append(0.0)
                lim.append([-np.inf, np.inf, 0.0, 0.0])
                gear.append(0.0)
                if k < 2:
                    I6.append(np.zeros((6, 6)))
                    com.append(np.zeros(3))
                    mass.append(0.0)
            torso = [(base_R.T @ np.asarray(a), base_R.T @ np.asarray(b), m) for a, b, m in spec.links[0].segments]
            I6.append(spatial_inertia(torso, spec.links[0].radius))
            m_, c_ = _com(torso)
            mass.append(m_)
            com.append(c_)
            n_base = 3
        for i, j in enumerate(spec.joints):
            R = vector_to_rotation(j.offset_rotation)
            p = np.asarray(j.offset_translation, float)
            if i == 0 and spec.floating_base:
                R, p = base_R.T @ R, base_R.T @ p
            jt.append(0 if j.kind == "revolute" else 1)
            ax.append(j.axis_direction)
            mR.append(R)
            mp.append(p)
            link = spec.links[i + 1]
            I6.append(spatial_inertia(link.segments, link.radius))
            m_, c_ = _com(link.segments)
            mass.append(m_)
            com.append(c_)
            dmp.append(j.damping)
            fr.append(j.friction)
            arm.append(j.armature)
            lim.append([j.angle_limits[0], j.angle_limits[1], limit_stiffness, limit_damping])
            gear.append(j.torque_limit)
        cps = list(contact_points)
        if spec.floating_base:
            foot = spec.links[-1]
            a, b, _ = foot.segments[0]
            cps += [(spec.dof - 1, a, foot.radius), (spec.dof - 1, b, foot.radius)]
        cp_body = np.array([c[0] + n_base if c[0] >= 0 else n_base - 1 for c in cps], dtype=np.int64)
        cp_pos = np.array([c[1] for c in cps], dtype=float).reshape(-1, 3)
        if spec.floating_base:
            # base-link points are given in torso coordinates; map into the pitch body frame
            for k, c in enumerate(cps):
                if c[0] < 0:
                    cp_pos[k] = base_R.T @ cp_pos[k]
        cp_radius = np.array([c[2] for c in cps], dtype=float)
        surf = (surface or Surface()).as_array(contact)
        if surface is None and not spec.floating_base:
            cp_body = cp_body[:0]
            cp_pos = cp_pos[:0]
            cp_radius = cp_radius[:0]
        return cls(spec=spec, jtype=np.array(jt, dtype=np.int64), axis=np.array(ax, dtype=float),
                   mount_R=np.array(mR, dtype=float), mount_p=np.array(mp, dtype=float), I6=np.array(I6),
                   damping=np.array(dmp, float), friction=np.array(fr, float), armature=np.array(arm, float),
                   lim=np.array(lim, float), gear=np.array(gear, float), gravity=np.asarray(gravity, float),
                   cp_body=cp_body, cp_pos=cp_pos, cp_radius=cp_radius, surf=surf, n_base=n_base,
                   smoothing=float(joint_smoothing), com_local=np.array(com), masses=np.array(mass))

    def initial_state(self, q=None, qd=None) -> SimState:
        q = np.zeros(self.nb) if q is None else np.asarray(q, float)
        qd = np.zeros(self.nb) if qd is None else np.asarray(qd, float)
        return SimState(q.copy(), qd.copy(), 0.0, np.zeros(len(self.cp_body), dtype=bool))

    def joint_torques(self, tau) -> np.ndarray:
        """Clamp actuated torques to their limits and pad passive coordinates with 0."""
        tau = np.asarray(tau, float)
        if tau.shape != (self.n_act,):
            raise DimensionError(f"expected {self.n_act} torques, got {tau.shape}")
        full = np.zeros(self.nb)
        g = self.gear[self.n_base:]
        full[self.n_base:] = np.clip(tau, -g, g)
        return full


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _skew(v):
    S = np.zeros((3, 3))
    S[0, 1], S[0, 2] = -v[2], v[1]
    S[1, 0], S[1, 2] = v[2], -v[0]
    S[2, 0], S[2, 1] = -v[1], v[0]
    return S


@numba.njit(cache=True)
def _axis_rot(a, q):
    K = _skew(a)
    return np.eye(3) + np.sin(q) * K + (1.0 - np.cos(q)) * (K @ K)


@numba.njit(cache=True)
def _crm(v):
    out = np.zeros((6, 6))
    w = _skew(v[:3])
    u = _skew(v[3:])
    out[:3, :3] = w
    out[3:, 3:] = w
    out[3:, :3] = u
    return out


@numba.njit(cache=True)
def _crf(v):
    return -_crm(v).T


@numba.njit(cache=True)
def _penalty(depth, rate, k, c):
    f = k * depth - c * rate
    return f if f > 0.0 else 0.0


@numba.njit(cache=True)
def contact_point_force(pos, vel, radius, surf):
    """World-frame penalty force on one contact sphere (centre ``pos``).

    ``surf`` = (height, has_hole, hole_x, hole_y, half_x, half_y, stiffness,
    damping, friction_coeff, smoothing_velocity, hole_depth). A sphere whose
    centre lies over the hole footprint feels no plane force; once below the
    surface it is kept inside the hole by side walls and a floor.
    """
    f = np.zeros(3)
    h = surf[0]
    k, c, mu, vs = surf[6], surf[7], surf[8], surf[9]
    in_hole = surf[1] > 0.5 and abs(pos[0] - surf[2]) < surf[4] and abs(pos[1] - surf[3]) < surf[5]
    n = 0.0
    if in_hole:
        if pos[2] < h:
            for ax in range(2):
                off = pos[ax] - surf[2 + ax]
                pen = abs(off) + radius - surf[4 + ax]
                if pen > 0.0:
                    sgn = 1.0 if off > 0.0 else -1.0
                    f[ax] = -sgn * _penalty(pen, sgn * vel[ax], k, c)
            floor_depth = (h - surf[10]) + radius - pos[2]
            if floor_depth > 0.0:
                n = _penalty(floor_depth, vel[2], k, c)
        if n == 0.0:
            return f, f[0] != 0.0 or f[1] != 0.0
    else:
        depth = h + radius - pos[2]
        if depth <= 0.0:
            return f, False
        n = _penalty(depth, vel[2], k, c)
    f[2] = n
    vt = np.sqrt(vel[0] ** 2 + vel[1] ** 2)
    if vt > 1e-12 and n > 0.0:
        s = mu * n * np.tanh(vt / vs) / vt
        f[0] -= s * vel[0]
        f[1] -= s * vel[1]
    return f, True


@numba.njit(cache=True)
def _forward_pass(arrs, q, qd):
    jtype, axis, mount_R, mount_p = arrs[0], arrs[1], arrs[2], arrs[3]
    nb = len(q)
    X = np.zeros((nb, 6, 6))
    S = np.zeros((nb, 6))
    v = np.zeros((nb, 6))
    c = np.zeros((nb, 6))
    Rw = np.zeros((nb, 3, 3))
    pw = np.zeros((nb, 3))
    Rp = np.eye(3)
    pp = np.zeros(3)
    vp = np.zeros(6)
    for i in range(nb):
        a = axis[i]
        if jtype[i] == 0:
            R = mount_R[i] @ _axis_rot(a, q[i])
            p = mount_p[i].copy()
            S[i, :3] = a
        else:
            R = mount_R[i].copy()
            p = mount_p[i] + mount_R[i] @ (a * q[i])
            S[i, 3:] = a
        E = R.T
        X[i, :3, :3] = E
        X[i, 3:, 3:] = E
        X[i, 3:, :3] = -E @ _skew(p)
        v[i] = X[i] @ vp + S[i] * qd[i]
        c[i] = _crm(v[i]) @ (S[i] * qd[i])
        pw[i] = pp + Rp @ p
        Rw[i] = Rp @ R
        Rp = Rw[i]
        pp = pw[i]
        vp = v[i]
    return X, S, v, c, Rw, pw


@numba.njit(cache=True)
def _contacts(arrs, Rw, pw, v):
    cp_body, cp_pos, cp_radius, surf = arrs[10], arrs[11], arrs[12], arrs[13]
    nb = len(pw)
    fext = np.zeros((nb, 6))
    flags = np.zeros(len(cp_body), dtype=np.bool_)
    for k in range(len(cp_body)):
        b = cp_body[k]
        pl = cp_pos[k]
        pos = pw[b] + Rw[b] @ pl
        vb = v[b, 3:] + np.cross(v[b, :3], pl)
        vel = Rw[b] @ vb
        f, on = contact_point_force(pos, vel, cp_radius[k], surf)
        flags[k] = on
        if on:
            fb = Rw[b].T @ f
            fext[b, :3] += np.cross(pl, fb)
            fext[b, 3:] += fb
    return fext, flags


@numba.njit(cache=True)
def _passive(arrs, q, qd, dt):
    """Passive joint torques and the diagonal added to the articulated inertia
    (dt * d(tau)/d(qd) + dt^2 * d(tau)/d(q)) plus the matching rhs correction."""
    damping, friction, armature, lim, vs = arrs[5], arrs[6], arrs[7], arrs[8], arrs[14]
    nb = len(q)
    tau = np.zeros(nb)
    diag = armature.copy()
    for i in range(nb):
        th = np.tanh(qd[i] / vs)
        tau[i] = -damping[i] * qd[i] - friction[i] * th
        B = damping[i] + friction[i] * (1.0 - th * th) / vs
        K = 0.0
        lo, hi, k, d = lim[i, 0], lim[i, 1], lim[i, 2], lim[i, 3]
        if q[i] < lo:
            tau[i] += k * (lo - q[i]) - d * qd[i]
            B += d
            K = k
        elif q[i] > hi:
            tau[i] += k * (hi - q[i]) - d * qd[i]
            B += d
            K = k
        diag[i] += dt * B + dt * dt * K
        tau[i] -= dt * K * qd[i]
    return tau, diag


@numba.njit(cache=True)
def _aba(arrs, X, S, v, c, tau, fext, diag):
    I6, gravity = arrs[4], arrs[9]
    nb = len(tau)
    IA = np.zeros((nb, 6, 6))
    pA = np.zeros((nb, 6))
    for i in range(nb):
        IA[i] = I6[i]
        pA[i] = _crf(v[i]) @ (I6[i] @ v[i]) - fext[i]
    U = np.zeros((nb, 6))
    D = np.zeros(nb)
    u = np.zeros(nb)
    for i in range(nb - 1, -1, -1):
        U[i] = IA[i] @ S[i]
        D[i] = S[i] @ U[i] + diag[i]
        u[i] = tau[i] - S[i] @ pA[i]
        if i > 0:
            Ia = IA[i] - np.outer(U[i], U[i]) / D[i]
            pa = pA[i] + Ia @ c[i] + U[i] * (u[i] / D[i])
            IA[i - 1] += X[i].T @ Ia @ X[i]
            pA[i - 1] += X[i].T @ pa
    qdd = np.zeros(nb)
    ap = np.zeros(6)
    ap[3:] = -gravity
    for i in range(nb):
        a = X[i] @ ap + c[i]
        qdd[i] = (u[i] - U[i] @ a) / D[i]
        ap = a + S[i] * qdd[i]
    return qdd


@numba.njit(cache=True)
def _accel(arrs, q, qd, tau_act, dt):
    X, S, v, c, Rw, pw = _forward_pass(arrs, q, qd)
    fext, flags = _contacts(arrs, Rw, pw, v)
    tp, diag = _passive(arrs, q, qd, dt)
    return _aba(arrs, X, S, v, c, tau_act + tp, fext, diag), flags


@numba.njit(cache=True)
def _integrate(arrs, q, qd, tau_act, dt, n_sub):
    q = q.copy()
    qd = qd.copy()
    flags = np.zeros(len(arrs[10]), dtype=np.bool_)
    for k in range(n_sub):
        qdd, flags = _accel(arrs, q, qd, tau_act, dt)
        qd = qd + dt * qdd
        q = q + dt * qd
        for i in range(len(q)):
            if not (np.isfinite(q[i]) and np.isfinite(qd[i])):
                return q, qd, flags, k
    return q, qd, flags, -1


# ---------------------------------------------------------------------------
# public API


def _as_model(x) -> Model:
    return x if isinstance(x, Model) else Model.from_spec(x)


def forward_dynamics(model, state: SimState, tau) -> np.ndarray:
    """Joint accelerations for applied actuator torques ``tau`` (clamped to limits).

    Solves ``(M + diag(armature)) qdd = tau - damping*qd - friction*tanh(qd/v_s)
    + limit + contact - bias(q, qd)`` with the articulated-body algorithm.
    """
    model = _as_model(model)
    tau_full = model.joint_torques(tau)
    if state.q.shape != (model.nb,):
        raise DimensionError(f"state has {state.q.shape[0]} coordinates, model has {model.nb}")
    qdd, _ = _accel(model.arrays(), state.q, state.qd, tau_full, 0.0)
    return qdd


def step(model, state: SimState, tau, control_dt: float = CONTROL_DT, substep: float = SUBSTEP) -> SimState:
    """Advance one control tick with the torque held; semi-implicit Euler substeps."""
    model = _as_model(model)
    tau_full = model.joint_torques(tau)
    n_sub = max(1, int(round(control_dt / substep)))
    g = model.gear
    assert np.all(np.abs(tau_full) <= g + 1e-12)
    q, qd, flags, bad = _integrate(model.arrays(), state.q, state.qd, tau_full, substep, n_sub)
    if bad >= 0:
        raise SimulationDiverged(f"non-finite state at substep {bad}", step=bad,
                                 context={"t": state.t, "q": state.q.tolist()})
    return SimState(q, qd, state.t + n_sub * substep, flags)


def contact_force(point_position, point_velocity, surface: Surface, contact: ContactModel | None = None,
                  radius: float = 0.0) -> np.ndarray:
    """Penalty force on a contact sphere of ``radius`` centred at ``point_position``."""
    f, _ = contact_point_force(np.asarray(point_position, float), np.asarray(point_velocity, float),
                               float(radius), surface.as_array(contact or ContactModel()))
    return f


def body_frames(model: Model, q) -> tuple[np.ndarray, np.ndarray]:
    """World rotations (nb, 3, 3) and origins (nb, 3) of every body."""
    q = np.asarray(q, float)
    _, _, _, _, Rw, pw = _forward_pass(model.arrays(), q, np.zeros_like(q))
    return Rw, pw


def world_points(model: Model, q, body: int, local_points) -> np.ndarray:
    Rw, pw = body_frames(model, q)
    return pw[body] + np.asarray(local_points, float) @ Rw[body].T


# ---------------------------------------------------------------------------
# Newton-Euler (world frame, 3-vectors)


def _cross(a, b) -> np.ndarray:
    """3-vector cross product; np.cross has a large per-call overhead on tiny inputs."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def inverse_dynamics(model: Model, q, qd, qdd, gravity: bool = True, fext_world=None) -> np.ndarray:
    """Joint forces for the rigid chain (no armature, damping or friction).

    World-frame recursion: propagate angular velocity/acceleration and the
    linear acceleration of each frame origin outward, then Newton-Euler
    equations about each link's centre of mass inward.
    """
    q, qd, qdd = (np.asarray(x, float) for x in (q, qd, qdd))
    nb = model.nb
    g = model.gravity if gravity else np.zeros(3)
    R = np.eye(3)
    p = np.zeros(3)
    w = np.zeros(3)
    wd = np.zeros(3)
    a = -g.copy()  # base acceleration absorbs gravity
    frames = []
    for i in range(nb):
        ax = model.axis[i]
        Rmount = R @ model.mount_R[i]
        r = R @ model.mount_p[i]
        if model.jtype[i] == 0:
            z = Rmount @ ax
            a = a + _cross(wd, r) + _cross(w, _cross(w, r))
            p = p + r
            w_new = w + z * qd[i]
            wd = wd + z * qdd[i] + _cross(w, z * qd[i])
            w = w_new
            R = Rmount @ vector_to_rotation(ax * q[i])
        else:
            z = Rmount @ ax
            r_full = r + z * q[i]
            a = (a + _cross(wd, r_full) + _cross(w, _cross(w, r_full))
                 + 2 * _cross(w, z * qd[i]) + z * qdd[i])
            p = p + r_full
            R = Rmount
        frames.append((R.copy(), p.copy(), w.copy(), wd.copy(), a.copy(), z))
    tau = np.zeros(nb)
    f_next = np.zeros(3)
    n_next = np.zeros(3)
    p_next = None
    for i in range(nb - 1, -1, -1):
        R, p, w, wd, a, z = frames[i]
        m = model.masses[i]
        c = R @ model.com_local[i]
        I_origin = model.I6[i][:3, :3]
        C = np.array([[0, -model.com_local[i][2], model.com_local[i][1]],
                      [model.com_local[i][2], 0, -model.com_local[i][0]],
                      [-model.com_local[i][1], model.com_local[i][0], 0]])
        Ic = R @ (I_origin - m * C @ C.T) @ R.T
        ac = a + _cross(wd, c) + _cross(w, _cross(w, c))
        F = m * ac
        N = Ic @ wd + _cross(w, Ic @ w)
        f = F + f_next
        n = N + _cross(c, F) + n_next
        if p_next is not None:
            n = n + _cross(p_next - p, f_next)
        if fext_world is not None:
            for point, force in fext_world.get(i, ()):
                f = f - force
                n = n - _cross(np.asarray(point) - p, force)
        tau[i] = z @ (n if model.jtype[i] == 0 else f)
        f_next, n_next, p_next = f, n, p
    return tau


def mass_matrix(model: Model, q) -> np.ndarray:
    """Joint-space inertia (including armature) from Newton-Euler column probes."""
    nb = model.nb
    zero = np.zeros(nb)
    M = np.empty((nb, nb))
    for j in range(nb):
        e = np.zeros(nb)
        e[j] = 1.0
        M[:, j] = inverse_dynamics(model, q, zero, e, gravity=False)
    return M + np.diag(model.armature)


def passive_torques(model: Model, state: SimState) -> np.ndarray:
    tau, _ = _passive(model.arrays(), state.q, state.qd, 0.0)
    return tau


def mechanical_energy(model: Model, state: SimState) -> float:
    """Kinetic (with armature) plus gravitational potential energy."""
    M = mass_matrix(model, state.q)
    ke = 0.5 * state.qd @ M @ state.qd
    Rw, pw = body_frames(model, state.q)
    coms = pw + np.einsum("bij,bj->bi", Rw, model.com_local)
    pe = -float(np.sum(model.masses * (coms @ model.gravity)))
    return float(ke + pe)


def potential_energy(model: Model, q) -> float:
    Rw, pw = body_frames(model, np.asarray(q, float))
    coms = pw + np.einsum("bij,bj->bi", Rw, model.com_local)
    return -float(np.sum(model.masses * (coms @ model.gravity)))
