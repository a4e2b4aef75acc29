"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import numpy as np


def rodrigues(axis, angle):
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1 - c
    return np.array([[c + x * x * C, x * y * C - z * s, x * z * C + y * s],
                     [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
                     [z * x * C - y * s, z * y * C + x * s, c + z * z * C]])


def homogeneous(R, p):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


def naive_fk(spec, q):
    """Multiply 4x4 transforms link by link: mount, then joint rotation."""
    T = np.eye(4)
    out = []
    for j, qi in zip(spec.joints, q):
        rv = np.asarray(j.offset_rotation, float)
        ang = np.linalg.norm(rv)
        Rm = np.eye(3) if ang == 0 else rodrigues(rv / ang, ang)
        T = T @ homogeneous(Rm, j.offset_translation) @ homogeneous(rodrigues(j.axis_direction, qi), np.zeros(3))
        out.append(T.copy())
    t, r = spec.ee_offset
    rv = np.asarray(r, float)
    ang = np.linalg.norm(rv)
    Re = np.eye(3) if ang == 0 else rodrigues(rv / ang, ang)
    out.append(T @ homogeneous(Re, t))
    return out


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                     [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                     [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
