"""SO(3) helpers: rotation vectors (axis-angle) <-> rotation matrices."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

# below this angle the Rodrigues coefficients switch to Taylor series
_SMALL = 1e-6


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def check_rotation(R, tol: float = 1e-6) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValidationError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise ValidationError("matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValidationError("rotation must have determinant +1")
    return R


def vector_to_rotation(v) -> np.ndarray:
    """Exponential map: rotation vector ``theta * axis`` -> 3x3 rotation matrix."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    K = skew(v)
    if theta < _SMALL:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def rotation_to_vector(R, tol: float = 1e-6) -> np.ndarray:
    """Logarithm map: rotation matrix -> rotation vector with angle in [0, pi].

    At exactly (numerically) pi the axis sign is ambiguous; the returned axis then
    has its largest-magnitude component nonnegative.
    """
    R = check_rotation(R, tol)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_t))
    w = vee(R - R.T) / 2.0  # = sin(theta) * axis
    if theta < _SMALL:
        return w * (1.0 + theta**2 / 6.0)
    if np.pi - theta > 1e-4:
        return w * (theta / np.sin(theta))
    # near pi: axis from the symmetric part, R + R^T = 2 cos(t) I + 2 (1 - cos(t)) a a^T
    B = (R + R.T) / 2.0 - cos_t * np.eye(3)
    B /= 1.0 - cos_t
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    s = float(axis @ w)
    if abs(s) > 1e-12:
        if s < 0:
            axis = -axis
    elif axis[int(np.argmax(np.abs(axis)))] < 0:
        axis = -axis
    return theta * axis


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return vector_to_rotation(axis / np.linalg.norm(axis) * angle)
