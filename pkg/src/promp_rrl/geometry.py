"""Quaternion, rotation-vector and rigid-pose algebra.

Conventions
-----------
- Quaternions are numpy arrays ``[w, x, y, z]`` (scalar first) and use the
  Hamilton product convention.
- Rotation vectors ("axis-angle") are 3-vectors ``axis * angle`` in radians.
- The double cover is resolved by keeping ``w >= 0``: :func:`quat_canonicalize`
  is applied before any differencing so the difference is continuous near the
  identity and its magnitude never exceeds pi (shortest arc).
- All functions are pure and return fresh arrays; inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# below this rotation magnitude the sin/cos ratios are evaluated by their
# second-order Taylor expansions to avoid dividing by a vanishing norm
_SMALL_ANGLE = 1e-8


def identity_quat() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError(f"cannot normalize quaternion with norm {n}")
    return q / n


def quat_canonicalize(q) -> np.ndarray:
    """Flip sign so the scalar part is non-negative (hemisphere convention)."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q.copy()


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a * b, renormalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )
    return quat_normalize(out)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[0] * t + np.cross(qv, t)


def axis_angle_to_quat(rv) -> np.ndarray:
    """Rotation vector -> unit quaternion.

    Uses ``[cos(theta/2), axis * sin(theta/2)]``; the theta -> 0 limit is
    handled with a series expansion of ``sin(theta/2)/theta``.
    """
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv)
    if theta < _SMALL_ANGLE:
        w = 1.0 - theta * theta / 8.0
        s = 0.5 - theta * theta / 48.0
    else:
        w = np.cos(0.5 * theta)
        s = np.sin(0.5 * theta) / theta
    return quat_normalize(np.array([w, s * rv[0], s * rv[1], s * rv[2]]))


def quat_to_axis_angle(q) -> np.ndarray:
    """Unit quaternion -> rotation vector with magnitude <= pi."""
    q = quat_canonicalize(quat_normalize(q))
    vec = q[1:]
    s = np.linalg.norm(vec)
    w = q[0]
    if s < _SMALL_ANGLE:
        # theta/s = 2*atan2(s, w)/s expanded around s = 0 (w ~ 1 here)
        factor = 2.0 / w - 2.0 * s * s / (3.0 * w**3)
    else:
        factor = 2.0 * np.arctan2(s, w) / s
    return factor * vec


def quat_diff_axis_angle(q_des, q) -> np.ndarray:
    """Rotation vector of q_des * q^-1 (shortest arc).

    Satisfies axis_angle_to_quat(result) * q == q_des.
    """
    return quat_to_axis_angle(quat_mul(q_des, quat_conj(q)))


def quat_mean(qs) -> np.ndarray:
    """Sign-aligned component-wise mean of unit quaternions, renormalized.

    Every element is flipped onto the hemisphere of the first one before
    averaging so that antipodal representations do not cancel.
    """
    qs = list(qs)
    if not qs:
        raise ValueError("quat_mean of empty sequence")
    ref = np.asarray(qs[0], dtype=float)
    acc = np.zeros(4)
    for q in qs:
        q = np.asarray(q, dtype=float)
        acc += -q if float(np.dot(ref, q)) < 0.0 else q
    return quat_normalize(acc / len(qs))


def quat_slerp(q0, q1, u: float) -> np.ndarray:
    """Spherical interpolation from q0 (u=0) to q1 (u=1), shortest path."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-12:
        return quat_normalize(q0 + u * (q1 - q0))
    theta = np.arccos(min(d, 1.0))
    s = np.sin(theta)
    return quat_normalize(
        (np.sin((1.0 - u) * theta) / s) * q0 + (np.sin(u * theta) / s) * q1
    )


@dataclass
class Pose:
    """Position (meters) plus unit quaternion orientation."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=identity_quat)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3).copy()
        self.q = quat_normalize(self.q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), identity_quat())

    def copy(self) -> "Pose":
        return Pose(self.p.copy(), self.q.copy())

    def as_vec(self) -> np.ndarray:
        """7-vector [px, py, pz, qw, qx, qy, qz]."""
        return np.concatenate([self.p, self.q])


def pose_from_vec(vec) -> Pose:
    vec = np.asarray(vec, dtype=float).reshape(7)
    return Pose(vec[:3], vec[3:])


def compose_pose(a: Pose, b: Pose) -> Pose:
    """Frame composition: the pose of b expressed through frame a."""
    return Pose(a.p + quat_rotate(a.q, b.p), quat_mul(a.q, b.q))


def pose_inverse(a: Pose) -> Pose:
    q_inv = quat_conj(a.q)
    return Pose(-quat_rotate(q_inv, a.p), q_inv)
