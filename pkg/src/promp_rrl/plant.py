"""Impedance-controlled 6-DoF rigid body in task space.

The controlled system is modelled directly as a rigid body driven by the
task-space impedance wrench. A joint-space robot whose controller exactly
compensates Coriolis and gravity terms exhibits the same closed-loop
task-space behaviour (the Jacobian only maps the identical wrench), so the
joint-space quantities never appear here. This is the module's central
simplification and the reason states carry mass/inertia instead of joint
vectors.

Gains default deliberately LOW so that the trajectory-following controller
visibly lags and cannot finish a tight insertion on its own; a compliant
low-gain regime is the starting premise of the whole experiment.

The plant advances at 1 kHz (dt = 1e-3 s); the learned policy acts once per
100 plant steps (10 Hz).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Pose, quat_diff_axis_angle

DT = 1e-3  # plant integration period, seconds
DEFAULT_MASS = 1.0  # kg
DEFAULT_INERTIA = 0.01  # kg m^2, isotropic
DEFAULT_K_POS = 60.0  # N/m, deliberately low
DEFAULT_K_ROT = 4.0  # N m / rad, deliberately low


def _check_spd_block(name, M, size):
    M = np.asarray(M, dtype=float)
    if M.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}")
    if np.max(np.abs(M - M.T)) > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass
class ImpedanceGains:
    """Position/orientation stiffness plus a block-diagonal 6x6 damping.

    The wrench law uses the damping's linear and angular 3x3 blocks; the
    cross blocks must be zero.
    """

    k_pos: np.ndarray
    k_rot: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        self.k_pos = _check_spd_block("k_pos", self.k_pos, 3)
        self.k_rot = _check_spd_block("k_rot", self.k_rot, 3)
        self.damping = _check_spd_block("damping", self.damping, 6)
        if np.max(np.abs(self.damping[:3, 3:])) > 0 or np.max(np.abs(self.damping[3:, :3])) > 0:
            raise ValueError("damping cross blocks must be zero")

    @property
    def d_lin(self) -> np.ndarray:
        return self.damping[:3, :3]

    @property
    def d_ang(self) -> np.ndarray:
        return self.damping[3:, 3:]

    @staticmethod
    def critically_damped(
        k_pos: float = DEFAULT_K_POS,
        k_rot: float = DEFAULT_K_ROT,
        mass: float = DEFAULT_MASS,
        inertia: float = DEFAULT_INERTIA,
    ) -> "ImpedanceGains":
        d = np.zeros((6, 6))
        d[:3, :3] = 2.0 * np.sqrt(k_pos * mass) * np.eye(3)
        d[3:, 3:] = 2.0 * np.sqrt(k_rot * inertia) * np.eye(3)
        return ImpedanceGains(
            k_pos=k_pos * np.eye(3), k_rot=k_rot * np.eye(3), damping=d
        )


@dataclass
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        self.torque = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("non-finite wrench")

    @staticmethod
    def zero() -> "Wrench":
        return Wrench()


@dataclass
class PlantState:
    """Pose plus twist (linear m/s, angular rad/s) of the controlled body."""

    pose: Pose
    twist: np.ndarray = field(default_factory=lambda: np.zeros(6))
    mass: float = DEFAULT_MASS
    inertia: np.ndarray = field(default_factory=lambda: DEFAULT_INERTIA * np.eye(3))

    def __post_init__(self):
        self.twist = np.asarray(self.twist, dtype=float).reshape(6)
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if not np.all(np.isfinite(self.twist)):
            raise ValueError("non-finite twist")

    @staticmethod
    def at_rest(pose: Pose, mass: float = DEFAULT_MASS, inertia: float = DEFAULT_INERTIA) -> "PlantState":
        return PlantState(pose=pose.copy(), twist=np.zeros(6), mass=mass, inertia=inertia * np.eye(3))


def impedance_wrench(state: PlantState, setpoint: Pose, gains: ImpedanceGains) -> Wrench:
    """Virtual wrench pulling the body toward the setpoint.

    force  = K_p (p_des - p) - D_lin v
    torque = K_q (q_des (-) q) - D_ang w,  with (-) the axis-angle difference.
    """
    p_err = setpoint.p - state.pose.p
    rot_err = quat_diff_axis_angle(setpoint.q, state.pose.q)
    force = gains.k_pos @ p_err - gains.d_lin @ state.twist[:3]
    torque = gains.k_rot @ rot_err - gains.d_ang @ state.twist[3:]
    return Wrench(force=force, torque=torque)


_NO_CORNERS = np.zeros((8, 3))


def step(
    state: PlantState,
    setpoint: Pose,
    gains: ImpedanceGains,
    external: Wrench | None = None,
    dt: float = DT,
) -> PlantState:
    """One semi-implicit Euler step under impedance plus external wrench.

    Velocity integrates before position (symplectic flavour, stable under
    stiff contact); the quaternion advances through the exponential map and
    is renormalized every step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    external = external or Wrench.zero()
    inv_inertia = np.linalg.inv(state.inertia)
    p, q, v, w, ok, _, _, bad = _kernels.run_substeps(
        state.pose.p,
        state.pose.q,
        state.twist[:3].copy(),
        state.twist[3:].copy(),
        state.mass,
        inv_inertia,
        gains.k_pos,
        gains.k_rot,
        gains.d_lin.copy(),
        gains.d_ang.copy(),
        setpoint.p,
        setpoint.q,
        external.force,
        external.torque,
        _NO_CORNERS,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        False,
        1,
        dt,
    )
    if not ok:
        raise FloatingPointError(f"non-finite acceleration; total force was {bad}")
    new = PlantState(
        pose=Pose(p, q), twist=np.concatenate([v, w]), mass=state.mass, inertia=state.inertia
    )
    return new
