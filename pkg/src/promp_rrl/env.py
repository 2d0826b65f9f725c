"""The 3D block-insertion task: scene geometry, contact, reward, termination.

Scene layout (target frame): a solid plate occupies everything below
``z = depth`` except a rectangular channel (|x| < cx, |y| < cy, floor at
z = 0). The grasped block is a cuboid of two 3.5 cm cube modules
(0.070 x 0.035 x 0.035 m), so its cross-section is rectangular and a yawed
block cannot enter: the task is orientation sensitive. Total clearance
between block and channel is ~3 mm; a small chamfer bevels the opening.

The simulated plant *is* the grasped block (grasp transform identity by
default), driven by the impedance law of :mod:`.plant` at 1 kHz while the
policy commands setpoints at 10 Hz (100 substeps per step). Contact is a
corner-point penalty model evaluated every substep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Pose, quat_diff_axis_angle
from .plant import DT, ImpedanceGains, PlantState, Wrench

POSITION_WEIGHT = 1.0  # per-axis absolute position error weight
ORIENTATION_WEIGHT = 50.0  # axis-angle magnitude weight
SUCCESS_POS_TOL = 0.005  # m, Euclidean
SUCCESS_ROT_TOL = math.radians(5.0)  # rad, axis-angle magnitude
HORIZON = 100  # policy steps per episode
SUBSTEPS = 100  # plant substeps per policy step (1 kHz / 10 Hz)


@dataclass
class InsertionScene:
    """Channel, block and contact parameters, all in the target frame."""

    channel_halfwidths: np.ndarray  # interior [cx, cy], m
    depth: float  # plate top height, m
    tolerance: float  # total block/channel clearance, m
    chamfer: float  # opening bevel height, m
    goal: Pose
    k_contact: float  # N/m
    d_contact: float  # N s/m
    block_halfwidths: np.ndarray  # [bx, by, bz], m

    def __post_init__(self):
        self.channel_halfwidths = np.asarray(self.channel_halfwidths, dtype=float).reshape(2)
        self.block_halfwidths = np.asarray(self.block_halfwidths, dtype=float).reshape(3)
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if np.any(self.block_halfwidths <= 0) or np.any(self.channel_halfwidths <= 0):
            raise ValueError("geometry half-widths must be positive")
        gx, gy, gz = self.goal.p
        cx, cy = self.channel_halfwidths
        if abs(gx) >= cx or abs(gy) >= cy or not 0.0 <= gz <= self.depth:
            raise ValueError("goal pose must lie inside the channel")

    @property
    def corners(self) -> np.ndarray:
        """(8, 3) block corner offsets in the block frame."""
        bx, by, bz = self.block_halfwidths
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
        )
        return signs * np.array([bx, by, bz])

    @staticmethod
    def default(tolerance: float = 0.003) -> "InsertionScene":
        block = np.array([0.035, 0.0175, 0.0175])
        return InsertionScene(
            channel_halfwidths=block[:2] + tolerance / 2.0,
            depth=0.035,
            tolerance=tolerance,
            chamfer=0.002,
            goal=Pose(np.array([0.0, 0.0, 0.0175])),
            k_contact=5000.0,
            d_contact=50.0,
            block_halfwidths=block,
        )

    def save(self, path) -> None:
        payload = {
            "channel_halfwidths": self.channel_halfwidths.tolist(),
            "depth": self.depth,
            "tolerance": self.tolerance,
            "chamfer": self.chamfer,
            "goal": {"p": self.goal.p.tolist(), "q": self.goal.q.tolist()},
            "k_contact": self.k_contact,
            "d_contact": self.d_contact,
            "block_halfwidths": self.block_halfwidths.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    @staticmethod
    def load(path) -> "InsertionScene":
        with open(path) as fh:
            payload = json.load(fh)
        required = {"channel_halfwidths", "depth", "tolerance", "chamfer", "goal",
                    "k_contact", "d_contact"}
        missing = required - payload.keys()
        if missing:
            raise ValueError(f"scene file missing fields: {sorted(missing)}")
        default_block = InsertionScene.default().block_halfwidths
        return InsertionScene(
            channel_halfwidths=np.array(payload["channel_halfwidths"], dtype=float),
            depth=float(payload["depth"]),
            tolerance=float(payload["tolerance"]),
            chamfer=float(payload["chamfer"]),
            goal=Pose(np.array(payload["goal"]["p"]), np.array(payload["goal"]["q"])),
            k_contact=float(payload["k_contact"]),
            d_contact=float(payload["d_contact"]),
            block_halfwidths=np.array(payload.get("block_halfwidths", default_block), dtype=float),
        )


def reward(pose: Pose, goal: Pose) -> float:
    """Dense per-step reward: minus L1 position error minus weighted
    orientation error magnitude. Zero exactly at the goal, negative elsewhere."""
    pos_term = float(np.sum(np.abs(goal.p - pose.p)))
    rot_term = float(np.linalg.norm(quat_diff_axis_angle(goal.q, pose.q)))
    return -POSITION_WEIGHT * pos_term - ORIENTATION_WEIGHT * rot_term


def is_success(pose: Pose, goal: Pose) -> bool:
    """Within 5 mm (Euclidean) and 5 degrees (axis-angle) of the goal, strict."""
    pos_err = float(np.linalg.norm(pose.p - goal.p))
    rot_err = float(np.linalg.norm(quat_diff_axis_angle(goal.q, pose.q)))
    return pos_err < SUCCESS_POS_TOL and rot_err < SUCCESS_ROT_TOL


def contact_wrench(scene: InsertionScene, pose: Pose, twist=None) -> Wrench:
    """Penalty wrench from the channel on a block at the given pose.

    ``twist`` feeds the damper term; omitted means a static query.
    """
    twist = np.zeros(6) if twist is None else np.asarray(twist, dtype=float).reshape(6)
    R = _kernels.quat_to_matrix(pose.q)
    f, tau, _, _ = _kernels.contact(
        pose.p,
        R,
        twist[:3].copy(),
        twist[3:].copy(),
        scene.corners,
        scene.channel_halfwidths[0],
        scene.channel_halfwidths[1],
        scene.depth,
        scene.chamfer,
        scene.k_contact,
        scene.d_contact,
    )
    return Wrench(force=f, torque=tau)


@dataclass
class StepResult:
    obs: np.ndarray  # [p (3), q (4)] of the block in the target frame
    reward: float
    done: bool
    success: bool
    info: dict = field(default_factory=dict)


class InsertionEnv:
    """Episodic insertion MDP around the impedance plant.

    One instance is strictly sequential; run separate instances (separate
    seeds) for parallel sweeps.
    """

    def __init__(
        self,
        scene: InsertionScene | None = None,
        gains: ImpedanceGains | None = None,
        mass: float = 1.0,
        inertia: float = 0.01,
        horizon: int = HORIZON,
        substeps: int = SUBSTEPS,
        dt: float = DT,
    ):
        self.scene = scene or InsertionScene.default()
        self.gains = gains or ImpedanceGains.critically_damped(mass=mass, inertia=inertia)
        self.mass = mass
        self.inertia = inertia * np.eye(3)
        self._inv_inertia = np.linalg.inv(self.inertia)
        self.horizon = horizon
        self.substeps = substeps
        self.dt = dt
        self.state: PlantState | None = None
        self.t = 0
        self._done = True

    def reset(self, start: Pose | None = None, *, sampler=None, rng=None) -> np.ndarray:
        """Place the block at rest at ``start`` (or a sampled pose) and zero the clock."""
        if start is None:
            if sampler is None:
                raise ValueError("reset needs a start pose or a sampler")
            start = sampler(rng)
        self.state = PlantState(
            pose=start.copy(), twist=np.zeros(6), mass=self.mass, inertia=self.inertia
        )
        self.t = 0
        self._done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return self.state.pose.as_vec()

    def step(self, action: Pose, beta: int = 0) -> StepResult:
        """Hold the setpoint for one policy period (100 plant substeps with
        contact injected every substep), then score the resulting pose."""
        if self._done or self.state is None:
            raise RuntimeError("step() called on a finished episode; reset() first")
        p, q, v, w, ok, hit, max_pen, bad = _kernels.run_substeps(
            self.state.pose.p,
            self.state.pose.q,
            self.state.twist[:3].copy(),
            self.state.twist[3:].copy(),
            self.mass,
            self._inv_inertia,
            self.gains.k_pos,
            self.gains.k_rot,
            np.ascontiguousarray(self.gains.d_lin),
            np.ascontiguousarray(self.gains.d_ang),
            action.p,
            action.q,
            np.zeros(3),
            np.zeros(3),
            self.scene.corners,
            self.scene.channel_halfwidths[0],
            self.scene.channel_halfwidths[1],
            self.scene.depth,
            self.scene.chamfer,
            self.scene.k_contact,
            self.scene.d_contact,
            True,
            self.substeps,
            self.dt,
        )
        if not ok:
            raise FloatingPointError(f"non-finite acceleration; total force was {bad}")
        self.state = PlantState(
            pose=Pose(p, q), twist=np.concatenate([v, w]), mass=self.mass, inertia=self.inertia
        )
        self.t += 1
        pose = self.state.pose
        succ = is_success(pose, self.scene.goal)
        done = succ or self.t >= self.horizon
        self._done = done
        return StepResult(
            obs=self.observation(),
            reward=reward(pose, self.scene.goal),
            done=done,
            success=succ,
            info={"beta": beta, "contact": bool(hit), "max_penetration": float(max_pen)},
        )
