"""Torque-level bridge between the serial template and the parallel leg.

The control stack runs its PD law in parallel joint coordinates and hands the
simulator serial torques.  State goes serial -> parallel through the foot
point; torques come back parallel -> serial through the transposed Jacobian
pair, which preserves the foot force and therefore mechanical power.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from hopperlab.kinematics import (
    ChainGeometry,
    ParallelJointState,
    SerialJointState,
    fk_parallel,
    fk_serial,
    ik_jacobian_parallel,
    ik_parallel,
    ik_serial,
    jacobian_serial,
)


@dataclass(frozen=True)
class PdGains:
    """Proportional / derivative gains of the low-level joint PD."""

    kp: float = 20.0
    kd: float = 0.5

    def __post_init__(self):
        if self.kp <= 0.0:
            raise ValueError("kp must be positive")
        if self.kd < 0.0:
            raise ValueError("kd must be nonnegative")

    def scaled(self, factor: float) -> "PdGains":
        return PdGains(self.kp * factor, self.kd * factor)


class ConversionMode(str, Enum):
    TORQUE_MAPPING = "torque"
    JOINT_TARGET_MAPPING = "joint-target"


@dataclass
class JointTorques:
    """Joint torques tagged with the coordinate frame they act in."""

    tau: np.ndarray
    frame: str  # "parallel" or "serial"

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float).reshape(3)
        if self.frame not in ("parallel", "serial"):
            raise ValueError(f"unknown torque frame {self.frame!r}")


def clamp_torques(torques: JointTorques, limit) -> JointTorques:
    """Clamp each component to +-limit (scalar or per-joint); never flips sign."""
    limit = np.broadcast_to(np.asarray(limit, dtype=float), (3,))
    return JointTorques(np.clip(torques.tau, -limit, limit), torques.frame)


@dataclass
class ConversionBridge:
    """Shared kinematic quantities of one matched pose, computed once per step.

    m is the inverse parallel Jacobian (d ik / d foot) and js the serial
    Jacobian, both at the same foot point, so state and torque mappings reuse
    one evaluation.
    """

    foot: np.ndarray
    m: np.ndarray
    js: np.ndarray
    qp: np.ndarray
    qdp: np.ndarray

    def parallel_state(self) -> ParallelJointState:
        return ParallelJointState(self.qp, self.qdp)

    def torque_to_serial(self, torques: JointTorques) -> JointTorques:
        if torques.frame != "parallel":
            raise ValueError("expected parallel-frame torques")
        return JointTorques((self.m @ self.js).T @ torques.tau, "serial")


def bridge_state(geom: ChainGeometry, state: SerialJointState) -> ConversionBridge:
    x = fk_serial(geom, state.q)
    qp = ik_parallel(geom, x)
    m = ik_jacobian_parallel(geom, x)
    js = jacobian_serial(geom, state.q)
    return ConversionBridge(x, m, js, qp, m @ (js @ state.qd))


def serial_to_parallel_state(geom: ChainGeometry, state: SerialJointState) -> ParallelJointState:
    """Map template joints to hip-motor coordinates at the matched foot point."""
    return bridge_state(geom, state).parallel_state()


def pd_torque(
    target_q: np.ndarray,
    state: ParallelJointState,
    gains: PdGains,
    tau_max: float = 12.0,
) -> JointTorques:
    """PD law in parallel coordinates, clamped to the motor limit."""
    tau = gains.kp * (np.asarray(target_q, dtype=float) - state.q) - gains.kd * state.qd
    return clamp_torques(JointTorques(tau, "parallel"), tau_max)


def parallel_to_serial_torque(
    geom: ChainGeometry,
    torques: JointTorques,
    serial_state: SerialJointState,
) -> JointTorques:
    """Map parallel joint torques to template joint torques.

    Both Jacobians are evaluated at the same foot point (the template pose and
    its parallel image), so the mapping routes through a common foot force and
    conserves tau . qdot exactly.
    """
    return bridge_state(geom, serial_state).torque_to_serial(torques)


def foot_force_from_parallel(geom: ChainGeometry, torques: JointTorques, x: np.ndarray) -> np.ndarray:
    """Static foot force equivalent to parallel torques at foot position x."""
    if torques.frame != "parallel":
        raise ValueError("expected parallel-frame torques")
    return ik_jacobian_parallel(geom, x).T @ torques.tau


def joint_target_mapping(geom: ChainGeometry, target_parallel_q: np.ndarray) -> np.ndarray:
    """Kinematic remap of a parallel position target onto the template joints.

    Baseline mode only: the PD then runs directly in serial coordinates.
    """
    return ik_serial(geom, fk_parallel(geom, target_parallel_q))
