"""Desk-scale lab for a three-chain parallel-leg hopping robot.

Subpackages cover the leg kinematics (parallel mechanism and its serial
template), the torque-level conversion between the two joint spaces, a
fixed-timestep hopping simulator, baseline and learned controllers, and a
rollout service for external trainers.
"""

from hopperlab.kinematics import (
    ChainGeometry,
    DegenerateError,
    KinematicsError,
    ParallelJointState,
    SerialJointState,
    SingularError,
    UnreachableError,
    fk_parallel,
    fk_serial,
    ik_parallel,
    ik_serial,
    jacobian_parallel,
    jacobian_serial,
    knee_position,
)
from hopperlab.conversion import (
    ConversionMode,
    JointTorques,
    PdGains,
    joint_target_mapping,
    parallel_to_serial_torque,
    pd_torque,
    serial_to_parallel_state,
)

__version__ = "0.1.0"
