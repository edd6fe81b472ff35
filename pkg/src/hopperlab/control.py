"""Gait phase clock, observation assembly, reward, and the foot-placement baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hopperlab.conversion import serial_to_parallel_state
from hopperlab.kinematics import (
    ChainGeometry,
    KinematicsError,
    clamp_foot_target,
    fk_serial,
    ik_parallel,
)
from hopperlab.rotations import quat_to_matrix
from hopperlab.sim import HopperSim

TWO_PI = 2.0 * math.pi

OBSERVATION_DIM = 17
# layout: hip angles (3), roll-pitch-yaw (3), base angular velocity (3),
#         cos(phase), sin(phase), commanded vx vy, gait period, previous action (3)


@dataclass
class PhaseClock:
    """Sawtooth gait clock running from -2*pi to 2*pi over one period.

    Negative phase schedules stance, positive phase schedules swing.
    """

    period: float
    phase: float = -TWO_PI

    def advance(self, dt: float):
        self.phase += 2.0 * TWO_PI * dt / self.period
        while self.phase >= TWO_PI:
            self.phase -= 2.0 * TWO_PI

    @property
    def stance_scheduled(self) -> bool:
        return self.phase < 0.0

    @property
    def stance_progress(self) -> float:
        """0 at scheduled touchdown, 1 at scheduled liftoff (clamped in swing)."""
        return min(1.0, max(0.0, (self.phase + TWO_PI) / TWO_PI))

    @property
    def swing_progress(self) -> float:
        """0 at scheduled liftoff, 1 at scheduled touchdown (clamped in stance)."""
        return min(1.0, max(0.0, self.phase / TWO_PI))

    def copy(self) -> "PhaseClock":
        return PhaseClock(self.period, self.phase)


@dataclass(frozen=True)
class Command:
    """Desired horizontal velocity (m/s) and gait period (s)."""

    vx: float = 0.0
    vy: float = 0.0
    period: float = 0.4

    def __post_init__(self):
        if math.hypot(self.vx, self.vy) > 0.6 + 1e-9:
            raise ValueError("commanded speed exceeds the 0.6 m/s training range")
        if not 0.3 <= self.period <= 0.5:
            raise ValueError("gait period outside the 0.3-0.5 s training range")

    @property
    def v_xy(self) -> np.ndarray:
        return np.array([self.vx, self.vy])


def build_observation(
    geom: ChainGeometry,
    sim: HopperSim,
    clock: PhaseClock,
    command: Command,
    prev_action: np.ndarray,
) -> np.ndarray:
    """Assemble the 17-entry policy input in its frozen layout."""
    parallel = serial_to_parallel_state(geom, sim.leg)
    rpy = sim.body.rpy
    obs = np.concatenate(
        [
            parallel.q,
            rpy,
            sim.body.ang_vel,
            [math.cos(clock.phase), math.sin(clock.phase)],
            command.v_xy,
            [command.period],
            np.asarray(prev_action, dtype=float).reshape(3),
        ]
    )
    if obs.shape != (OBSERVATION_DIM,) or not np.all(np.isfinite(obs)):
        raise ValueError("observation is malformed")
    return obs


@dataclass(frozen=True)
class RewardWeights:
    tracking: float = 1.0
    phase: float = 0.5
    upright: float = 0.3
    action_rate: float = 0.01
    torque: float = 2e-4
    tracking_sigma: float = 0.25
    upright_sigma: float = 0.2


def reward(
    sim: HopperSim,
    clock: PhaseClock,
    command: Command,
    action: np.ndarray,
    prev_action: np.ndarray,
    serial_torques: np.ndarray,
    weights: RewardWeights = RewardWeights(),
):
    """Scalar reward plus its per-term breakdown (terms sum to the scalar)."""
    v_err = sim.body.lin_vel[:2] - command.v_xy
    rpy = sim.body.rpy
    phase_match = 1.0 if sim.contact.in_contact == clock.stance_scheduled else 0.0
    action = np.asarray(action, dtype=float)
    prev_action = np.asarray(prev_action, dtype=float)
    tau = np.asarray(serial_torques, dtype=float)
    parts = {
        "tracking": weights.tracking * math.exp(-float(v_err @ v_err) / weights.tracking_sigma ** 2),
        "phase": weights.phase * phase_match,
        "upright": weights.upright * math.exp(-(rpy[0] ** 2 + rpy[1] ** 2) / weights.upright_sigma ** 2),
        "action_rate": -weights.action_rate * float((action - prev_action) @ (action - prev_action)),
        "torque": -weights.torque * float(tau @ tau),
    }
    return float(sum(parts.values())), parts


@dataclass(frozen=True)
class RaibertGains:
    """Foot-placement baseline tuning.

    velocity_gain is the classic placement correction (s); thrust_extension
    lengthens the leg around mid-stance to restock hop energy and
    swing_retraction shortens it mid-swing so touchdown locks to the
    schedule.  Attitude gains map body tilt to horizontal foot offsets while
    the foot is loaded.
    """

    velocity_gain: float = 0.02
    thrust_extension: float = 0.06
    swing_retraction: float = 0.02
    attitude_kp: float = 0.03
    attitude_kd: float = 0.005
    attitude_limit: float = 0.025
    neutral_gain: float = 0.5
    placement_limit: float = 0.06
    speed_match: float = 0.0  # 0..1, how strongly the swing sweep matches ground speed
    sweep_lead: float = 0.5  # fraction of a control period the stance target leads the sweep


class RaibertController:
    """Phase-scheduled foot placement with stance thrust and attitude offsets.

    Swing: place the foot ahead of the hip by half a stance sweep plus a
    correction proportional to the velocity error, expressed in the world
    horizontal plane and rotated into the body frame so the leg aims at the
    ground regardless of body tilt.  The leg retracts mid-swing and is back
    to full length at the scheduled touchdown.
    Stance: push the leg out around mid-stance (only while actually loaded,
    so a late landing does not waste the thrust stroke in the air) and bias
    the foot under the lean to generate restoring contact moments.
    """

    def __init__(self, geom: ChainGeometry, gains: RaibertGains = RaibertGains()):
        self.geom = geom
        self.gains = gains
        self.reset()

    def reset(self):
        self._in_contact = False
        self._touchdown_time = None
        self._liftoff_time = None
        self._stance_estimate = 0.12  # bootstrapped, then tracks measured stances
        self._thrust = self.gains.thrust_extension
        self._hops = 0

    def _update_gait_state(self, sim: HopperSim, command: Command):
        """Track stance/flight durations and regulate thrust toward the period.

        A hop that flies shorter than the schedule gets more push next stance
        and vice versa, which locks the hop interval to the commanded period
        across the randomized dynamics draws.
        """
        contact = sim.contact.in_contact
        if contact and not self._in_contact:
            if self._liftoff_time is not None:
                flight = sim.time - self._liftoff_time
                desired = command.period - self._stance_estimate
                if 0.0 < flight < 1.0:
                    rate = 1.0 if self._hops < 3 else 0.5
                    self._thrust *= 1.0 + rate * (desired - flight)
                    ceiling = self.geom.ext_max - self.geom.nominal_ext - 0.01
                    self._thrust = min(max(self._thrust, 0.01), min(0.12, ceiling))
            self._touchdown_time = sim.time
            self._hops += 1
        elif not contact and self._in_contact:
            if self._touchdown_time is not None:
                measured = sim.time - self._touchdown_time
                if 0.02 < measured < 0.5:
                    self._stance_estimate += 0.7 * (measured - self._stance_estimate)
                    self._stance_estimate = min(max(self._stance_estimate, 0.08), 0.20)
            self._liftoff_time = sim.time
        self._in_contact = contact

    def __call__(self, sim: HopperSim, clock: PhaseClock, command: Command) -> np.ndarray:
        geom, gains = self.geom, self.gains
        self._update_gait_state(sim, command)
        nominal = geom.nominal_ext
        rot = quat_to_matrix(sim.body.quat)
        v = sim.body.lin_vel[:2]
        v_err = v - command.v_xy

        if sim.contact.in_contact:
            rpy = sim.body.rpy
            omega = rot @ sim.body.ang_vel  # world-frame angular velocity
            # torque the body against the stuck foot: for +pitch the leg must
            # push the foot backward so ground friction pushes it forward,
            # giving a restoring moment with the leg length as lever.  The
            # offsets ride on the foot's current sweep position so the leg
            # never fights the body passing over the anchored foot.
            off_x = -gains.attitude_kp * rpy[1] - gains.attitude_kd * omega[1]
            off_y = gains.attitude_kp * rpy[0] + gains.attitude_kd * omega[0]
            off_x = min(max(off_x, -gains.attitude_limit), gains.attitude_limit)
            off_y = min(max(off_y, -gains.attitude_limit), gains.attitude_limit)
            foot_world = rot @ fk_serial(self.geom, sim.leg.q)
            length = nominal
            if clock.stance_scheduled:
                length += self._thrust * math.sin(math.pi * clock.stance_progress)
            # holding a body-fixed target between control updates drags the
            # anchored foot; lead the hold past the sweep midpoint instead
            lead = gains.sweep_lead * 0.02
            target_world = np.array(
                [foot_world[0] + off_x - v[0] * lead, foot_world[1] + off_y - v[1] * lead, 0.0]
            )
            horiz_limit = 0.8 * length
        else:
            # airborne: aim the foot at the landing point whatever the clock
            # says; retraction for ground clearance only during scheduled swing
            step = gains.neutral_gain * v * self._stance_estimate + gains.velocity_gain * v_err
            step = step + gains.speed_match * v * (0.5 * command.period) * (1.0 - clock.swing_progress)
            target_world = np.array([step[0], step[1], 0.0])
            length = nominal
            if not clock.stance_scheduled:
                length -= gains.swing_retraction * math.sin(math.pi * clock.swing_progress)
            horiz_limit = gains.placement_limit

        horiz = math.hypot(target_world[0], target_world[1])
        if horiz > horiz_limit:
            target_world[:2] *= horiz_limit / horiz
            horiz = horiz_limit
        target_world[2] = -math.sqrt(max(1e-6, length * length - horiz * horiz))
        target_body = rot.T @ target_world
        target_body = clamp_foot_target(geom, target_body)
        try:
            return ik_parallel(geom, target_body)
        except KinematicsError:
            return ik_parallel(geom, np.array([0.0, 0.0, -nominal]))
