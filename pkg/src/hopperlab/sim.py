"""Fixed-timestep dynamics of the floating-base hopper with the template leg.

Model summary:
  - The body is a single rigid mass; the leg is treated as massless for
    momentum purposes.  Ground force reaches the body only through the foot
    point, and the commanded joint torques reach the ground only through the
    leg Jacobian, so force transmission matches the static leg equations.
  - Leg joints carry a small virtual inertia and integrate second-order
    dynamics driven by the commanded serial torques plus the contact
    back-drive J^T f.  In flight the contact term vanishes and the body is
    ballistic; leg motion never propels the body.
  - Contact is a compliant unilateral spring-damper at the point foot with a
    tangential anchor spring clamped to the friction cone (stick-slip).

Integration: velocities update first (semi-implicit); the translational
position update uses the velocity midpoint, which reproduces constant-gravity
parabolas exactly.  Orientation integrates by the quaternion exponential and
is renormalized every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from hopperlab.conversion import JointTorques
from hopperlab.kinematics import (
    ChainGeometry,
    ParallelJointState,
    SerialJointState,
    fk_serial,
    ik_parallel,
    jacobian_serial,
)
from hopperlab.rotations import (
    IDENTITY_QUAT,
    cross3,
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    quat_to_rpy,
)


class NumericalDivergedError(Exception):
    """State magnitude exploded; the integration is no longer meaningful."""


class SimFault(Exception):
    """Episode-terminating simulator fault with a machine-readable reason."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


@dataclass
class BodyState:
    """Floating-base pose and twist; quaternion is wxyz, body -> world."""

    pos: np.ndarray
    quat: np.ndarray
    lin_vel: np.ndarray  # world frame
    ang_vel: np.ndarray  # body frame

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(3)
        self.quat = np.asarray(self.quat, dtype=float).reshape(4)
        self.lin_vel = np.asarray(self.lin_vel, dtype=float).reshape(3)
        self.ang_vel = np.asarray(self.ang_vel, dtype=float).reshape(3)

    def copy(self) -> "BodyState":
        return BodyState(self.pos.copy(), self.quat.copy(), self.lin_vel.copy(), self.ang_vel.copy())

    @property
    def rpy(self) -> np.ndarray:
        return quat_to_rpy(self.quat)


@dataclass
class ContactState:
    in_contact: bool
    penetration: float
    foot_world: np.ndarray
    normal_force: float
    force_world: np.ndarray

    def copy(self) -> "ContactState":
        return ContactState(
            self.in_contact, self.penetration, self.foot_world.copy(), self.normal_force, self.force_world.copy()
        )


@dataclass(frozen=True)
class Terrain:
    """Planar terrain: flat ground or an infinite slope rising along +x."""

    kind: str = "flat"  # "flat" | "slope"
    slope_deg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("flat", "slope"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "flat" and self.slope_deg != 0.0:
            raise ValueError("flat terrain cannot have a slope angle")

    @staticmethod
    def parse(text: str) -> "Terrain":
        """Accepts 'flat' or 'slope:DEG'."""
        if text == "flat":
            return Terrain()
        if text.startswith("slope:"):
            return Terrain("slope", float(text.split(":", 1)[1]))
        raise ValueError(f"unknown terrain spec {text!r}")

    def height(self, x: float, y: float) -> float:
        if self.kind == "flat":
            return 0.0
        return math.tan(math.radians(self.slope_deg)) * x

    @property
    def normal(self) -> np.ndarray:
        if self.kind == "flat":
            return np.array([0.0, 0.0, 1.0])
        a = math.radians(self.slope_deg)
        return np.array([-math.sin(a), 0.0, math.cos(a)])


@dataclass(frozen=True)
class RandomizationRanges:
    mass_scale: tuple = (0.8, 1.2)
    friction: tuple = (0.4, 1.0)
    contact_stiffness_scale: tuple = (0.7, 1.3)
    gain_scale: tuple = (0.9, 1.1)


@dataclass(frozen=True)
class ActiveParams:
    """Per-episode dynamics draw; also the critic's privileged parameters."""

    body_mass: float
    friction: float
    contact_stiffness: float
    gain_scale: float


@dataclass(frozen=True)
class SimConfig:
    dt_physics: float = 0.002
    control_decimation: int = 10
    body_mass: float = 2.5
    body_inertia: tuple = (0.02, 0.02, 0.03)
    gravity: float = 9.81
    contact_stiffness: float = 5000.0  # k_n, N/m
    contact_damping: float = 50.0  # c_n, N s/m
    tangent_stiffness: float = 1500.0
    tangent_damping: float = 30.0
    friction: float = 0.8
    leg_inertia: tuple = (0.02, 0.02, 0.25)  # roll, pitch (kg m^2), ext (kg)
    tau_max_parallel: float = 12.0
    tau_max_serial: tuple = (12.0, 12.0, 150.0)
    drop_height: float = 0.02
    diverge_limit: float = 1e6
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)

    def __post_init__(self):
        if abs(self.dt_physics * self.control_decimation - 0.02) > 1e-12:
            raise ValueError("physics step times decimation must equal the 0.02 s policy period")
        if self.body_mass <= 0.0 or self.gravity <= 0.0:
            raise ValueError("mass and gravity must be positive")

    @property
    def policy_dt(self) -> float:
        return self.dt_physics * self.control_decimation


def contact_force(
    foot_world: np.ndarray,
    foot_vel_world: np.ndarray,
    terrain: Terrain,
    cfg: SimConfig,
    anchor: np.ndarray | None = None,
    stiffness: float | None = None,
    friction: float | None = None,
):
    """Ground force on the foot; returns (force, contact_state, new_anchor).

    Normal: max(0, k_n * penetration - c_n * v_n) along the terrain normal,
    where v_n is the foot velocity along the normal (negative on approach).
    Tangential: spring-damper toward the touchdown anchor, clamped to
    mu * F_n; on clamping the anchor slides so the spring matches the clamp.
    """
    k_n = cfg.contact_stiffness if stiffness is None else stiffness
    mu = cfg.friction if friction is None else friction
    n = terrain.normal
    foot = np.asarray(foot_world, dtype=float)
    # both terrains are planes through the origin, so signed distance is n . p
    penetration = max(0.0, float(-(n @ foot)))
    if penetration <= 0.0:
        state = ContactState(False, 0.0, foot.copy(), 0.0, np.zeros(3))
        return np.zeros(3), state, None

    v = np.asarray(foot_vel_world, dtype=float)
    v_n = float(n @ v)
    f_n = max(0.0, k_n * penetration - cfg.contact_damping * v_n)

    foot_on_plane = foot + penetration * n
    if anchor is None:
        anchor = foot_on_plane.copy()
    disp_t = foot_on_plane - anchor
    disp_t = disp_t - (n @ disp_t) * n
    v_t = v - (n @ v) * n
    f_t = -cfg.tangent_stiffness * disp_t - cfg.tangent_damping * v_t
    f_t_max = mu * f_n
    mag = float(np.linalg.norm(f_t))
    if mag > f_t_max:
        f_t = f_t * (f_t_max / mag) if mag > 0.0 else np.zeros(3)
        # slide the anchor so the spring term accounts for the clamped force
        anchor = foot_on_plane + (f_t + cfg.tangent_damping * v_t) / cfg.tangent_stiffness
    force = f_n * n + f_t
    state = ContactState(True, penetration, foot.copy(), f_n, force)
    return force, state, anchor


def integrate_body(state: BodyState, force_world: np.ndarray, point_world: np.ndarray, cfg: SimConfig, mass: float):
    """One rigid-body step under gravity plus one external force at a point.

    Mutates state in place.  Midpoint position update keeps torque-free flight
    on the exact ballistic parabola.
    """
    dt = cfg.dt_physics
    gravity = np.array([0.0, 0.0, -cfg.gravity])
    acc = force_world / mass + gravity
    v_new = state.lin_vel + dt * acc
    state.pos += dt * 0.5 * (state.lin_vel + v_new)
    state.lin_vel = v_new

    inertia = np.asarray(cfg.body_inertia)
    r = point_world - state.pos
    torque_body = quat_to_matrix(state.quat).T @ cross3(r, force_world)
    omega = state.ang_vel
    omega_dot = (torque_body - cross3(omega, inertia * omega)) / inertia
    state.ang_vel = omega + dt * omega_dot
    state.quat = quat_normalize(quat_multiply(state.quat, quat_from_rotvec(state.ang_vel * dt)))


class HopperSim:
    """Owns the body, the template leg, the contact anchor and the clock.

    One instance per rollout; instances share nothing, so workers may run any
    number of them in parallel.
    """

    def __init__(self, geom: ChainGeometry, cfg: SimConfig, terrain: Terrain | None = None):
        self.geom = geom
        self.cfg = cfg
        self.terrain = terrain or Terrain()
        self.body = BodyState(np.zeros(3), IDENTITY_QUAT.copy(), np.zeros(3), np.zeros(3))
        self.leg = SerialJointState(np.array([0.0, 0.0, geom.nominal_ext]))
        self.params = ActiveParams(cfg.body_mass, cfg.friction, cfg.contact_stiffness, 1.0)
        self.contact = ContactState(False, 0.0, np.zeros(3), 0.0, np.zeros(3))
        self._anchor = None
        self.time = 0.0

    def reset(self, seed: int, randomize: bool = True, command=None):
        """Settle the robot slightly above the terrain at the stance pose.

        Returns (body state copy, parallel joint state); the randomization
        draw is a pure function of the seed.
        """
        rng = np.random.default_rng(seed)
        rr = self.cfg.randomization
        if randomize:
            self.params = ActiveParams(
                body_mass=self.cfg.body_mass * rng.uniform(*rr.mass_scale),
                friction=rng.uniform(*rr.friction),
                contact_stiffness=self.cfg.contact_stiffness * rng.uniform(*rr.contact_stiffness_scale),
                gain_scale=rng.uniform(*rr.gain_scale),
            )
        else:
            self.params = ActiveParams(self.cfg.body_mass, self.cfg.friction, self.cfg.contact_stiffness, 1.0)
        base_z = self.terrain.height(0.0, 0.0) + self.geom.nominal_ext + self.cfg.drop_height
        self.body = BodyState(np.array([0.0, 0.0, base_z]), IDENTITY_QUAT.copy(), np.zeros(3), np.zeros(3))
        self.leg = SerialJointState(np.array([0.0, 0.0, self.geom.nominal_ext]))
        self.contact = ContactState(False, 0.0, self.foot_world(), 0.0, np.zeros(3))
        self._anchor = None
        self.time = 0.0
        return self.body.copy(), ParallelJointState(ik_parallel(self.geom, fk_serial(self.geom, self.leg.q)))

    def foot_world(self) -> np.ndarray:
        rot = quat_to_matrix(self.body.quat)
        return self.body.pos + rot @ fk_serial(self.geom, self.leg.q)

    def foot_velocity_world(self) -> np.ndarray:
        rot = quat_to_matrix(self.body.quat)
        foot_body = fk_serial(self.geom, self.leg.q)
        joint_part = jacobian_serial(self.geom, self.leg.q) @ self.leg.qd
        return self.body.lin_vel + rot @ (cross3(self.body.ang_vel, foot_body) + joint_part)

    def step(self, serial_torques: JointTorques) -> BodyState:
        """Advance one physics step under the given template joint torques."""
        if serial_torques.frame != "serial":
            raise ValueError("simulator consumes serial-frame torques")
        cfg = self.cfg
        tau = np.clip(serial_torques.tau, -np.asarray(cfg.tau_max_serial), np.asarray(cfg.tau_max_serial))

        rot = quat_to_matrix(self.body.quat)
        foot_body = fk_serial(self.geom, self.leg.q)
        foot_w = self.body.pos + rot @ foot_body
        js = jacobian_serial(self.geom, self.leg.q)
        foot_v_w = self.body.lin_vel + rot @ (cross3(self.body.ang_vel, foot_body) + js @ self.leg.qd)

        force, self.contact, self._anchor = contact_force(
            foot_w,
            foot_v_w,
            self.terrain,
            cfg,
            anchor=self._anchor,
            stiffness=self.params.contact_stiffness,
            friction=self.params.friction,
        )

        integrate_body(self.body, force, foot_w, cfg, self.params.body_mass)

        # leg joints: commanded torques plus contact back-drive, virtual inertia
        inertia = np.asarray(cfg.leg_inertia)
        qdd = (tau + js.T @ (rot.T @ force)) / inertia
        self.leg.qd = self.leg.qd + cfg.dt_physics * qdd
        self.leg.q = self.leg.q + cfg.dt_physics * self.leg.qd
        self._enforce_leg_limits()

        self.time += cfg.dt_physics
        if (
            np.max(np.abs(self.body.pos)) > cfg.diverge_limit
            or np.max(np.abs(self.body.lin_vel)) > cfg.diverge_limit
            or np.max(np.abs(self.leg.qd)) > cfg.diverge_limit
        ):
            raise NumericalDivergedError(f"simulation diverged at t = {self.time:.3f} s")
        return self.body

    def _enforce_leg_limits(self):
        geom = self.geom
        lo = np.array([-geom.tilt_max, -geom.tilt_max, geom.ext_min])
        hi = np.array([geom.tilt_max, geom.tilt_max, geom.ext_max])
        below = self.leg.q < lo
        above = self.leg.q > hi
        self.leg.q = np.clip(self.leg.q, lo, hi)
        # kill velocity pointing further out of the stop
        self.leg.qd = np.where(below & (self.leg.qd < 0.0), 0.0, self.leg.qd)
        self.leg.qd = np.where(above & (self.leg.qd > 0.0), 0.0, self.leg.qd)

    def apply_perturbation(self, dv: np.ndarray):
        """Instantaneous base-velocity impulse."""
        self.body.lin_vel = self.body.lin_vel + np.asarray(dv, dtype=float).reshape(3)

    def height_above_terrain(self) -> float:
        return float(self.body.pos[2] - self.terrain.height(self.body.pos[0], self.body.pos[1]))

    def fallen(self, tilt_limit: float = 0.6, min_height: float = 0.05) -> bool:
        rpy = self.body.rpy
        return bool(abs(rpy[0]) > tilt_limit or abs(rpy[1]) > tilt_limit or self.height_above_terrain() < min_height)

    def energy(self) -> float:
        """Kinetic plus potential energy of the body (leg is massless)."""
        m = self.params.body_mass
        inertia = np.asarray(self.cfg.body_inertia)
        ke = 0.5 * m * float(self.body.lin_vel @ self.body.lin_vel)
        ke += 0.5 * float(self.body.ang_vel @ (inertia * self.body.ang_vel))
        return ke + m * self.cfg.gravity * float(self.body.pos[2])
