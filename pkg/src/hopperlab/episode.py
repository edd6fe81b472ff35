"""Episode orchestration: 50 Hz control over 500 Hz PD + conversion + physics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hopperlab.config import LabConfig
from hopperlab.control import Command, PhaseClock, RaibertController, build_observation, reward
from hopperlab.conversion import (
    ConversionMode,
    JointTorques,
    bridge_state,
    clamp_torques,
    pd_torque,
)
from hopperlab.kinematics import KinematicsError, joint_limits_clip
from hopperlab.policy import PolicyRuntime, PolicyWeights
from hopperlab.sim import HopperSim, NumericalDivergedError, Terrain

LOG_COLUMNS = (
    "t",
    "pos_x", "pos_y", "pos_z",
    "quat_w", "quat_x", "quat_y", "quat_z",
    "vel_x", "vel_y", "vel_z",
    "omega_x", "omega_y", "omega_z",
    "qp_1", "qp_2", "qp_3",
    "qdp_1", "qdp_2", "qdp_3",
    "taup_1", "taup_2", "taup_3",
    "taus_1", "taus_2", "taus_3",
    "contact", "phase", "reward",
    "action_1", "action_2", "action_3",
)


@dataclass
class EpisodeSpec:
    seed: int = 0
    terrain: str = "flat"
    command: Command = field(default_factory=Command)
    duration: float = 10.0
    controller: str = "raibert"  # "raibert" | "policy"
    weights_path: str | None = None
    conversion: ConversionMode = ConversionMode.TORQUE_MAPPING
    perturbations: list = field(default_factory=list)  # [(t, (dvx, dvy, dvz)), ...]
    randomize: bool = True

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        for t, _ in self.perturbations:
            if not 0.0 <= t < self.duration:
                raise ValueError("perturbation times must lie inside the episode")
        if isinstance(self.conversion, str):
            self.conversion = ConversionMode(self.conversion)
        if self.controller == "policy" and not self.weights_path:
            raise ValueError("policy controller needs a weights file")


@dataclass
class EpisodeResult:
    metrics: dict
    log: np.ndarray  # rows x len(LOG_COLUMNS)

    def column(self, name: str) -> np.ndarray:
        return self.log[:, LOG_COLUMNS.index(name)]


class _PolicyController:
    """Wraps the runtime with the per-episode observation history buffer."""

    def __init__(self, geom, runtime: PolicyRuntime):
        self.geom = geom
        self.runtime = runtime
        h = runtime.meta["history_len"]
        self.history = np.zeros((h, runtime.meta["obs_dim"]))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        action = self.runtime.forward(self.history, obs)[0]
        self.history = np.roll(self.history, 1, axis=0)
        self.history[0] = obs
        return joint_limits_clip(self.geom, action)


def touchdown_times(log: np.ndarray) -> np.ndarray:
    contact = log[:, LOG_COLUMNS.index("contact")] > 0.5
    t = log[:, LOG_COLUMNS.index("t")]
    edges = np.flatnonzero(~contact[:-1] & contact[1:]) + 1
    return t[edges]


def episode_metrics(log: np.ndarray, spec: EpisodeSpec, fault: str | None) -> dict:
    """Survival, drift and gait statistics from a trajectory log."""
    t = log[:, LOG_COLUMNS.index("t")]
    surviving_time = float(t[-1]) if len(t) else 0.0
    if len(t):
        # reference integrates the commanded velocity from the start point
        ref_x = spec.command.vx * t
        ref_y = spec.command.vy * t
        dx = log[:, LOG_COLUMNS.index("pos_x")] - log[0, LOG_COLUMNS.index("pos_x")] - ref_x
        dy = log[:, LOG_COLUMNS.index("pos_y")] - log[0, LOG_COLUMNS.index("pos_y")] - ref_y
        tracking = float(np.mean(dx * dx + dy * dy))
    else:
        tracking = 0.0
    tds = touchdown_times(log)
    return {
        "surviving_time": surviving_time,
        "position_tracking_error": tracking,
        "touchdowns": int(len(tds)),
        "hop_intervals": np.diff(tds).tolist(),
        "mean_reward": float(np.mean(log[:, LOG_COLUMNS.index("reward")])) if len(t) else 0.0,
        "fault": fault,
        "fell": fault == "fell",
    }


def write_log_csv(path: str, log: np.ndarray):
    with open(path, "w") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for row in log:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_log_csv(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1).reshape(-1, len(LOG_COLUMNS))


def run_episode(cfg: LabConfig, spec: EpisodeSpec, log_path: str | None = None,
                action_stream: list | None = None) -> EpisodeResult:
    """Run one episode; optionally replay a recorded action stream verbatim."""
    geom, sim_cfg = cfg.geometry, cfg.sim
    sim = HopperSim(geom, sim_cfg, Terrain.parse(spec.terrain))
    sim.reset(seed=spec.seed, randomize=spec.randomize)
    gains = cfg.gains.scaled(sim.params.gain_scale)
    clock = PhaseClock(period=spec.command.period)

    if action_stream is not None:
        controller = None
    elif spec.controller == "raibert":
        raibert = RaibertController(geom, cfg.raibert)
        controller = lambda obs: raibert(sim, clock, spec.command)
    elif spec.controller == "policy":
        controller = _PolicyController(geom, PolicyRuntime(PolicyWeights.load(spec.weights_path)))
    else:
        raise ValueError(f"unknown controller {spec.controller!r}")

    n_steps = int(round(spec.duration / sim_cfg.dt_physics))
    decimation = sim_cfg.control_decimation
    perturb = sorted(spec.perturbations, key=lambda p: p[0])
    next_perturb = 0

    action = np.zeros(3)  # symmetric stance pose
    prev_action = action.copy()
    serial_target = None
    tau_p = np.zeros(3)
    tau_s = np.zeros(3)
    step_reward = 0.0
    log = np.empty((n_steps, len(LOG_COLUMNS)))
    rows = 0
    fault = None

    try:
        for step in range(n_steps):
            while next_perturb < len(perturb) and sim.time >= perturb[next_perturb][0] - 0.5 * sim_cfg.dt_physics:
                sim.apply_perturbation(np.asarray(perturb[next_perturb][1], dtype=float))
                next_perturb += 1

            if step % decimation == 0:
                control_index = step // decimation
                obs = build_observation(geom, sim, clock, spec.command, action)
                prev_action = action
                if action_stream is not None:
                    action = np.asarray(action_stream[control_index], dtype=float)
                else:
                    action = joint_limits_clip(geom, controller(obs))
                if spec.conversion is ConversionMode.JOINT_TARGET_MAPPING:
                    serial_target = joint_target_or_clamp(geom, action)

            bridge = bridge_state(geom, sim.leg)
            parallel = bridge.parallel_state()
            torque_p = pd_torque(action, parallel, gains, sim_cfg.tau_max_parallel)
            if spec.conversion is ConversionMode.TORQUE_MAPPING:
                torque_s = clamp_torques(bridge.torque_to_serial(torque_p), sim_cfg.tau_max_serial)
            else:
                torque_s = clamp_torques(
                    JointTorques(
                        gains.kp * (serial_target - sim.leg.q) - gains.kd * sim.leg.qd, "serial"
                    ),
                    sim_cfg.tau_max_serial,
                )
            qdp = parallel.qd
            tau_p, tau_s = torque_p.tau, torque_s.tau

            sim.step(torque_s)
            clock.advance(sim_cfg.dt_physics)

            if (step + 1) % decimation == 0:
                step_reward, _ = reward(sim, clock, spec.command, action, prev_action, tau_s, cfg.reward)

            body = sim.body
            log[rows] = (
                sim.time,
                *body.pos, *body.quat, *body.lin_vel, *body.ang_vel,
                *parallel.q, *qdp, *tau_p, *tau_s,
                1.0 if sim.contact.in_contact else 0.0,
                clock.phase,
                step_reward,
                *action,
            )
            rows += 1

            if sim.fallen():
                fault = "fell"
                break
    except KinematicsError as exc:
        fault = f"kinematics:{type(exc).__name__}"
    except NumericalDivergedError:
        fault = "diverged"

    log = log[:rows]
    if log_path:
        write_log_csv(log_path, log)
    return EpisodeResult(episode_metrics(log, spec, fault), log)


def joint_target_or_clamp(geom, action: np.ndarray) -> np.ndarray:
    """Serial position target for the baseline mode, clamped into its travel box."""
    from hopperlab.conversion import joint_target_mapping
    from hopperlab.kinematics import UnreachableError

    try:
        target = joint_target_mapping(geom, action)
    except UnreachableError:
        target = np.array([0.0, 0.0, geom.nominal_ext])
    return np.clip(
        target,
        [-geom.tilt_max, -geom.tilt_max, geom.ext_min],
        [geom.tilt_max, geom.tilt_max, geom.ext_max],
    )
