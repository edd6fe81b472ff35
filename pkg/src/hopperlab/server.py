"""Newline-delimited JSON rollout service for external trainers.

One environment per connection, strictly serial request handling.  Every
request line gets exactly one response line.  Requests:

    {"type": "hello", "version": 1}
        -> {"type": "ready", "version": 1}
    {"type": "reset", "seed": 0, "command": {"vx": 0, "vy": 0, "period": 0.4},
     "terrain": "flat", "randomize": true, "conversion": "torque"}
        -> {"type": "obs", "obs": [... 17 floats], "privileged": {...}}
    {"type": "step", "action": [a1, a2, a3]}
        -> {"type": "transition", "obs": [...], "reward": r, "done": bool,
            "privileged": {...}, "info": {...}}
    {"type": "close"}
        -> {"type": "ready", "closing": true}   (connection then closes)

Malformed input yields {"type": "error", "code": ..., "message": ...} and the
connection stays open; a version mismatch in hello closes it.  The privileged
block carries the critic-only ground truth (true base velocity, contact flag,
randomized dynamics parameters) and is namespaced so a policy cannot consume
it by accident.
"""

from __future__ import annotations

import json
import socket
import sys

import numpy as np

from hopperlab.config import LabConfig
from hopperlab.control import Command, PhaseClock, build_observation, reward
from hopperlab.conversion import (
    ConversionMode,
    JointTorques,
    bridge_state,
    clamp_torques,
    pd_torque,
)
from hopperlab.episode import joint_target_or_clamp
from hopperlab.kinematics import KinematicsError, joint_limits_clip
from hopperlab.sim import HopperSim, NumericalDivergedError, Terrain

PROTOCOL_VERSION = 1


class _Env:
    """Single environment advanced one policy step (decimation physics steps) at a time."""

    def __init__(self, cfg: LabConfig):
        self.cfg = cfg
        self.sim = None
        self.clock = None
        self.command = None
        self.conversion = ConversionMode.TORQUE_MAPPING
        self.gains = cfg.gains
        self.prev_action = np.zeros(3)
        self.done = True
        self.fault = None

    def reset(self, seed: int, command: Command, terrain: str, randomize: bool, conversion: str):
        self.sim = HopperSim(self.cfg.geometry, self.cfg.sim, Terrain.parse(terrain))
        self.sim.reset(seed=seed, randomize=randomize)
        self.gains = self.cfg.gains.scaled(self.sim.params.gain_scale)
        self.clock = PhaseClock(period=command.period)
        self.command = command
        self.conversion = ConversionMode(conversion)
        self.prev_action = np.zeros(3)
        self.done = False
        self.fault = None
        return self._observe()

    def _observe(self):
        return build_observation(self.cfg.geometry, self.sim, self.clock, self.command, self.prev_action)

    def privileged(self):
        p = self.sim.params
        return {
            "lin_vel": self.sim.body.lin_vel.tolist(),
            "contact": bool(self.sim.contact.in_contact),
            "height": self.sim.height_above_terrain(),
            "params": {
                "body_mass": p.body_mass,
                "friction": p.friction,
                "contact_stiffness": p.contact_stiffness,
                "gain_scale": p.gain_scale,
            },
        }

    def step(self, action):
        if self.done:
            raise RuntimeError("episode finished; send reset")
        geom, sim_cfg = self.cfg.geometry, self.cfg.sim
        action = joint_limits_clip(geom, np.asarray(action, dtype=float))
        serial_target = None
        if self.conversion is ConversionMode.JOINT_TARGET_MAPPING:
            serial_target = joint_target_or_clamp(geom, action)
        tau_s = np.zeros(3)
        try:
            for _ in range(sim_cfg.control_decimation):
                if self.conversion is ConversionMode.TORQUE_MAPPING:
                    bridge = bridge_state(geom, self.sim.leg)
                    torque_p = pd_torque(action, bridge.parallel_state(), self.gains, sim_cfg.tau_max_parallel)
                    torque_s = clamp_torques(bridge.torque_to_serial(torque_p), sim_cfg.tau_max_serial)
                else:
                    torque_s = clamp_torques(
                        JointTorques(
                            self.gains.kp * (serial_target - self.sim.leg.q)
                            - self.gains.kd * self.sim.leg.qd,
                            "serial",
                        ),
                        sim_cfg.tau_max_serial,
                    )
                self.sim.step(torque_s)
                self.clock.advance(sim_cfg.dt_physics)
                tau_s = torque_s.tau
        except KinematicsError as exc:
            self.fault = f"kinematics:{type(exc).__name__}"
            self.done = True
        except NumericalDivergedError:
            self.fault = "diverged"
            self.done = True

        if self.fault:
            obs = np.zeros(17)
            total, parts = 0.0, {}
        else:
            total, parts = reward(
                self.sim, self.clock, self.command, action, self.prev_action, tau_s, self.cfg.reward
            )
            self.prev_action = action
            obs = self._observe()
            if self.sim.fallen():
                self.done = True
        return obs, total, parts, self.done


class ProtocolError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _parse_command(payload) -> Command:
    try:
        return Command(
            vx=float(payload.get("vx", 0.0)),
            vy=float(payload.get("vy", 0.0)),
            period=float(payload.get("period", 0.4)),
        )
    except (TypeError, ValueError) as exc:
        raise ProtocolError("bad_command", str(exc)) from exc


def handle_request(env: _Env, line: str):
    """Returns (response dict, keep_connection)."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        return {"type": "error", "code": "bad_json", "message": "request is not valid JSON"}, True
    if not isinstance(msg, dict) or "type" not in msg:
        return {"type": "error", "code": "bad_request", "message": "missing request type"}, True

    kind = msg["type"]
    try:
        if kind == "hello":
            version = msg.get("version")
            if version != PROTOCOL_VERSION:
                return (
                    {
                        "type": "error",
                        "code": "version_mismatch",
                        "message": f"server speaks version {PROTOCOL_VERSION}",
                    },
                    False,
                )
            return {"type": "ready", "version": PROTOCOL_VERSION}, True
        if kind == "reset":
            command = _parse_command(msg.get("command", {}))
            obs = env.reset(
                seed=int(msg.get("seed", 0)),
                command=command,
                terrain=str(msg.get("terrain", "flat")),
                randomize=bool(msg.get("randomize", True)),
                conversion=str(msg.get("conversion", "torque")),
            )
            return {"type": "obs", "obs": obs.tolist(), "privileged": env.privileged()}, True
        if kind == "step":
            action = msg.get("action")
            if not isinstance(action, list) or len(action) != 3:
                return {"type": "error", "code": "bad_action_shape", "message": "action must be 3 numbers"}, True
            if env.done and env.sim is None:
                return {"type": "error", "code": "not_reset", "message": "reset before stepping"}, True
            if env.done:
                return {"type": "error", "code": "episode_done", "message": "episode finished; send reset"}, True
            obs, rew, parts, done = env.step(action)
            return (
                {
                    "type": "transition",
                    "obs": obs.tolist(),
                    "reward": rew,
                    "done": done,
                    "privileged": env.privileged(),
                    "info": {"reward_parts": parts, "time": env.sim.time, "fault": env.fault},
                },
                True,
            )
        if kind == "close":
            return {"type": "ready", "closing": True}, False
        return {"type": "error", "code": "unknown_type", "message": f"unknown request type {kind!r}"}, True
    except ProtocolError as exc:
        return {"type": "error", "code": exc.code, "message": str(exc)}, True
    except (ValueError, RuntimeError) as exc:
        return {"type": "error", "code": "bad_request", "message": str(exc)}, True


def serve_streams(cfg: LabConfig, rfile, wfile):
    """Serve one connection over file-like line streams until close/EOF."""
    env = _Env(cfg)
    for line in rfile:
        if isinstance(line, bytes):
            line = line.decode()
        line = line.strip()
        if not line:
            continue
        response, keep = handle_request(env, line)
        wfile.write(json.dumps(response) + "\n")
        wfile.flush()
        if not keep:
            break


def serve_stdio(cfg: LabConfig):
    serve_streams(cfg, sys.stdin, sys.stdout)


def serve_tcp(cfg: LabConfig, port: int, host: str = "127.0.0.1", timeout: float = 300.0, once: bool = False):
    """Accept one trainer connection at a time; idle connections time out."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        print(json.dumps({"type": "listening", "port": server.getsockname()[1]}), flush=True)
        while True:
            conn, _ = server.accept()
            conn.settimeout(timeout)
            with conn, conn.makefile("r") as rfile, conn.makefile("w") as wfile:
                try:
                    serve_streams(cfg, rfile, wfile)
                except (socket.timeout, BrokenPipeError, ConnectionResetError):
                    pass
            if once:
                return
