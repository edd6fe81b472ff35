"""Configuration file handling.

The config file is INI-style key = value text with three sections, all SI
units; every key is optional and falls back to the built-in default.  The
path comes from --config on the CLI or the HOPPER_CONFIG environment
variable.  See configs/default.ini for the documented template.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from hopperlab.control import RaibertGains, RewardWeights
from hopperlab.conversion import PdGains
from hopperlab.kinematics import ChainGeometry
from hopperlab.sim import RandomizationRanges, SimConfig

ENV_VAR = "HOPPER_CONFIG"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class LabConfig:
    geometry: ChainGeometry = field(default_factory=ChainGeometry)
    sim: SimConfig = field(default_factory=SimConfig)
    gains: PdGains = field(default_factory=PdGains)
    raibert: RaibertGains = field(default_factory=RaibertGains)
    reward: RewardWeights = field(default_factory=RewardWeights)


_GEOMETRY_KEYS = {
    "r": float,
    "upper_link": float,
    "lower_link": float,
    "q_min": float,
    "q_max": float,
    "tilt_max": float,
    "ext_min": float,
    "ext_max": float,
}

_SIM_KEYS = {
    "dt_physics": float,
    "control_decimation": int,
    "body_mass": float,
    "gravity": float,
    "contact_stiffness": float,
    "contact_damping": float,
    "tangent_stiffness": float,
    "tangent_damping": float,
    "friction": float,
    "tau_max_parallel": float,
    "drop_height": float,
}

_CONTROL_KEYS = {
    "kp": float,
    "kd": float,
    "velocity_gain": float,
    "thrust_extension": float,
    "attitude_kp": float,
    "attitude_kd": float,
    "placement_limit": float,
}


def _parse_triple(text: str):
    parts = [float(p) for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ConfigError(f"expected three values, got {text!r}")
    return tuple(parts)


def load_config(path: str | None = None) -> LabConfig:
    """Defaults overridden by the file at `path` (or $HOPPER_CONFIG)."""
    path = path or os.environ.get(ENV_VAR)
    if path is None:
        return LabConfig()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    try:
        geom_kwargs = {}
        if parser.has_section("geometry"):
            sec = parser["geometry"]
            rename = {"upper_link": "D", "lower_link": "d"}
            for key, cast in _GEOMETRY_KEYS.items():
                if key in sec:
                    geom_kwargs[rename.get(key, key)] = cast(sec[key])
        geometry = ChainGeometry(**geom_kwargs)

        sim_kwargs = {}
        if parser.has_section("sim"):
            sec = parser["sim"]
            for key, cast in _SIM_KEYS.items():
                if key in sec:
                    sim_kwargs[key] = cast(sec[key])
            for key in ("body_inertia", "leg_inertia", "tau_max_serial"):
                if key in sec:
                    sim_kwargs[key] = _parse_triple(sec[key])
            rr_kwargs = {}
            for key in ("mass_scale", "friction_range", "contact_stiffness_scale", "gain_scale"):
                if key in sec:
                    lo, hi = (float(v) for v in sec[key].replace(",", " ").split())
                    rr_kwargs[{"friction_range": "friction"}.get(key, key)] = (lo, hi)
            if rr_kwargs:
                sim_kwargs["randomization"] = RandomizationRanges(**rr_kwargs)
        sim = SimConfig(**sim_kwargs)

        gains = PdGains()
        raibert_kwargs = {}
        if parser.has_section("control"):
            sec = parser["control"]
            gains = PdGains(
                kp=float(sec.get("kp", gains.kp)),
                kd=float(sec.get("kd", gains.kd)),
            )
            for key in ("velocity_gain", "thrust_extension", "attitude_kp", "attitude_kd", "placement_limit"):
                if key in sec:
                    raibert_kwargs[key] = float(sec[key])
        raibert = RaibertGains(**raibert_kwargs)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    return LabConfig(geometry=geometry, sim=sim, gains=gains, raibert=raibert)
