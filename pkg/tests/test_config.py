import pytest

from hopperlab.config import ConfigError, LabConfig, load_config


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg.geometry.r == 0.06
    assert cfg.sim.body_mass == 2.5
    assert cfg.gains.kp == 20.0


def test_missing_file_reports_error():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/path.ini")


def test_file_overrides(tmp_path):
    path = tmp_path / "lab.ini"
    path.write_text(
        """
[geometry]
r = 0.07
lower_link = 0.32

[sim]
body_mass = 3.0
mass_scale = 0.9 1.1

[control]
kp = 25
velocity_gain = 0.03
"""
    )
    cfg = load_config(str(path))
    assert cfg.geometry.r == 0.07
    assert cfg.geometry.d == 0.32
    assert cfg.geometry.D == 0.14  # untouched default
    assert cfg.sim.body_mass == 3.0
    assert cfg.sim.randomization.mass_scale == (0.9, 1.1)
    assert cfg.gains.kp == 25.0
    assert cfg.raibert.velocity_gain == 0.03


def test_invalid_geometry_is_config_error(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[geometry]\nlower_link = 0.05\n")  # d < r
    with pytest.raises(ConfigError, match="invalid configuration"):
        load_config(str(path))


def test_env_var_fallback(tmp_path, monkeypatch):
    path = tmp_path / "env.ini"
    path.write_text("[sim]\nbody_mass = 2.8\n")
    monkeypatch.setenv("HOPPER_CONFIG", str(path))
    cfg = load_config(None)
    assert cfg.sim.body_mass == 2.8


def test_shipped_default_config_parses():
    import os

    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    cfg = load_config(os.path.join(here, "configs", "default.ini"))
    assert cfg == LabConfig()
