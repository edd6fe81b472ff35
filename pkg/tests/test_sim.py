import math

import numpy as np
import pytest

from hopperlab.conversion import JointTorques
from hopperlab.kinematics import ChainGeometry, fk_serial, jacobian_serial
from hopperlab.rotations import quat_to_matrix
from hopperlab.sim import (
    BodyState,
    HopperSim,
    SimConfig,
    Terrain,
    contact_force,
    integrate_body,
)

GEOM = ChainGeometry()
CFG = SimConfig()


def make_sim(terrain=None):
    sim = HopperSim(GEOM, CFG, terrain)
    sim.reset(seed=0, randomize=False)
    return sim


def zero_torque():
    return JointTorques(np.zeros(3), "serial")


class TestTerrain:
    def test_flat(self):
        t = Terrain()
        assert t.height(3.0, -2.0) == 0.0
        np.testing.assert_allclose(t.normal, [0, 0, 1])

    def test_slope(self):
        t = Terrain.parse("slope:10")
        assert t.height(1.0, 0.0) == pytest.approx(math.tan(math.radians(10.0)))
        assert t.normal @ t.normal == pytest.approx(1.0)

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            Terrain.parse("stairs")


class TestContactForce:
    def test_no_penetration_no_force(self):
        f, state, anchor = contact_force(np.array([0, 0, 0.01]), np.zeros(3), Terrain(), CFG)
        np.testing.assert_allclose(f, np.zeros(3))
        assert not state.in_contact and state.normal_force == 0.0 and anchor is None

    def test_static_normal_force(self):
        f, state, _ = contact_force(np.array([0, 0, -0.01]), np.zeros(3), Terrain(), CFG)
        assert state.normal_force == pytest.approx(5000.0 * 0.01)
        np.testing.assert_allclose(f, [0.0, 0.0, 50.0])

    def test_damping_on_approach_raises_force(self):
        f, _, _ = contact_force(np.array([0, 0, -0.01]), np.array([0, 0, -0.5]), Terrain(), CFG)
        assert f[2] == pytest.approx(50.0 + 50.0 * 0.5)

    def test_normal_force_never_negative(self):
        f, state, _ = contact_force(np.array([0, 0, -0.001]), np.array([0, 0, 2.0]), Terrain(), CFG)
        assert state.normal_force == 0.0 and f[2] == 0.0

    def test_friction_cone_clamp(self):
        # anchor 10 cm away demands k_t * 0.1 = 150 N; cone allows mu * 50 N
        foot = np.array([0.10, 0.0, -0.01])
        anchor = np.array([0.0, 0.0, 0.0])
        f, state, new_anchor = contact_force(foot, np.zeros(3), Terrain(), CFG, anchor=anchor)
        f_t = f - np.array([0.0, 0.0, f[2]])
        assert np.linalg.norm(f_t) == pytest.approx(0.8 * 50.0)
        assert np.linalg.norm(f_t) < 150.0  # sliding, not sticking
        # anchor slid toward the foot so the spring matches the clamped force
        resid = -CFG.tangent_stiffness * (foot + state.penetration * Terrain().normal - new_anchor)
        np.testing.assert_allclose(resid, f_t, atol=1e-9)

    def test_slope_normal_direction(self):
        t = Terrain.parse("slope:10")
        # foot slightly below the inclined plane at x = 0
        f, state, _ = contact_force(np.array([0.0, 0.0, -0.005]), np.zeros(3), t, CFG)
        assert state.in_contact
        np.testing.assert_allclose(f / np.linalg.norm(f), t.normal, atol=1e-12)


class TestBallistics:
    def test_single_step_velocity(self):
        sim = make_sim()
        v0 = sim.body.lin_vel[2]
        sim.step(zero_torque())
        assert sim.body.lin_vel[2] == pytest.approx(v0 - 9.81 * 0.002, abs=1e-12)

    def test_parabola_oracle(self):
        # closed-form: z(t) = z0 + v0 t - g t^2 / 2 during pure flight
        sim = make_sim()
        sim.body.pos[2] = 1.5
        sim.body.lin_vel[:] = [0.3, -0.2, 1.0]
        start = sim.body.pos.copy()
        v0 = sim.body.lin_vel.copy()
        n = 150  # 0.3 s
        for _ in range(n):
            sim.step(zero_torque())
        t = n * CFG.dt_physics
        expected = start + v0 * t + 0.5 * np.array([0.0, 0.0, -9.81]) * t * t
        np.testing.assert_allclose(sim.body.pos, expected, atol=1e-4)

    def test_flight_energy_constant(self):
        sim = make_sim()
        sim.body.pos[2] = 2.0
        sim.body.lin_vel[:] = [0.5, 0.1, 0.8]
        sim.body.ang_vel[:] = [0.3, -0.2, 0.5]
        e0 = sim.energy()
        drift = 0.0
        for _ in range(150):
            sim.step(zero_torque())
            drift = max(drift, abs(sim.energy() - e0))
        assert drift < 1e-3

    def test_hover_force_balance(self):
        cfg = SimConfig()
        state = BodyState([0, 0, 1.0], [1, 0, 0, 0], np.zeros(3), np.zeros(3))
        for _ in range(100):
            integrate_body(state, np.array([0.0, 0.0, cfg.body_mass * cfg.gravity]), state.pos.copy(), cfg, cfg.body_mass)
        assert abs(state.pos[2] - 1.0) < 1e-6
        np.testing.assert_allclose(state.lin_vel, np.zeros(3), atol=1e-12)


class TestLegDynamics:
    def test_flight_leg_does_not_move_body(self):
        sim = make_sim()
        sim.body.pos[2] = 2.0
        p0 = sim.body.pos.copy()
        for i in range(50):
            sim.step(JointTorques(np.array([2.0 * math.sin(i * 0.1), -1.0, 5.0]), "serial"))
        # leg moved, body fell exactly ballistically
        t = 50 * CFG.dt_physics
        assert sim.body.pos[2] == pytest.approx(p0[2] - 0.5 * 9.81 * t * t, abs=1e-9)
        assert abs(sim.body.pos[0] - p0[0]) < 1e-12

    def test_leg_limits_hold(self):
        sim = make_sim()
        sim.body.pos[2] = 5.0  # keep airborne
        for _ in range(500):
            sim.step(JointTorques(np.array([12.0, 12.0, 150.0]), "serial"))
            q = sim.leg.q
            assert -GEOM.tilt_max <= q[0] <= GEOM.tilt_max
            assert GEOM.ext_min <= q[2] <= GEOM.ext_max

    def test_contact_back_drive_launches_body(self):
        # constant extension thrust: ground reaction must lift the body clear
        sim = make_sim()
        peak_force = 0.0
        peak_height = 0.0
        for _ in range(200):
            sim.step(JointTorques(np.array([0.0, 0.0, 40.0]), "serial"))
            peak_force = max(peak_force, sim.contact.normal_force)
            peak_height = max(peak_height, sim.body.pos[2])
        assert peak_force > CFG.body_mass * CFG.gravity
        assert peak_height > GEOM.nominal_ext + CFG.drop_height


class TestQuaternionHealth:
    def test_norm_stays_unit(self):
        sim = make_sim()
        sim.body.pos[2] = 50.0
        sim.body.ang_vel[:] = [1.0, -2.0, 0.5]
        worst = 0.0
        for _ in range(20000):
            sim.step(zero_torque())
            worst = max(worst, abs(np.linalg.norm(sim.body.quat) - 1.0))
        assert worst < 1e-9


class TestResetAndRandomization:
    def test_reset_is_deterministic(self):
        sim = HopperSim(GEOM, CFG)
        b1, p1 = sim.reset(seed=42)
        params1 = sim.params
        b2, p2 = sim.reset(seed=42)
        assert sim.params == params1
        np.testing.assert_array_equal(b1.pos, b2.pos)
        np.testing.assert_array_equal(p1.q, p2.q)

    def test_randomization_disabled_uses_nominal(self):
        sim = HopperSim(GEOM, CFG)
        sim.reset(seed=1, randomize=False)
        assert sim.params.body_mass == CFG.body_mass
        assert sim.params.friction == CFG.friction
        assert sim.params.gain_scale == 1.0

    def test_draws_stay_in_ranges(self):
        sim = HopperSim(GEOM, CFG)
        for seed in range(1000):
            sim.reset(seed=seed)
            p = sim.params
            assert 0.8 * CFG.body_mass <= p.body_mass <= 1.2 * CFG.body_mass
            assert 0.4 <= p.friction <= 1.0
            assert 0.7 * CFG.contact_stiffness <= p.contact_stiffness <= 1.3 * CFG.contact_stiffness
            assert 0.9 <= p.gain_scale <= 1.1

    def test_reset_pose(self):
        sim = HopperSim(GEOM, CFG)
        body, parallel = sim.reset(seed=0, randomize=False)
        assert body.pos[2] == pytest.approx(GEOM.nominal_ext + CFG.drop_height)
        np.testing.assert_allclose(parallel.q, np.zeros(3), atol=1e-9)


class TestPerturbation:
    def test_zero_impulse_is_identity(self):
        sim = make_sim()
        v0 = sim.body.lin_vel.copy()
        sim.apply_perturbation(np.zeros(3))
        np.testing.assert_array_equal(sim.body.lin_vel, v0)

    def test_momentum_change(self):
        sim = make_sim()
        sim.apply_perturbation(np.array([0.4, 0.0, 0.0]))
        assert sim.body.lin_vel[0] == pytest.approx(0.4)


class TestInvariants:
    def test_contact_unilateral_and_cone_through_hops(self):
        # drive a crude stance-thrust loop and audit every contact sample
        sim = make_sim()
        rng = np.random.default_rng(0)
        for _ in range(2500):
            tau = np.array([rng.normal(0, 1), rng.normal(0, 1), 30.0 + rng.normal(0, 5)])
            sim.step(JointTorques(tau, "serial"))
            c = sim.contact
            assert c.normal_force >= 0.0
            if not c.in_contact:
                np.testing.assert_array_equal(c.force_world, np.zeros(3))
            else:
                n = sim.terrain.normal
                f_t = c.force_world - (n @ c.force_world) * n
                assert np.linalg.norm(f_t) <= sim.params.friction * c.normal_force + 1e-9

    def test_config_invariant(self):
        with pytest.raises(ValueError):
            SimConfig(dt_physics=0.001)  # breaks the 0.02 s policy period
