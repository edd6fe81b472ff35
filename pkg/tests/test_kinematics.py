import math

import numpy as np
import pytest

from hopperlab.kinematics import (
    BRANCH_MARGIN,
    ChainGeometry,
    DegenerateError,
    SingularError,
    UnreachableError,
    branch_margin,
    clamp_foot_target,
    fk_parallel,
    fk_serial,
    ik_jacobian_parallel,
    ik_parallel,
    ik_serial,
    in_workspace,
    jacobian_parallel,
    jacobian_serial,
    knee_position,
    sample_workspace,
)

GEOM = ChainGeometry()


def rotz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def constraint_residuals(geom, q, x):
    """Independent oracle: squared knee-foot distances minus d^2."""
    return np.array(
        [abs((x - knee_position(geom, i, q[i])) @ (x - knee_position(geom, i, q[i])) - geom.d ** 2) for i in range(3)]
    )


def fd_jacobian(f, q, h=1e-6):
    """Central finite differences of a vector map, column per coordinate."""
    q = np.asarray(q, dtype=float)
    cols = []
    for i in range(3):
        dq = np.zeros(3)
        dq[i] = h
        cols.append((f(q + dq) - f(q - dq)) / (2.0 * h))
    return np.column_stack(cols)


class TestGeometryValidation:
    def test_defaults_are_valid(self):
        geom = ChainGeometry()
        assert geom.nominal_ext == pytest.approx(math.sqrt(0.30 ** 2 - 0.20 ** 2))

    def test_rejects_bad_links(self):
        with pytest.raises(ValueError):
            ChainGeometry(d=0.05)  # d < r
        with pytest.raises(ValueError):
            ChainGeometry(D=-0.1)
        with pytest.raises(ValueError):
            ChainGeometry(ext_max=0.9)  # beyond D + d


class TestKneePosition:
    def test_chain0_zero_angle(self):
        k = knee_position(GEOM, 0, 0.0)
        np.testing.assert_allclose(k, [0.0, 0.20, 0.0], atol=1e-15)

    def test_chain0_right_angle(self):
        k = knee_position(GEOM, 0, math.pi / 2)
        np.testing.assert_allclose(k, [0.0, 0.06, 0.14], atol=1e-15)

    def test_chain1_matches_explicit_rotation(self):
        # oracle: rotate the chain-0 result by the 120 degree chain yaw
        expected = rotz(2.0 * math.pi / 3.0) @ np.array([0.0, 0.20, 0.0])
        np.testing.assert_allclose(knee_position(GEOM, 1, 0.0), expected, atol=1e-15)
        np.testing.assert_allclose(expected[:2], [-0.17320508, -0.10], rtol=1e-7)


class TestParallelFk:
    def test_symmetric_pose_closed_form(self):
        x = fk_parallel(GEOM, np.zeros(3))
        z = -math.sqrt(GEOM.d ** 2 - (GEOM.r + GEOM.D) ** 2)
        np.testing.assert_allclose(x, [0.0, 0.0, z], atol=1e-12)
        assert x[2] == pytest.approx(-0.2236068, abs=1e-6)

    @pytest.mark.parametrize("qv", [-0.9, -0.3, 0.4, 1.1])
    def test_equal_angles_stay_on_axis(self, qv):
        x = fk_parallel(GEOM, np.full(3, qv))
        assert abs(x[0]) < 1e-12 and abs(x[1]) < 1e-12

    def test_constraint_residuals_random(self):
        rng = np.random.default_rng(11)
        for q in sample_workspace(GEOM, rng, 200):
            x = fk_parallel(GEOM, q)
            assert constraint_residuals(GEOM, q, x).max() < 1e-10

    def test_root_is_below_hips(self):
        rng = np.random.default_rng(3)
        for q in sample_workspace(GEOM, rng, 50):
            assert fk_parallel(GEOM, q)[2] < 0.0


class TestParallelIk:
    def test_symmetric_inverse(self):
        q = ik_parallel(GEOM, np.array([0.0, 0.0, -0.2236068]))
        np.testing.assert_allclose(q, np.zeros(3), atol=1e-6)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(7)
        for q in sample_workspace(GEOM, rng, 500):
            q2 = ik_parallel(GEOM, fk_parallel(GEOM, q))
            np.testing.assert_allclose(q2, q, atol=1e-9)

    def test_unreachable_outside_shell(self):
        with pytest.raises(UnreachableError):
            ik_parallel(GEOM, np.array([0.0, 0.0, -(GEOM.D + GEOM.d) * 1.01]))

    def test_degenerate_on_pivot_axis(self):
        # chain 0's pivot axis is the base x axis through [0, r, 0]
        with pytest.raises(DegenerateError):
            ik_parallel(GEOM, np.array([0.05, GEOM.r, 0.0]))

    def test_threefold_rotation_permutes_chains(self):
        rng = np.random.default_rng(5)
        for q in sample_workspace(GEOM, rng, 50):
            x = fk_parallel(GEOM, q)
            q_rot = ik_parallel(GEOM, rotz(2.0 * math.pi / 3.0) @ x)
            np.testing.assert_allclose(q_rot, q[[2, 0, 1]], atol=1e-9)


class TestParallelJacobian:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        for q in sample_workspace(GEOM, rng, 100):
            jac = jacobian_parallel(GEOM, q)
            ref = fd_jacobian(lambda v: fk_parallel(GEOM, v), q)
            np.testing.assert_allclose(jac, ref, rtol=1e-5, atol=1e-8)

    def test_symmetric_columns_related_by_rotation(self):
        jac = jacobian_parallel(GEOM, np.zeros(3))
        rot = rotz(2.0 * math.pi / 3.0)
        np.testing.assert_allclose(rot @ jac[:, 0], jac[:, 1], atol=1e-10)
        np.testing.assert_allclose(rot @ jac[:, 1], jac[:, 2], atol=1e-10)

    def test_singular_at_fold_boundary(self):
        # fold the leg until a chain hits the acos boundary, then ask for J
        geom = GEOM
        x = fk_parallel(geom, np.full(3, geom.q_max))
        # walk upward along z toward the fully folded surface
        step = np.array([0.0, 0.0, 1e-4])
        probe = x.copy()
        with pytest.raises((SingularError, UnreachableError)):
            for _ in range(2000):
                probe = probe + step
                ik_jacobian_parallel(geom, probe)
            raise SingularError("never reached the boundary")  # pragma: no cover


class TestSerialModel:
    def test_fk_zero_pose(self):
        np.testing.assert_allclose(
            fk_serial(GEOM, [0.0, 0.0, 0.2236068]), [0.0, 0.0, -0.2236068], atol=1e-12
        )

    def test_fk_pitch_example(self):
        # oracle: rotating [0,0,-0.3] by 30 degrees about the pitch axis
        x = fk_serial(GEOM, [0.0, math.pi / 6.0, 0.3])
        np.testing.assert_allclose(x, [0.15, 0.0, -0.25980762], atol=1e-8)

    def test_ik_examples(self):
        np.testing.assert_allclose(ik_serial(GEOM, [0.0, 0.0, -0.3]), [0.0, 0.0, 0.3], atol=1e-12)
        np.testing.assert_allclose(
            ik_serial(GEOM, [0.15, 0.0, -0.25980762]), [0.0, math.pi / 6.0, 0.3], atol=1e-7
        )

    def test_roundtrip_random(self):
        rng = np.random.default_rng(23)
        for _ in range(500):
            q = rng.uniform(
                [-GEOM.tilt_max, -GEOM.tilt_max, GEOM.ext_min],
                [GEOM.tilt_max, GEOM.tilt_max, GEOM.ext_max],
            )
            np.testing.assert_allclose(ik_serial(GEOM, fk_serial(GEOM, q)), q, atol=1e-9)
            np.testing.assert_allclose(
                fk_serial(GEOM, ik_serial(GEOM, fk_serial(GEOM, q))), fk_serial(GEOM, q), atol=1e-9
            )

    def test_ik_rejects_out_of_reach(self):
        with pytest.raises(UnreachableError):
            ik_serial(GEOM, [0.0, 0.0, -GEOM.ext_max * 1.2])
        with pytest.raises(UnreachableError):
            ik_serial(GEOM, [0.0, 0.0, GEOM.ext_min])  # above the hip plane

    def test_ik_degenerate_on_lateral_axis(self):
        with pytest.raises(DegenerateError):
            ik_serial(GEOM, [0.0, 0.25, 0.0])

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            q = rng.uniform(
                [-GEOM.tilt_max, -GEOM.tilt_max, GEOM.ext_min],
                [GEOM.tilt_max, GEOM.tilt_max, GEOM.ext_max],
            )
            jac = jacobian_serial(GEOM, q)
            ref = fd_jacobian(lambda v: fk_serial(GEOM, v), q)
            np.testing.assert_allclose(jac, ref, rtol=1e-5, atol=1e-8)

    def test_extension_column_straight_down(self):
        jac = jacobian_serial(GEOM, [0.0, 0.0, 0.3])
        np.testing.assert_allclose(jac[:, 2], [0.0, 0.0, -1.0], atol=1e-15)

    def test_revolute_columns_scale_with_extension(self):
        j1 = jacobian_serial(GEOM, [0.2, -0.3, 0.2])
        j2 = jacobian_serial(GEOM, [0.2, -0.3, 0.3])
        np.testing.assert_allclose(j2[:, :2], j1[:, :2] * 1.5, rtol=1e-12)


class TestWorkspaceHelpers:
    def test_sampled_points_are_interior(self):
        rng = np.random.default_rng(31)
        for q in sample_workspace(GEOM, rng, 100):
            assert in_workspace(GEOM, q)
            assert branch_margin(GEOM, fk_parallel(GEOM, q)) >= BRANCH_MARGIN

    def test_clamp_recovers_reachability(self):
        target = np.array([0.3, 0.1, -0.35])  # outside the shell
        assert branch_margin(GEOM, target) < BRANCH_MARGIN
        clamped = clamp_foot_target(GEOM, target)
        assert branch_margin(GEOM, clamped) >= BRANCH_MARGIN
        ik_parallel(GEOM, clamped)  # must not raise

    def test_clamp_keeps_reachable_targets(self):
        x = fk_parallel(GEOM, np.array([0.1, -0.2, 0.05]))
        np.testing.assert_allclose(clamp_foot_target(GEOM, x), x, atol=1e-15)
