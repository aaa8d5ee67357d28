import numpy as np
import pytest

from artivote.geometry import (DegenerateBaselineError, JointParams, RigidTransform,
                               VoteTargets, afford_offsets, circle_candidates,
                               cone_candidates, direction_angle, joint_offsets,
                               line_line_distance, perpendicular_basis,
                               rigid_from_joint, rotation_about_axis)


def rand_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


class TestJointOffsets:
    def test_axis_aligned(self):
        mu, nu, theta = joint_offsets((0, 0, 0), (1, 0, 0), (0.5, 0.3, 0), (0, 0, 1))
        assert (mu, nu, theta) == pytest.approx((0.5, 0.3, 0.0), abs=1e-12)

    def test_on_baseline_parallel(self):
        mu, nu, theta = joint_offsets((0, 0, 0), (0, 2, 0), (0, 1, 0), (0, 1, 0))
        assert (mu, nu, theta) == pytest.approx((1.0, 0.0, 1.0), abs=1e-12)

    def test_degenerate_baseline(self):
        with pytest.raises(DegenerateBaselineError, match="degenerate tuple baseline"):
            joint_offsets((0, 0, 0), (0, 0, 1e-12), (1, 1, 1), (0, 0, 1))

    def test_roundtrip_q_on_circle(self):
        # q must sit on the circle of radius nu around the foot point
        rng = np.random.default_rng(3)
        for _ in range(200):
            p1, p2, q = rng.normal(size=(3, 3))
            u = rand_unit(rng)
            mu, nu, theta = joint_offsets(p1, p2, q, u)
            d = (p2 - p1) / np.linalg.norm(p2 - p1)
            foot = p1 + mu * d
            assert abs(np.linalg.norm(q - foot) - nu) < 1e-9
            assert abs(np.dot(q - foot, d)) < 1e-9

    def test_translation_invariance_exact(self):
        # dyadic-rational coordinates make every addition exact, so the
        # invariance-by-construction shows up bit-for-bit
        rng = np.random.default_rng(4)
        for _ in range(50):
            p1, p2, q = rng.integers(-512, 512, size=(3, 3)) / 256.0
            t = rng.integers(-32, 32, size=3) / 4.0
            if np.linalg.norm(p2 - p1) < 1e-6:
                continue
            u = rand_unit(rng)
            a = joint_offsets(p1, p2, q, u)
            b = joint_offsets(p1 + t, p2 + t, q + t, u)
            assert a == b

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p1, p2, q = rng.normal(size=(3, 3))
            u = rand_unit(rng)
            R = rotation_about_axis(rand_unit(rng), rng.uniform(0, 2 * np.pi))
            a = joint_offsets(p1, p2, q, u)
            b = joint_offsets(R @ p1, R @ p2, R @ q, R @ u)
            assert a == pytest.approx(b, abs=1e-9)


class TestAffordOffsets:
    def test_simple(self):
        assert afford_offsets((0, 0, 0), (1, 0, 0), (0.2, 0, 0.4)) == \
            pytest.approx((0.2, 0.4), abs=1e-12)

    def test_zero_offset(self):
        p1 = np.array([0.3, -0.1, 2.0])
        assert afford_offsets(p1, p1 + [1, 2, 3], p1) == pytest.approx((0, 0), abs=1e-12)

    def test_roundtrip_on_circle(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            p1, p2, a = rng.normal(size=(3, 3))
            mu_a, nu_a = afford_offsets(p1, p2, a)
            cands = circle_candidates(p1, p2, mu_a, nu_a, 1.0)
            gap = np.linalg.norm(cands - a, axis=1).min()
            assert gap <= nu_a * 2 * np.sin(np.deg2rad(0.5)) + 1e-9


class TestCircleCandidates:
    def test_zero_radius(self):
        pts = circle_candidates((0, 0, 0), (1, 0, 0), 0.25, 0.0, 45.0)
        assert np.allclose(pts, [0.25, 0, 0])

    def test_z_baseline_square(self):
        pts = circle_candidates((0, 0, 0), (0, 0, 1), 0.0, 1.0, 90.0)
        assert pts.shape == (4, 3)
        assert np.allclose(pts[:, 2], 0.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
        # baseline along z uses the +x fallback reference
        assert np.allclose(pts[0], [1, 0, 0], atol=1e-12)
        for i in range(4):
            assert abs(np.dot(pts[i], pts[(i + 1) % 4])) < 1e-12

    def test_count(self):
        assert circle_candidates((0, 0, 0), (1, 0, 0), 0, 1, 70.0).shape[0] == 6

    def test_chord_bound_recovers_q(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p1, p2, q = rng.normal(size=(3, 3))
            u = rand_unit(rng)
            mu, nu, _ = joint_offsets(p1, p2, q, u)
            cands = circle_candidates(p1, p2, mu, nu, 1.0)
            gap = np.linalg.norm(cands - q, axis=1).min()
            assert gap <= nu * 2 * np.sin(np.deg2rad(0.5)) + 1e-9

    def test_first_candidate_reference_direction(self):
        # component of +z orthogonal to a generic baseline
        p1 = np.array([0.0, 0.0, 0.0])
        p2 = np.array([1.0, 0.0, 1.0])
        d = (p2 - p1) / np.linalg.norm(p2 - p1)
        e1 = np.array([0, 0, 1]) - d[2] * d
        e1 /= np.linalg.norm(e1)
        pts = circle_candidates(p1, p2, 0.0, 1.0, 90.0)
        assert np.allclose(pts[0], e1, atol=1e-12)


class TestConeCandidates:
    def test_degenerate_aperture(self):
        pts = cone_candidates((0, 0, 0), (1, 1, 0), 1.0, 60.0)
        d = np.array([1, 1, 0]) / np.sqrt(2)
        assert np.allclose(pts, d[None, :])

    def test_orthogonal_ring(self):
        pts = cone_candidates((0, 0, 0), (1, 0, 0), 0.0, 90.0)
        assert pts.shape == (4, 3)
        assert np.allclose(pts @ [1, 0, 0], 0.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)

    def test_cosine_constraint(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            p1, p2 = rng.normal(size=(2, 3))
            theta = rng.uniform(-1, 1)
            pts = cone_candidates(p1, p2, theta, 10.0)
            d = (p2 - p1) / np.linalg.norm(p2 - p1)
            assert np.allclose(pts @ d, theta, atol=1e-9)
            assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)

    def test_angular_bound_recovers_u(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            p1, p2 = rng.normal(size=(2, 3))
            u = rand_unit(rng)
            _, _, theta = joint_offsets(p1, p2, rng.normal(size=3), u)
            pts = cone_candidates(p1, p2, theta, 1.0)
            ang = np.degrees(np.arccos(np.clip(pts @ u, -1, 1))).min()
            assert ang <= 1.0 + 1e-6


class TestRigidFromJoint:
    def test_identity_at_zero(self):
        for kind in ("revolute", "prismatic"):
            tf = rigid_from_joint(kind, 0.0, (0, 0, 1), (1, 2, 3))
            assert np.allclose(tf.rotation, np.eye(3))
            assert np.allclose(tf.translation, 0.0)

    def test_half_turn(self):
        tf = rigid_from_joint("revolute", np.pi, (0, 0, 1), (0, 0, 0))
        assert np.allclose(tf.apply([1, 0, 0]), [-1, 0, 0], atol=1e-12)

    def test_prismatic_translation(self):
        tf = rigid_from_joint("prismatic", 0.1, (1, 0, 0), (5, 5, 5))
        assert np.allclose(tf.apply([0, 0, 0]), [0.1, 0, 0])
        assert np.allclose(tf.rotation, np.eye(3))

    def test_rotation_composes_additively(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            u = rand_unit(rng)
            q = rng.normal(size=3)
            d1, d2 = rng.uniform(-np.pi, np.pi, size=2)
            a = rigid_from_joint("revolute", d1, u, q) @ rigid_from_joint("revolute", d2, u, q)
            b = rigid_from_joint("revolute", d1 + d2, u, q)
            assert np.allclose(a.rotation, b.rotation, atol=1e-9)
            assert np.allclose(a.translation, b.translation, atol=1e-9)

    def test_revolute_about_offset_axis_fixes_axis_points(self):
        tf = rigid_from_joint("revolute", 1.0, (0, 0, 1), (1, 2, 3))
        assert np.allclose(tf.apply([1, 2, 7]), [1, 2, 7], atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown joint kind"):
            rigid_from_joint("spherical", 0.1, (0, 0, 1), (0, 0, 0))


class TestLineLineDistance:
    def test_identical_lines(self):
        assert line_line_distance((1, 0, 0), (0, 0, 0), (1, 0, 0), (5, 0, 0)) == 0.0

    def test_unit_offset(self):
        d = line_line_distance((1, 0, 0), (0, 0, 0), (0, 1, 0), (0, 0, 1))
        assert d == pytest.approx(1.0, abs=1e-12)

    def test_parallel_fallback(self):
        d = line_line_distance((0, 0, 1), (0, 0, 0), (0, 0, 1), (3, 4, 7))
        assert d == pytest.approx(5.0, abs=1e-12)

    def test_grid_search_oracle(self):
        from oracles import grid_line_distance
        rng = np.random.default_rng(11)
        for _ in range(50):
            u1, u2 = rand_unit(rng), rand_unit(rng)
            q1, q2 = rng.normal(size=(2, 3))
            assert line_line_distance(u1, q1, u2, q2) == \
                pytest.approx(grid_line_distance(u1, q1, u2, q2), abs=1e-6)


class TestDirectionAngle:
    def test_trivials(self):
        assert direction_angle((1, 0, 0), (1, 0, 0)) == pytest.approx(0.0, abs=1e-9)
        assert direction_angle((1, 0, 0), (-1, 0, 0)) == pytest.approx(180.0, abs=1e-9)
        assert direction_angle((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0, abs=1e-9)

    def test_signs_not_folded(self):
        u = np.array([0, 0, 1.0])
        v = np.array([0, np.sin(0.1), -np.cos(0.1)])
        assert direction_angle(u, v) > 170.0


class TestRigidTransform:
    def test_compose_and_inverse(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            a = rigid_from_joint("revolute", rng.uniform(-3, 3), rand_unit(rng), rng.normal(size=3))
            b = rigid_from_joint("prismatic", rng.uniform(-1, 1), rand_unit(rng), rng.normal(size=3))
            p = rng.normal(size=3)
            assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)), atol=1e-12)
            ident = a @ a.inverse()
            assert np.allclose(ident.rotation, np.eye(3), atol=1e-12)
            assert np.allclose(ident.translation, 0, atol=1e-12)

    def test_matrix_roundtrip(self):
        tf = rigid_from_joint("revolute", 0.7, (0, 1, 0), (1, 0, 2))
        back = RigidTransform.from_matrix(tf.as_matrix())
        assert np.allclose(back.rotation, tf.rotation)
        assert np.allclose(back.translation, tf.translation)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))


class TestTypes:
    def test_joint_params_validation(self):
        with pytest.raises(ValueError):
            JointParams("revolute", (0, 0, 2.0), (0, 0, 0))
        with pytest.raises(ValueError):
            JointParams("weird", (0, 0, 1.0), (0, 0, 0))

    def test_vote_targets_validation(self):
        with pytest.raises(ValueError):
            VoteTargets(mu=[0.1], nu=[-0.2], theta=[0.0], mu_a=[0], nu_a=[0], scores=[0])
        with pytest.raises(ValueError):
            VoteTargets(mu=[0.1], nu=[0.2], theta=[1.2], mu_a=[0], nu_a=[0], scores=[0])

    def test_perpendicular_basis_orthonormal(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            d = rand_unit(rng)
            e1, e2 = perpendicular_basis(d)
            for v in (e1, e2):
                assert abs(np.linalg.norm(v) - 1) < 1e-12
                assert abs(np.dot(v, d)) < 1e-12
            assert abs(np.dot(e1, e2)) < 1e-12
