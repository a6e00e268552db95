import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeloc.errors import DegenerateInputError, EmptyRequestError
from activeloc.geom import (CameraModel, Pose, pose_compose, principal_axis_angle_deg, project, project_points,
                            quat_from_axis_angle, quat_to_matrix, rotation_geodesic_deg, sample_viewpoints)


def random_pose(rng):
    q = rng.standard_normal(4)
    return Pose(rng.uniform(-3, 3, 3), q / np.linalg.norm(q))


unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))


def assert_pose_close(a, b, tol=1e-9):
    assert np.allclose(a.position, b.position, atol=tol)
    assert rotation_geodesic_deg(a.orientation, b.orientation) < 1e-6


class TestPoseCompose:
    def test_identity_left(self):
        P = random_pose(np.random.default_rng(0))
        assert_pose_close(pose_compose(Pose.identity(), P), P)

    def test_inverse(self):
        P = random_pose(np.random.default_rng(1))
        I = pose_compose(P, P.inverse())
        assert np.allclose(I.position, 0, atol=1e-9)
        assert abs(abs(I.orientation[0]) - 1) < 1e-9

    def test_two_quarter_yaws_match_matrix_product(self):
        q90 = quat_from_axis_angle([0, 0, 1], math.pi / 2)
        a = Pose([0.0, 0, 0], q90)
        c = pose_compose(a, a)
        R_oracle = quat_to_matrix(q90) @ quat_to_matrix(q90)
        assert np.allclose(c.rotation, R_oracle, atol=1e-12)
        assert np.allclose(c.rotation, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)

    def test_norm_and_associativity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = pose_compose(pose_compose(a, b), c)
            right = pose_compose(a, pose_compose(b, c))
            assert abs(np.linalg.norm(left.orientation) - 1) < 1e-9
            assert np.allclose(left.position, right.position, atol=1e-9)
            assert np.allclose(left.orientation, right.orientation, atol=1e-9)

    def test_matrix_action(self):
        rng = np.random.default_rng(3)
        a, b = random_pose(rng), random_pose(rng)
        x = rng.standard_normal(3)
        c = pose_compose(a, b)
        expect = a.rotation @ (b.rotation @ x + b.position) + a.position
        assert np.allclose(c.rotation @ x + c.position, expect)


class TestGeodesic:
    def test_identical_and_double_cover(self):
        q = random_pose(np.random.default_rng(4)).orientation
        assert rotation_geodesic_deg(q, q) == pytest.approx(0, abs=1e-9)
        assert rotation_geodesic_deg(q, -q) == pytest.approx(0, abs=1e-9)

    def test_thirty_degrees_random_axis(self):
        rng = np.random.default_rng(5)
        axis = rng.standard_normal(3)
        q = quat_from_axis_angle(axis, math.radians(30))
        oracle = math.degrees(2 * math.acos(abs(np.dot([1, 0, 0, 0], q))))
        assert oracle == pytest.approx(30, abs=1e-6)
        assert rotation_geodesic_deg([1, 0, 0, 0], q) == pytest.approx(30, abs=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(unit_quats, unit_quats, unit_quats)
    def test_triangle_inequality_and_symmetry(self, a, b, c):
        ab, bc, ac = rotation_geodesic_deg(a, b), rotation_geodesic_deg(b, c), rotation_geodesic_deg(a, c)
        assert 0 <= ab <= 180
        assert ac <= ab + bc + 1e-6
        assert ab == pytest.approx(rotation_geodesic_deg(b, a), abs=1e-9)


class TestProjection:
    cam = CameraModel()

    def test_optical_axis(self):
        assert project([0, 0, 2.0], Pose.identity(), self.cam) == pytest.approx((320, 240))

    def test_behind(self):
        assert project([0, 0, -2.0], Pose.identity(), self.cam) is None

    def test_hand_pinhole(self):
        u = 400 * 0.5 / 2 + 320
        assert project([0.5, 0, 2.0], Pose.identity(), self.cam) == pytest.approx((u, 240))
        assert u == 420

    def test_outside_image_and_clip(self):
        assert project([10.0, 0, 2.0], Pose.identity(), self.cam) is None
        assert project([0, 0, 20.0], Pose.identity(), self.cam) is None
        assert project([0, 0, 0.05], Pose.identity(), self.cam) is None

    def test_camera_model_validation(self):
        with pytest.raises(ValueError):
            CameraModel(fx=-1)
        with pytest.raises(ValueError):
            CameraModel(cx=700)
        with pytest.raises(ValueError):
            CameraModel(near=2, far=1)

    def test_default_fov(self):
        assert self.cam.hfov_deg == pytest.approx(2 * math.degrees(math.atan(320 / 400)))


class TestPrincipalAxisAngle:
    def test_ahead_behind_45(self):
        P = Pose.from_yaw_pitch([1.0, 2.0, 0.5], 30.0, 0.0)
        f = P.forward
        assert principal_axis_angle_deg(P, P.position + 2 * f) == pytest.approx(0, abs=1e-9)
        assert principal_axis_angle_deg(P, P.position - 2 * f) == pytest.approx(180, abs=1e-9)
        side = np.array([-f[1], f[0], 0.0])
        target = P.position + f + side
        d = target - P.position
        oracle = math.degrees(math.acos(np.dot(d, f) / np.linalg.norm(d)))
        assert principal_axis_angle_deg(P, target) == pytest.approx(oracle, abs=1e-9)
        assert principal_axis_angle_deg(P, target) == pytest.approx(45, abs=1e-9)

    def test_coincident(self):
        with pytest.raises(DegenerateInputError):
            principal_axis_angle_deg(Pose.identity(), [0, 0, 0])

    def test_in_frustum_implies_inside_diagonal_fov(self):
        cam = CameraModel()
        rng = np.random.default_rng(6)
        half_diag = cam.half_diagonal_fov_deg
        for _ in range(20):
            P = random_pose(rng)
            pts = P.position + rng.uniform(-8, 8, (500, 3))
            _, ok = project_points(pts, P, cam)
            for x in pts[ok]:
                assert principal_axis_angle_deg(P, x) < half_diag


class TestSampling:
    def test_default_sampling_range(self):
        c = sample_viewpoints([1, 1, 0.5], 50, -10, 45, 0)
        assert len(c) == 50
        assert all(-10 <= v.pitch <= 45 for v in c)
        assert all(0 <= v.yaw < 360 for v in c)
        assert all(np.array_equal(v.pose.position, [1, 1, 0.5]) for v in c)
        assert [v.index for v in c] == list(range(50))

    def test_single_zero_pitch(self):
        (c,) = sample_viewpoints([0, 0, 0], 1, 0, 0, 3)
        assert c.pitch == 0.0

    def test_deterministic(self):
        a = sample_viewpoints([0, 0, 0], 20, -10, 45, 11)
        b = sample_viewpoints([0, 0, 0], 20, -10, 45, 11)
        assert [(x.yaw, x.pitch) for x in a] == [(x.yaw, x.pitch) for x in b]
        assert all(np.array_equal(x.pose.orientation, y.pose.orientation) for x, y in zip(a, b))

    def test_stratified_yaw(self):
        c = sample_viewpoints([0, 0, 0], 12, -10, 45, 1)
        assert [int(v.yaw // 30) for v in c] == list(range(12))

    def test_orientation_matches_yaw_pitch(self):
        for v in sample_viewpoints([0, 0, 0], 10, -10, 45, 2):
            f = v.pose.forward
            assert math.degrees(math.atan2(f[1], f[0])) % 360 == pytest.approx(v.yaw, abs=1e-9)
            assert math.degrees(math.asin(f[2])) == pytest.approx(v.pitch, abs=1e-9)

    def test_empty(self):
        with pytest.raises(EmptyRequestError):
            sample_viewpoints([0, 0, 0], 0)
