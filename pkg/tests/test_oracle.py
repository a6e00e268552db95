import math

import numpy as np
import pytest

from activeloc.geom import CameraModel, Pose, project_points, quat_from_axis_angle
from activeloc.mapping import simulate_mapping
from activeloc.oracle import (Correspondence, LocalizationResult, NoiseConfig, OracleConfig, RansacConfig, World,
                              estimate_pose, localize, observe, p3p, bearings, pose_error, refine_pose)
from activeloc.scene import Scene

CAM = CameraModel()


def wall_world(n=200, quality=None, seed=0):
    """Open room with landmarks scattered over the far wall x = 8."""
    rng = np.random.default_rng(seed)
    pts = np.column_stack([np.full(n, 7.99), rng.uniform(1, 7, n), rng.uniform(0.2, 2.8, n)])
    q = rng.random(n) if quality is None else np.broadcast_to(quality, (n,)).astype(float)
    scene = Scene(np.zeros(3), np.array([8.0, 8, 3]), [], pts, q, seed)
    world = World.from_scene(scene, 0.1)
    viewer = Pose.from_yaw_pitch([3.0, 4.0, 1.5], 0, 0)
    lmap = simulate_mapping(scene, [viewer], CAM, 0.0, 1, grid=world.grid)
    return world, lmap, viewer


def exact_correspondences(pose, n, rng, depth=(2, 8)):
    uv = rng.uniform([20, 20], [620, 460], (n, 2))
    z = rng.uniform(*depth, n)
    xc = np.column_stack([(uv[:, 0] - CAM.cx) / CAM.fx * z, (uv[:, 1] - CAM.cy) / CAM.fy * z, z])
    Xw = xc @ pose.rotation.T + pose.position
    return [Correspondence(i, Xw[i], tuple(uv[i])) for i in range(n)], Xw, uv


def random_pose(rng):
    q = rng.standard_normal(4)
    return Pose(rng.uniform(-3, 3, 3), q / np.linalg.norm(q))


class TestPoseError:
    def test_identical(self):
        P = Pose.from_yaw_pitch([1, 2, 3], 40, 10)
        assert pose_error(P, P) == (0.0, 0.0)

    def test_offset_and_flip(self):
        P = Pose.identity()
        assert pose_error(Pose([0.1, 0, 0], P.orientation), P) == pytest.approx((0.1, 0))
        flip = Pose([0, 0, 0], quat_from_axis_angle([0, 0, 1], math.pi))
        assert pose_error(flip, P) == pytest.approx((0, 180))

    def test_sign_invariant(self):
        P = Pose.from_yaw_pitch([1, 2, 3], 40, 10)
        assert pose_error(Pose(P.position, -P.orientation), P) == pytest.approx((0, 0), abs=1e-9)


class TestP3P:
    def test_recovers_truth_among_roots(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            truth = random_pose(rng)
            _, Xw, uv = exact_correspondences(truth, 3, rng)
            R, t, valid = p3p(bearings(uv, CAM)[None], Xw[None])
            Rt = truth.rotation.T
            tt = -Rt @ truth.position
            errs = [np.abs(R[0, k] - Rt).max() + np.abs(t[0, k] - tt).max() for k in range(4) if valid[0, k]]
            assert min(errs) < 1e-6


class TestEstimatePose:
    def test_noiseless_exact(self):
        rng = np.random.default_rng(1)
        truth = random_pose(rng)
        corr, _, _ = exact_correspondences(truth, 20, rng)
        r = estimate_pose(corr, CAM, RansacConfig(), truth, np.random.default_rng(0))
        assert r.success and r.pos_error_m < 1e-6 and r.rot_error_deg < 1e-6

    def test_three_correspondences_fail(self):
        rng = np.random.default_rng(2)
        corr, _, _ = exact_correspondences(Pose.identity(), 3, rng)
        r = estimate_pose(corr, CAM)
        assert not r.success and r.pos_error_m == math.inf

    def test_success_implies_min_inliers(self):
        rng = np.random.default_rng(3)
        for n in (4, 5, 6, 10):
            corr, _, _ = exact_correspondences(Pose.identity(), n, rng)
            r = estimate_pose(corr, CAM, RansacConfig(min_inliers=6), Pose.identity())
            assert r.success == (n >= 6)
            if r.success:
                assert r.inlier_count >= 6

    def test_outliers_rejected(self):
        rng = np.random.default_rng(4)
        clean = 0
        for trial in range(100):
            truth = random_pose(rng)
            corr, Xw, uv = exact_correspondences(truth, 30, rng)
            uv = uv + rng.standard_normal(uv.shape)
            out = rng.choice(30, 6, replace=False)
            uv[out] = rng.uniform([0, 0], [640, 480], (6, 2))
            corr = [Correspondence(i, Xw[i], tuple(uv[i]), i in out) for i in range(30)]
            r = estimate_pose(corr, CAM, RansacConfig(), truth, np.random.default_rng(trial))
            clean += r.success and not set(out.tolist()) & set(r.inlier_ids)
        assert clean >= 95

    def test_refinement_descends(self):
        rng = np.random.default_rng(5)
        truth = random_pose(rng)
        _, Xw, uv = exact_correspondences(truth, 25, rng)
        uv = uv + 2.0 * rng.standard_normal(uv.shape)
        perturbed = Pose(truth.position + 0.05, truth.orientation)
        R = perturbed.rotation.T
        t = -R @ perturbed.position
        _, _, costs = refine_pose(R, t, Xw, uv, CAM, 50, return_costs=True)
        assert len(costs) > 1
        assert all(b < a for a, b in zip(costs, costs[1:]))


class TestObserve:
    def test_nothing_visible(self):
        world, lmap, viewer = wall_world()
        back = Pose.from_yaw_pitch(viewer.position, 180, 0)
        assert observe(world, lmap, back, CAM, NoiseConfig(), np.random.default_rng(0)) == []
        assert not localize(world, lmap, back, CAM, rng=np.random.default_rng(0)).success

    def test_noiseless_exact_pixels(self):
        world, lmap, viewer = wall_world()
        corr = observe(world, lmap, viewer, CAM, NoiseConfig.noiseless(), np.random.default_rng(0))
        assert len(corr) == len(lmap)
        true = world.scene.landmark_positions[[c.landmark_id for c in corr]]
        uv, ok = project_points(true, viewer, CAM)
        assert ok.all()
        assert np.allclose(np.array([c.pixel for c in corr]), uv, atol=1e-9)

    def test_pixels_inside_image(self):
        world, lmap, viewer = wall_world()
        corr = observe(world, lmap, viewer, CAM, NoiseConfig(5.0, 0.5), np.random.default_rng(1))
        px = np.array([c.pixel for c in corr])
        assert np.all((px >= 0) & (px < [CAM.width, CAM.height]))

    def test_quality_noise_ratio(self):
        stds = {}
        for q in (1.0, 0.0):
            world, lmap, viewer = wall_world(100, quality=q)
            true = world.scene.landmark_positions[lmap.ids]
            uv, _ = project_points(true, viewer, CAM)
            errs = []
            for s in range(100):
                corr = observe(world, lmap, viewer, CAM, NoiseConfig(1.0, 0.0, None, None), np.random.default_rng(s))
                px = np.array([c.pixel for c in corr])
                errs.append(px - uv)
            stds[q] = np.concatenate(errs).std()
        assert stds[0.0] / stds[1.0] == pytest.approx(2.0, rel=0.05)


class TestLocalize:
    def test_textbook_view(self):
        world, lmap, _ = wall_world(300)
        viewer = Pose.from_yaw_pitch([5.0, 4.0, 1.5], 0, 0)
        good = sum(localize(world, lmap, viewer, CAM, NoiseConfig(0.5, 0.05, None, None), RansacConfig(),
                            np.random.default_rng(s)).pos_error_m < 0.05 for s in range(100))
        assert good >= 90

    def test_deterministic(self):
        world, lmap, viewer = wall_world()
        a = localize(world, lmap, viewer, CAM, rng=np.random.default_rng(7))
        b = localize(world, lmap, viewer, CAM, rng=np.random.default_rng(7))
        assert (a.pos_error_m, a.rot_error_deg, a.inlier_ids) == (b.pos_error_m, b.rot_error_deg, b.inlier_ids)

    def test_monotone_degradation(self):
        world, lmap, viewer = wall_world(150)
        meds = []
        for sigma in (0.5, 1, 2, 4):
            errs = [localize(world, lmap, viewer, CAM, NoiseConfig(sigma, 0.1), RansacConfig(),
                             np.random.default_rng(s)).pos_error_m for s in range(40)]
            meds.append(np.median(errs))
        assert meds == sorted(meds)

    def test_failure_sentinel(self):
        r = LocalizationResult.failure(2)
        assert r.pos_error_m == math.inf and not r.within(1e9, 1e9)

    def test_config_roundtrip(self):
        c = OracleConfig(NoiseConfig(2.0, 0.2), RansacConfig(iterations=50))
        assert OracleConfig.from_dict(c.to_dict()) == c
