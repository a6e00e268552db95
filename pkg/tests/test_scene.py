import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeloc.errors import ConfigError, OutOfBoundsError, SchemaError
from activeloc.geom import CameraModel, Pose
from activeloc.scene import (Box, OccupancyGrid, Scene, SceneConfig, build_occupancy, gen_scene, ray_occluded,
                             rays_occluded, visible, visible_mask)


def sampled_occluded(grid, a, b, step=1e-3):
    """Fine-step sampling oracle for segment occlusion (endpoint voxels excluded)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
    pts = a + np.linspace(0, 1, n + 1)[:, None] * (b - a)
    vox = np.floor((pts - grid.origin) / grid.voxel_size).astype(int)
    vox = np.clip(vox, 0, np.asarray(grid.dims) - 1)
    va, vb = vox[0], vox[-1]
    keep = ~(np.all(vox == va, axis=1) | np.all(vox == vb, axis=1))
    v = vox[keep]
    return bool(grid.occupancy[v[:, 0], v[:, 1], v[:, 2]].any())


def random_grid(rng, dims=(20, 20, 10), vs=0.1, fill=0.08):
    occ = rng.random(dims) < fill
    return OccupancyGrid(np.zeros(3), vs, dims, occ)


def empty_scene(n=20, seed=0, occluders=()):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([0, 0, 0], [8, 8, 3], (n, 3))
    return Scene(np.zeros(3), np.array([8.0, 8, 3]), list(occluders), pts, rng.random(n), seed)


class TestGenScene:
    def test_deterministic(self):
        a, b = gen_scene(SceneConfig(), 5), gen_scene(SceneConfig(), 5)
        assert a.to_json() == b.to_json()
        assert gen_scene(SceneConfig(), 6).to_json() != a.to_json()

    def test_invariants(self):
        s = gen_scene(SceneConfig(), 1)
        assert np.all(s.landmark_positions >= s.bounds_lo) and np.all(s.landmark_positions <= s.bounds_hi)
        assert np.all((s.landmark_quality >= 0) & (s.landmark_quality <= 1))
        assert list(s.landmark_ids) == list(range(s.n_landmarks))
        assert s.n_landmarks == SceneConfig().n_landmarks

    def test_infeasible(self):
        with pytest.raises(ConfigError):
            gen_scene(SceneConfig(n_landmarks=0), 0)
        with pytest.raises(ConfigError):
            gen_scene(SceneConfig(room_size=(1.0, 1.0, 3.0)), 0)
        with pytest.raises(ConfigError):
            SceneConfig.from_dict({"bogus": 1})

    def test_no_occluders_nothing_occluded(self):
        s = gen_scene(SceneConfig(n_low=0, n_tall=0), 2)
        g = build_occupancy(s, 0.1)
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = rng.uniform([0.2, 0.2, 0.2], [7.8, 7.8, 2.8])
            assert not rays_occluded(g, p, g.clip_inside(s.landmark_positions)).any()

    def test_robot_height_sees_less(self):
        cfg = SceneConfig(n_landmarks=300, n_low=10)
        s = gen_scene(cfg, 3)
        g = build_occupancy(s)
        rng = np.random.default_rng(1)
        low, high = [], []
        pts = g.clip_inside(s.landmark_positions)
        while len(low) < 100:
            xy = rng.uniform(0.3, 7.7, 2)
            a, b = np.r_[xy, 0.5], np.r_[xy, 1.6]
            if not (g.is_free(a, 0.2) and g.is_free(b, 0.2)):
                continue
            low.append((~rays_occluded(g, a, pts)).mean())
            high.append((~rays_occluded(g, b, pts)).mean())
        assert np.mean(low) < np.mean(high)

    def test_json_roundtrip(self):
        s = gen_scene(SceneConfig(), 4)
        t = Scene.from_json(s.to_json())
        assert t.to_json() == s.to_json()
        with pytest.raises(SchemaError):
            Scene.from_json('{"schema": "other"}')

    def test_scene_validation(self):
        with pytest.raises(ValueError):
            Scene(np.zeros(3), np.ones(3), [], [[2.0, 0, 0]], [0.5])
        with pytest.raises(ValueError):
            Scene(np.zeros(3), np.ones(3), [], [[0.5, 0.5, 0.5]], [1.5])


class TestOccupancy:
    def test_dims(self):
        g = build_occupancy(empty_scene(), 0.05)
        assert g.dims == (160, 160, 60)
        assert np.all(np.asarray(g.dims) * g.voxel_size >= np.array([8, 8, 3]) - 1e-9)

    def test_empty_all_free(self):
        assert not build_occupancy(empty_scene(), 0.1).occupancy.any()

    def test_unit_box_point_in_box_oracle(self):
        box = Box((2.03, 3.01, 0.0), (3.03, 4.01, 1.0))
        g = build_occupancy(empty_scene(occluders=[box]), 0.1)
        for i in range(g.dims[0]):
            for j in range(g.dims[1]):
                for k in range(0, 15):
                    c = g.origin + (np.array([i, j, k]) + 0.5) * g.voxel_size
                    assert g.occupancy[i, j, k] == bool(box.contains(c))
        assert g.occupancy[:, :, 15:].sum() == 0

    def test_degraded_flag(self):
        box = Box((1.0, 1.0, 0.0), (1.2, 3.0, 1.0))
        with pytest.warns(UserWarning):
            g = build_occupancy(empty_scene(occluders=[box]), 0.3)
        assert g.degraded
        assert not build_occupancy(empty_scene(occluders=[box]), 0.05).degraded

    def test_bytes_roundtrip(self):
        g = random_grid(np.random.default_rng(0), dims=(7, 5, 3))
        blob = g.to_bytes()
        h = OccupancyGrid.from_bytes(blob)
        assert h.dims == g.dims and np.array_equal(h.occupancy, g.occupancy)
        assert h.to_bytes() == blob


class TestRayOcclusion:
    def test_same_point(self):
        g = random_grid(np.random.default_rng(1), fill=0.5)
        assert not ray_occluded(g, [1.0, 1.0, 0.5], [1.0, 1.0, 0.5])

    def test_slab(self):
        occ = np.zeros((20, 20, 10), bool)
        occ[10] = True
        g = OccupancyGrid(np.zeros(3), 0.1, (20, 20, 10), occ)
        assert ray_occluded(g, [0.5, 1.0, 0.5], [1.8, 1.0, 0.5])
        assert not ray_occluded(g, [0.5, 1.0, 0.5], [0.9, 1.5, 0.5])

    def test_endpoint_voxels_excluded(self):
        occ = np.zeros((20, 20, 10), bool)
        occ[10, 10, 5] = True
        g = OccupancyGrid(np.zeros(3), 0.1, (20, 20, 10), occ)
        assert not ray_occluded(g, [1.05, 1.05, 0.55], [0.2, 0.2, 0.2])

    def test_out_of_bounds(self):
        g = random_grid(np.random.default_rng(2))
        with pytest.raises(OutOfBoundsError):
            ray_occluded(g, [-0.5, 0, 0], [1, 1, 0.5])

    def test_matches_sampling_oracle(self):
        rng = np.random.default_rng(3)
        g = random_grid(rng)
        hi = np.asarray(g.dims) * g.voxel_size
        a = rng.uniform(0, hi, (1000, 3))
        b = rng.uniform(0, hi, (1000, 3))
        grazes = 0
        for x, y in zip(a, b):
            got = ray_occluded(g, x, y)
            if got != sampled_occluded(g, x, y):
                # a 1 mm step can skip a sub-millimetre corner clip; a 10 um step must not
                assert got == sampled_occluded(g, x, y, step=1e-5)
                grazes += 1
        assert grazes <= 2

    def test_batched_matches_single(self):
        rng = np.random.default_rng(4)
        g = random_grid(rng)
        hi = np.asarray(g.dims) * g.voxel_size
        s = rng.uniform(0, hi)
        ends = rng.uniform(0, hi, (200, 3))
        assert list(rays_occluded(g, s, ends)) == [ray_occluded(g, s, e) for e in ends]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        g = random_grid(rng, dims=(10, 10, 6), fill=0.15)
        hi = np.asarray(g.dims) * g.voxel_size
        a, b = rng.uniform(0, hi), rng.uniform(0, hi)
        assert ray_occluded(g, a, b) == ray_occluded(g, b, a)


class TestVisibility:
    cam = CameraModel()

    def test_behind_and_ahead(self):
        s = empty_scene()
        g = build_occupancy(s, 0.1)
        pose = Pose.from_yaw_pitch([4.0, 4.0, 1.0], 0.0, 0.0)
        assert visible(g, pose, self.cam, pose.position + pose.forward)
        assert not visible(g, pose, self.cam, pose.position - pose.forward)

    def test_table_blocks_robot_not_head(self):
        table = Box((3.0, 3.5, 0.0), (3.6, 4.5, 0.8))
        s = empty_scene(occluders=[table])
        g = build_occupancy(s, 0.05)
        landmark = np.array([5.5, 4.0, 0.3])
        robot = Pose.from_yaw_pitch([2.0, 4.0, 0.5], 0.0, 0.0)
        head = Pose.from_yaw_pitch([2.0, 4.0, 1.6], 0.0, -20.0)
        got = (visible(g, robot, self.cam, landmark), visible(g, head, self.cam, landmark))
        oracle = (not sampled_occluded(g, robot.position, landmark), not sampled_occluded(g, head.position, landmark))
        assert got == oracle == (False, True)

    def test_occlusion_subset_and_removal_monotone(self):
        s = gen_scene(SceneConfig(), 7)
        g = build_occupancy(s)
        fewer = Scene(s.bounds_lo, s.bounds_hi, s.occluders[1:], s.landmark_positions, s.landmark_quality, s.seed)
        g2 = build_occupancy(fewer)
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = rng.uniform([0.5, 0.5, 0.3], [7.5, 7.5, 2.0])
            if not g.is_free(p):
                continue
            pose = Pose.from_yaw_pitch(p, rng.uniform(0, 360), rng.uniform(-10, 45))
            pts = g.clip_inside(s.landmark_positions)
            occl = visible_mask(g, pose, self.cam, pts)
            frustum = visible_mask(g, pose, self.cam, pts, occlusion=False)
            assert np.all(frustum[occl])
            assert np.all(visible_mask(g2, pose, self.cam, pts)[occl])
