import numpy as np
import pytest

from activeloc.geom import CameraModel
from activeloc.mapping import LandmarkMap, make_mapping_trajectory, simulate_mapping
from activeloc.oracle import World
from activeloc.scene import SceneConfig, gen_scene


def random_map(n, rng, d_app=8, spread=6.0):
    """A landmark map with random positions and statistics, detached from any scene."""
    pos = rng.uniform(-spread, spread, (n, 3))
    d = rng.standard_normal((n, d_app))
    dmin = rng.uniform(0.5, 4, n)
    amin = rng.uniform(0, 30, n)
    mvd = rng.standard_normal((n, 3))
    return LandmarkMap(np.arange(n), pos, d / np.linalg.norm(d, axis=1, keepdims=True), dmin,
                       dmin + rng.uniform(0, 4, n), amin, amin + rng.uniform(0, 30, n),
                       mvd / np.linalg.norm(mvd, axis=1, keepdims=True), rng.uniform(0, 60, n),
                       rng.integers(1, 10, n))


@pytest.fixture(scope="session")
def small_world():
    """One generated scene, its occupancy grid and a head-height map."""
    scene = gen_scene(SceneConfig(), 21)
    world = World.from_scene(scene)
    traj = make_mapping_trajectory(scene, 1.6, 40, seed=21, grid=world.grid)
    lmap = simulate_mapping(scene, traj, CameraModel(), 0.01, 2, np.random.default_rng(21), grid=world.grid)
    return world, lmap
