"""Localization oracle: synthetic 2D-3D observations and robust PnP.

``localize`` stands in for a full visual localization pipeline. Observations
are generated geometrically from the ground-truth scene, corrupted with
quality-dependent pixel noise and mismatches, and the pose is recovered by
P3P-RANSAC followed by Levenberg-Marquardt refinement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import CameraModel, Pose, angle_between_deg, rotation_geodesic_deg, skew, so3_exp
from .mapping import LandmarkMap
from .scene import OccupancyGrid, Scene, build_occupancy, rays_occluded


@dataclass(eq=False)
class World:
    """Ground-truth scene with its occupancy grid."""

    scene: Scene
    grid: OccupancyGrid

    @classmethod
    def from_scene(cls, scene, voxel_size=0.05):
        return cls(scene, build_occupancy(scene, voxel_size))

    def occluded_from(self, position, points):
        return rays_occluded(self.grid, position, self.grid.clip_inside(points))


@dataclass(frozen=True)
class NoiseConfig:
    pixel_sigma_base: float = 1.0
    outlier_rate_base: float = 0.1
    # viewpoint-dependent matching: landmarks seen far outside the direction
    # cone / distance range of the mapping pass fail to match; None disables
    match_angle_tol_deg: float | None = 20.0
    match_scale_tol: float | None = 0.5

    def __post_init__(self):
        if self.pixel_sigma_base < 0:
            raise ValueError("pixel_sigma_base must be non-negative")
        if not 0 <= self.outlier_rate_base < 1:
            raise ValueError("outlier_rate_base must be in [0, 1)")

    @classmethod
    def noiseless(cls):
        return cls(0.0, 0.0, None, None)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold_px: float = 3.0
    min_inliers: int = 6
    refine_iterations: int = 50


@dataclass(frozen=True, eq=False)
class Correspondence:
    landmark_id: int
    map_point: np.ndarray
    pixel: tuple
    is_outlier: bool = False


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    success: bool
    estimated_pose: Pose | None
    inlier_count: int
    pos_error_m: float = math.inf
    rot_error_deg: float = math.inf
    inlier_ids: tuple = field(default=(), repr=False)

    @classmethod
    def failure(cls, inlier_count=0, inlier_ids=()):
        return cls(False, None, inlier_count, math.inf, math.inf, tuple(inlier_ids))

    def within(self, dist_m, angle_deg):
        return self.success and self.pos_error_m <= dist_m and self.rot_error_deg <= angle_deg


def pose_error(estimated: Pose, truth: Pose):
    """Euclidean position error (m) and geodesic rotation error (deg)."""
    return (float(np.linalg.norm(estimated.position - truth.position)),
            rotation_geodesic_deg(estimated.orientation, truth.orientation))


def match_probability(lmap: LandmarkMap, idx, camera_position, true_points, noise: NoiseConfig):
    """Chance that each landmark is re-detected from ``camera_position``."""
    p = np.ones(len(idx))
    rel = camera_position - true_points
    if noise.match_angle_tol_deg is not None:
        dev = angle_between_deg(rel, lmap.mean_view_dir[idx])
        excess = np.maximum(0.0, dev - lmap.cone_half_angle[idx])
        p *= np.exp(-(excess / noise.match_angle_tol_deg) ** 2)
    if noise.match_scale_tol is not None:
        d = np.linalg.norm(rel, axis=1)
        over = np.log(np.maximum(d / lmap.dist_max[idx], 1.0))
        under = np.log(np.maximum(lmap.dist_min[idx] / d, 1.0))
        p *= np.exp(-((over + under) / noise.match_scale_tol) ** 2)
    return p


def observe(world: World, lmap: LandmarkMap, true_pose: Pose, cam: CameraModel, noise_config: NoiseConfig,
            rng, occluded=None):
    """Correspondences seen from ``true_pose``.

    Random draws are made for every mapped landmark in map order, so the
    stream consumed does not depend on which landmarks are visible.
    ``occluded`` optionally supplies the per-landmark occlusion mask for the
    true position.
    """
    n = len(lmap)
    pix_noise = rng.standard_normal((n, 2))
    out_draw = rng.random(n)
    out_pix = rng.random((n, 2)) * [cam.width, cam.height]
    match_draw = rng.random(n)
    if n == 0:
        return []
    true_pts = world.scene.landmark_positions[lmap.ids]
    uv, ok = cam.project_camera_points(true_pose.to_camera(true_pts))
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return []
    if occluded is None:
        occ = world.occluded_from(true_pose.position, true_pts[idx])
    else:
        occ = np.asarray(occluded, dtype=bool)[idx]
    idx = idx[~occ]
    if len(idx) == 0:
        return []
    pm = match_probability(lmap, idx, true_pose.position, true_pts[idx], noise_config)
    idx = idx[match_draw[idx] < pm]
    q = world.scene.landmark_quality[lmap.ids[idx]]
    sigma = noise_config.pixel_sigma_base * (2.0 - q)
    pix = uv[idx] + sigma[:, None] * pix_noise[idx]
    is_out = out_draw[idx] < noise_config.outlier_rate_base * (2.0 - q) / 2.0
    pix[is_out] = out_pix[idx][is_out]
    pix[:, 0] = np.clip(pix[:, 0], 0.0, np.nextafter(cam.width, 0))
    pix[:, 1] = np.clip(pix[:, 1], 0.0, np.nextafter(cam.height, 0))
    return [
        Correspondence(int(lmap.ids[i]), lmap.positions[i], (float(u), float(v)), bool(o))
        for i, (u, v), o in zip(idx, pix, is_out)
    ]


def bearings(pixels, cam: CameraModel):
    pixels = np.asarray(pixels, dtype=float)
    b = np.stack([(pixels[..., 0] - cam.cx) / cam.fx, (pixels[..., 1] - cam.cy) / cam.fy,
                  np.ones(pixels.shape[:-1])], axis=-1)
    return b / np.linalg.norm(b, axis=-1, keepdims=True)


def _quartic_real_roots(coef):
    """Real roots of a batch of quartics ``coef[:, 0] x^4 + ... + coef[:, 4]``."""
    h = coef.shape[0]
    lead = coef[:, 0]
    good = np.abs(lead) > 1e-12 * np.max(np.abs(coef), axis=1)
    roots = np.full((h, 4), np.nan)
    if not good.any():
        return roots
    c = coef[good] / lead[good, None]
    comp = np.zeros((len(c), 4, 4))
    comp[:, 0, :] = -c[:, 1:]
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    ev = np.linalg.eigvals(comp)
    real = np.abs(ev.imag) <= 1e-6 * np.maximum(1.0, np.abs(ev.real))
    roots[good] = np.where(real, ev.real, np.nan)
    return roots


def p3p(f, P):
    """Grunert's three-point solver, batched.

    Parameters
    ----------
    f : (H, 3, 3) unit bearing vectors, one row per point.
    P : (H, 3, 3) world points.

    Returns
    -------
    R, t : (H, 4, 3, 3) and (H, 4, 3) world-to-camera solutions, and a
    ``(H, 4)`` validity mask.
    """
    a = np.linalg.norm(P[:, 1] - P[:, 2], axis=1)
    b = np.linalg.norm(P[:, 0] - P[:, 2], axis=1)
    c = np.linalg.norm(P[:, 0] - P[:, 1], axis=1)
    ca = np.sum(f[:, 1] * f[:, 2], axis=1)
    cb = np.sum(f[:, 0] * f[:, 2], axis=1)
    cg = np.sum(f[:, 0] * f[:, 1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a2, b2, c2 = a * a, b * b, c * c
        amc = (a2 - c2) / b2
        apc = (a2 + c2) / b2
        A4 = (amc - 1) ** 2 - 4 * c2 / b2 * ca**2
        A3 = 4 * (amc * (1 - amc) * cb - (1 - apc) * ca * cg + 2 * c2 / b2 * ca**2 * cb)
        A2 = 2 * (amc**2 - 1 + 2 * amc**2 * cb**2 + 2 * (b2 - c2) / b2 * ca**2
                  - 4 * apc * ca * cb * cg + 2 * (b2 - a2) / b2 * cg**2)
        A1 = 4 * (-amc * (1 + amc) * cb + 2 * a2 / b2 * cg**2 * cb - (1 - apc) * ca * cg)
        A0 = (1 + amc) ** 2 - 4 * a2 / b2 * cg**2
        coef = np.stack([A4, A3, A2, A1, A0], axis=1)
        coef = np.where(np.isfinite(coef), coef, 0.0)
        v = _quartic_real_roots(coef)
        u = (((-1 + amc)[:, None] * v * v - 2 * (amc * cb)[:, None] * v + (1 + amc)[:, None])
             / (2 * (cg[:, None] - v * ca[:, None])))
        s1 = np.sqrt(b2[:, None] / (1 + v * v - 2 * v * cb[:, None]))
    valid = np.isfinite(v) & np.isfinite(u) & np.isfinite(s1) & (v > 0) & (u > 0)
    s = np.stack([s1, u * s1, v * s1], axis=-1)
    s = np.where(valid[..., None], s, 1.0)
    Xc = s[..., :, None] * f[:, None, :, :]
    R, t = _rigid_align(np.broadcast_to(P[:, None], Xc.shape), Xc)
    return R, t, valid


def _rigid_align(src, dst):
    """Least-squares rotation and translation with ``dst ≈ R src + t`` (batched Kabsch)."""
    ms = src.mean(axis=-2)
    md = dst.mean(axis=-2)
    H = np.swapaxes(src - ms[..., None, :], -1, -2) @ (dst - md[..., None, :])
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.swapaxes(Vt, -1, -2) @ np.swapaxes(U, -1, -2)))
    D = np.zeros(H.shape)
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = np.where(d == 0, 1.0, d)
    R = np.swapaxes(Vt, -1, -2) @ D @ np.swapaxes(U, -1, -2)
    t = md - np.einsum("...ij,...j->...i", R, ms)
    return R, t


def _reproject(R, t, P, cam):
    """Pixels of world points under world-to-camera ``(R, t)``; broadcasts over hypotheses."""
    Xc = np.einsum("...ij,nj->...ni", R, P) + t[..., None, :]
    z = Xc[..., 2]
    zs = np.where(z > 1e-9, z, 1.0)
    uv = np.stack([cam.fx * Xc[..., 0] / zs + cam.cx, cam.fy * Xc[..., 1] / zs + cam.cy], axis=-1)
    return uv, z > 1e-9


def _reproj_errors(R, t, P, uv, cam):
    proj, front = _reproject(R, t, P, cam)
    err = np.linalg.norm(proj - uv, axis=-1)
    return np.where(front, err, np.inf)


def refine_pose(R, t, P, uv, cam, iterations=50, return_costs=False):
    """Levenberg-Marquardt refinement of a world-to-camera pose.

    The update is a right-multiplied perturbation of the camera-to-world
    pose; steps are only accepted when they lower the squared reprojection
    cost.
    """
    Rwc = R.T
    p = -R.T @ t
    lam = 1e-3

    def residuals(Rwc, p):
        Xc = (P - p) @ Rwc
        z = Xc[:, 2]
        if np.any(z <= 1e-9):
            return None, Xc
        r = np.column_stack([cam.fx * Xc[:, 0] / z + cam.cx, cam.fy * Xc[:, 1] / z + cam.cy]) - uv
        return r, Xc

    r, Xc = residuals(Rwc, p)
    if r is None:
        return R, t, ([math.inf] if return_costs else None)
    cost = float(np.sum(r * r))
    costs = [cost]
    for _ in range(iterations):
        J = projection_jacobian(Xc, cam)
        A = np.einsum("nki,nkj->ij", J, J)
        g = np.einsum("nki,nk->i", J, r)
        improved = False
        for _ in range(10):
            delta = -np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-12), g)
            R_new = Rwc @ so3_exp(delta[:3])
            p_new = p + Rwc @ delta[3:]
            r_new, Xc_new = residuals(R_new, p_new)
            if r_new is not None:
                c_new = float(np.sum(r_new * r_new))
                if c_new < cost:
                    Rwc, p, r, Xc, cost = R_new, p_new, r_new, Xc_new, c_new
                    lam = max(lam / 10.0, 1e-12)
                    improved = True
                    costs.append(cost)
                    break
            lam *= 10.0
        if not improved or np.linalg.norm(delta) < 1e-14:
            break
    U, _, Vt = np.linalg.svd(Rwc)
    Rwc = U @ Vt
    R_out = Rwc.T
    t_out = -R_out @ p
    return (R_out, t_out, costs) if return_costs else (R_out, t_out)


def projection_jacobian(Xc, cam: CameraModel):
    """``(n, 2, 6)`` pixel Jacobians w.r.t. a right-multiplied pose perturbation (rotation, translation)."""
    Xc = np.atleast_2d(Xc)
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    n = len(Xc)
    Jp = np.zeros((n, 2, 3))
    Jp[:, 0, 0] = cam.fx / z
    Jp[:, 0, 2] = -cam.fx * x / z**2
    Jp[:, 1, 1] = cam.fy / z
    Jp[:, 1, 2] = -cam.fy * y / z**2
    # d Xc / d omega = [Xc]_x ;  d Xc / d tau = -I
    Sx = np.zeros((n, 3, 3))
    Sx[:, 0, 1], Sx[:, 0, 2] = -z, y
    Sx[:, 1, 0], Sx[:, 1, 2] = z, -x
    Sx[:, 2, 0], Sx[:, 2, 1] = -y, x
    return np.concatenate([Jp @ Sx, -Jp], axis=2)


def estimate_pose(correspondences, cam: CameraModel, ransac_config: RansacConfig = RansacConfig(),
                  true_pose: Pose | None = None, rng=None) -> LocalizationResult:
    """P3P-RANSAC with a fourth point to pick among the P3P roots, then LM refinement."""
    cfg = ransac_config
    n = len(correspondences)
    if n < 4:
        return LocalizationResult.failure()
    rng = rng if rng is not None else np.random.default_rng(0)
    P = np.array([c.map_point for c in correspondences], dtype=float)
    uv = np.array([c.pixel for c in correspondences], dtype=float)
    ids = np.array([c.landmark_id for c in correspondences])
    f = bearings(uv, cam)

    samples = np.argsort(rng.random((cfg.iterations, n)), axis=1)[:, :4]
    R, t, valid = p3p(f[samples[:, :3]], P[samples[:, :3]])
    # fourth point disambiguates the up-to-four roots
    Xc4 = np.einsum("hsij,hj->hsi", R, P[samples[:, 3]]) + t
    z4 = Xc4[..., 2]
    zs4 = np.where(z4 > 1e-9, z4, 1.0)
    pr4 = np.stack([cam.fx * Xc4[..., 0] / zs4 + cam.cx, cam.fy * Xc4[..., 1] / zs4 + cam.cy], axis=-1)
    e4 = np.linalg.norm(pr4 - uv[samples[:, 3]][:, None, :], axis=-1)
    e4 = np.where(valid & (z4 > 1e-9) & np.isfinite(e4), e4, np.inf)
    best_root = np.argmin(e4, axis=1)
    hyp_ok = np.isfinite(e4[np.arange(len(e4)), best_root])
    if not hyp_ok.any():
        return LocalizationResult.failure()
    Rh = R[np.arange(len(R)), best_root][hyp_ok]
    th = t[np.arange(len(t)), best_root][hyp_ok]
    err = _reproj_errors(Rh, th, P, uv, cam)
    inl = err < cfg.inlier_threshold_px
    counts = inl.sum(axis=1)
    score = np.where(inl, err, 0.0).sum(axis=1)
    order = np.lexsort((score, -counts))
    k = order[0]
    Rb, tb = Rh[k], th[k]
    mask = inl[k]
    if mask.sum() < 4:
        return LocalizationResult.failure(int(mask.sum()), ids[mask])
    for _ in range(2):
        Rb, tb = refine_pose(Rb, tb, P[mask], uv[mask], cam, cfg.refine_iterations)
        new_mask = _reproj_errors(Rb, tb, P, uv, cam) < cfg.inlier_threshold_px
        if new_mask.sum() < 4 or np.array_equal(new_mask, mask):
            mask = new_mask if new_mask.sum() >= 4 else mask
            break
        mask = new_mask
    count = int(mask.sum())
    if count < cfg.min_inliers:
        return LocalizationResult.failure(count, ids[mask])
    est = Pose.from_matrix(Rb.T, -Rb.T @ tb)
    if true_pose is None:
        return LocalizationResult(True, est, count, math.nan, math.nan, tuple(ids[mask].tolist()))
    pe, re = pose_error(est, true_pose)
    return LocalizationResult(True, est, count, pe, re, tuple(ids[mask].tolist()))


def localize(world: World, lmap: LandmarkMap, pose: Pose, cam: CameraModel,
             noise_config: NoiseConfig = NoiseConfig(), ransac_config: RansacConfig = RansacConfig(),
             rng=None, occluded=None) -> LocalizationResult:
    """Observe from ``pose`` and localize against the map; deterministic per ``rng`` seed."""
    rng = rng if rng is not None else np.random.default_rng(0)
    obs_rng, est_rng = rng.spawn(2)
    corr = observe(world, lmap, pose, cam, noise_config, obs_rng, occluded=occluded)
    return estimate_pose(corr, cam, ransac_config, pose, est_rng)


@dataclass(frozen=True)
class OracleConfig:
    noise: NoiseConfig = NoiseConfig()
    ransac: RansacConfig = RansacConfig()

    @classmethod
    def from_dict(cls, d):
        return cls(NoiseConfig(**d.get("noise", {})), RansacConfig(**d.get("ransac", {})))

    def to_dict(self):
        return {"noise": vars(self.noise).copy(), "ransac": vars(self.ransac).copy()}
