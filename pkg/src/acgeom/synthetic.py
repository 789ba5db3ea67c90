"""Synthetic two-view scenes and patch pairs with exact ground truth.

Inlier correspondences are generated to satisfy the ground-truth models
exactly before noise injection; the local affinity of each match is the
exact differential of the plane-induced projective map at the keypoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateSampleError
from .geometry import (
    AffineCorrespondence,
    CameraIntrinsics,
    EssentialMatrix,
    FundamentalMatrix,
    Homography,
    PointCorrespondence,
    affinity_from_homography,
    fundamental_from_essential,
    homography_from_plane,
    rotation_from_vector,
)


def default_intrinsics(image_size=(800, 600), focal=800.0):
    w, h = image_size
    return CameraIntrinsics(np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]]))


@dataclass
class SceneConfig:
    """Parameters of a synthetic two-view scene."""

    image_size: tuple = (800, 600)
    k1: CameraIntrinsics = None
    k2: CameraIntrinsics = None
    rotation: np.ndarray = None          # camera-2 from camera-1
    translation: np.ndarray = None
    scene: str = "plane"                 # "plane" or "points"
    plane_normal: np.ndarray = None      # plane n . X = d in camera-1 frame
    plane_depth: float = 6.0
    depth_range: tuple = (4.0, 10.0)
    n_correspondences: int = 100
    outlier_ratio: float = 0.0
    noise_px: float = 0.0
    noise_affine: float = 0.0            # relative perturbation of A
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.outlier_ratio < 1.0):
            raise ValueError("outlier_ratio must be in [0, 1)")
        if self.noise_px < 0 or self.noise_affine < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.k1 is None:
            self.k1 = default_intrinsics(self.image_size)
        if self.k2 is None:
            self.k2 = default_intrinsics(self.image_size)
        if self.rotation is None:
            self.rotation = rotation_from_vector(np.array([0.02, -0.15, 0.03]))
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if self.translation is None:
            self.translation = np.array([1.0, 0.1, 0.15])
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.plane_normal is None:
            self.plane_normal = np.array([0.1, -0.05, 1.0])
        self.plane_normal = np.asarray(self.plane_normal, dtype=float).reshape(3)
        self.plane_normal = self.plane_normal / np.linalg.norm(self.plane_normal)


@dataclass
class SyntheticScene:
    """Generated correspondences plus their exact ground-truth models."""

    config: SceneConfig
    gt_e: EssentialMatrix
    gt_f: FundamentalMatrix
    gt_h: Homography | None
    correspondences: list
    inlier_mask: np.ndarray

    @property
    def n_outliers(self):
        return int(np.sum(~self.inlier_mask))


def random_pose(rng, max_angle_deg=15.0, baseline=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(2.0, max_angle_deg))
    rotation = rotation_from_vector(axis * angle)
    t = rng.normal(size=3)
    t[2] *= 0.3
    t = baseline * t / np.linalg.norm(t)
    return rotation, t


def random_scene_config(model_kind, seed, **overrides):
    """A randomized configuration suitable for the given model family."""
    rng = np.random.default_rng(seed)
    rotation, translation = random_pose(rng)
    cfg = dict(
        rotation=rotation,
        translation=translation,
        scene="plane" if model_kind == "h" else "points",
        plane_normal=np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), 1.0]),
        plane_depth=rng.uniform(5.0, 8.0),
        rng_seed=seed,
    )
    cfg.update(overrides)
    return SceneConfig(**cfg)


def _plane_depth_at(y_norm, normal, depth):
    """Depth of the plane n . X = d along the normalized viewing ray (y; 1)."""
    ray = np.append(y_norm, 1.0)
    denom = float(normal @ ray)
    if denom <= 1e-9:
        raise DegenerateSampleError("plane behind camera along viewing ray")
    return depth / denom


def _random_affinity(rng):
    ang1 = rng.uniform(0.0, 2.0 * np.pi)
    ang2 = rng.uniform(0.0, 2.0 * np.pi)
    c1, s1 = np.cos(ang1), np.sin(ang1)
    c2, s2 = np.cos(ang2), np.sin(ang2)
    scales = rng.uniform(0.7, 1.4, size=2)
    r1 = np.array([[c1, -s1], [s1, c1]])
    r2 = np.array([[c2, -s2], [s2, c2]])
    return r1 @ np.diag(scales) @ r2


def _local_plane_normal(rng, x_cam):
    """A random plane normal through a scene point, tilted at most ~40 deg off the viewing ray."""
    view = -x_cam / np.linalg.norm(x_cam)
    while True:
        n = view + 0.6 * rng.normal(size=3)
        n /= np.linalg.norm(n)
        if n @ view > 0.6:
            return -n  # orient so n . X > 0


def generate_scene(config: SceneConfig) -> SyntheticScene:
    """Generate labeled affine correspondences for the configured scene.

    Deterministic given the seed.  Inliers satisfy the ground-truth models
    exactly before noise; the requested outlier count is exact.
    """
    rng = np.random.default_rng(config.rng_seed)
    w, h = config.image_size
    k1, k2 = config.k1, config.k2
    rotation, translation = config.rotation, config.translation

    gt_e = EssentialMatrix.from_pose(rotation, translation)
    gt_f = FundamentalMatrix(fundamental_from_essential(gt_e, k1, k2))
    gt_h = None
    if config.scene == "plane":
        if _plane_depth_at(np.zeros(2), config.plane_normal, config.plane_depth) <= 0:
            raise DegenerateSampleError("plane behind the first camera")
        gt_h = Homography(
            homography_from_plane(k1, k2, rotation, translation, config.plane_normal, config.plane_depth)
        )

    n = config.n_correspondences
    n_out = int(round(config.outlier_ratio * n))
    n_in = n - n_out
    margin = 0.05
    lo = np.array([margin * w, margin * h])
    hi = np.array([(1 - margin) * w, (1 - margin) * h])

    inliers = []
    attempts = 0
    while len(inliers) < n_in:
        attempts += 1
        if attempts > 200 * n_in:
            raise DegenerateSampleError("could not place enough inliers inside both images")
        y0 = rng.uniform(lo, hi)
        if config.scene == "plane":
            h_loc = gt_h.m
        else:
            y_norm = k1.normalize(y0)
            depth_pt = rng.uniform(*config.depth_range)
            x_cam = depth_pt * np.append(y_norm, 1.0)
            normal = _local_plane_normal(rng, x_cam)
            d_loc = float(normal @ x_cam)
            if d_loc <= 1e-6:
                continue
            h_loc = homography_from_plane(k1, k2, rotation, translation, normal, d_loc)
            if (rotation @ x_cam + translation)[2] <= 0.1:
                continue
        try:
            z0, a = affinity_from_homography(h_loc, y0)
        except Exception:
            continue
        if not (0 <= z0[0] < w and 0 <= z0[1] < h):
            continue
        if np.linalg.det(a) <= 1e-6:
            continue
        inliers.append((y0, z0, a))

    correspondences = []
    for y0, z0, a in inliers:
        if config.noise_px > 0:
            y0 = y0 + rng.normal(scale=config.noise_px, size=2)
            z0 = z0 + rng.normal(scale=config.noise_px, size=2)
        if config.noise_affine > 0:
            a = (np.eye(2) + rng.normal(scale=config.noise_affine, size=(2, 2))) @ a
        correspondences.append(AffineCorrespondence(PointCorrespondence(y0, z0), a))

    for _ in range(n_out):
        y0 = rng.uniform(lo, hi)
        z0 = rng.uniform(lo, hi)
        correspondences.append(AffineCorrespondence(PointCorrespondence(y0, z0), _random_affinity(rng)))

    mask = np.zeros(n, dtype=bool)
    mask[:n_in] = True
    order = rng.permutation(n)
    correspondences = [correspondences[i] for i in order]
    mask = mask[order]
    return SyntheticScene(config, gt_e, gt_f, gt_h, correspondences, mask)


def minimal_scene_data(model_kind, seed, n_points=8, noise_px=0.0, noise_affine=0.0):
    """Small exact scene for solver unit tests: (scene, k1, k2)."""
    cfg = random_scene_config(
        model_kind, seed, n_correspondences=n_points, noise_px=noise_px, noise_affine=noise_affine
    )
    scene = generate_scene(cfg)
    return scene, cfg.k1, cfg.k2


# ---------------------------------------------------------------------------
# Patch pairs for intensity matching


def _band_limited_texture(rng, n_waves=32, wavelengths=(6.0, 16.0), amplitude=40.0):
    """Random sum-of-cosines field with guaranteed gradient variance."""
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n_waves)
    lams = rng.uniform(wavelengths[0], wavelengths[1], size=n_waves)
    ks = (2.0 * np.pi / lams)[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_waves)
    amps = rng.uniform(0.3, 1.0, size=n_waves) * amplitude / np.sqrt(n_waves)

    def field(pts):
        phase = pts @ ks.T + phases
        return 100.0 + np.cos(phase) @ amps

    return field


def half_transform_of(psi):
    """Split a full transform psi = [vec A | a | p | q] into its symmetric half.

    Ordering of the 2x2 blocks matches the matching parametrization:
    column-major [a11, a21, a12, a22].  Returns theta with B the principal
    square root of A, b = (B + I)^-1 a, s = sqrt(p), t = q / (s + 1).
    """
    psi = np.asarray(psi, dtype=float).reshape(8)
    a_mat = np.array([[psi[0], psi[2]], [psi[1], psi[3]]])
    b_mat = scipy.linalg.sqrtm(a_mat)
    if np.iscomplexobj(b_mat) and np.abs(b_mat.imag).max() > 1e-9:
        raise ValueError("full affinity has no real principal square root")
    b_mat = np.real(b_mat)
    b = np.linalg.solve(b_mat + np.eye(2), psi[4:6])
    if psi[6] <= 0:
        raise ValueError("contrast factor must be positive")
    s = float(np.sqrt(psi[6]))
    t = float(psi[7] / (s + 1.0))
    return np.array([b_mat[0, 0], b_mat[1, 0], b_mat[0, 1], b_mat[1, 1], b[0], b[1], s, t])


def generate_patch_pair(texture_seed, psi, noise_sigma, size=32, grid_margin=6):
    """Two noisy windows of one underlying texture related by the transform psi.

    The texture lives on an integer grid of the reference frame; both
    windows are produced by bicubic resampling of that grid through the two
    symmetric halves of psi, then independent Gaussian noise of standard
    deviation noise_sigma is added.  Returns (g, h, theta_gt).
    """
    from .lsm import ImagePatch, bicubic_sample  # local import to avoid a cycle

    rng = np.random.default_rng(texture_seed)
    theta = half_transform_of(psi)
    b_mat = np.array([[theta[0], theta[2]], [theta[1], theta[3]]])
    b_vec = theta[4:6]
    s, t = theta[6], theta[7]

    half = (size - 1) / 2.0
    corners = np.array([[-half, -half], [half, -half], [-half, half], [half, half]])
    reach = [corners @ b_mat.T + b_vec, np.linalg.solve(b_mat, (corners - b_vec).T).T, corners]
    radius = int(np.ceil(max(np.abs(np.concatenate(reach)).max(), half))) + grid_margin
    axis = np.arange(-radius, radius + 1, dtype=float)
    gx, gy = np.meshgrid(axis, axis)
    field = _band_limited_texture(rng)
    texture = field(np.stack([gx, gy], axis=-1).reshape(-1, 2)).reshape(gx.shape)

    def sample_texture(pts):
        idx = pts + radius  # (x, y) -> (col, row) on the texture grid
        return bicubic_sample(texture, idx[..., ::-1])

    coords = np.stack(np.meshgrid(np.arange(size) - half, np.arange(size) - half), axis=-1)
    flat = coords.reshape(-1, 2)
    g_vals = (sample_texture(flat @ b_mat.T + b_vec) - t) / s
    h_vals = s * sample_texture(np.linalg.solve(b_mat, (flat - b_vec).T).T) + t
    g = g_vals.reshape(size, size)
    h = h_vals.reshape(size, size)
    if noise_sigma > 0:
        g = g + rng.normal(scale=noise_sigma, size=g.shape)
        h = h + rng.normal(scale=noise_sigma, size=h.shape)
    noise = (max(noise_sigma**2, 1e-12), 0.0)
    return (
        ImagePatch(g, origin=np.zeros(2), noise_fn=noise),
        ImagePatch(h, origin=np.zeros(2), noise_fn=noise),
        theta,
    )
