"""Symmetric intensity-based refinement of affine correspondences.

Two noisy windows g and h are modeled as observations of one unknown
signal f placed halfway between them: g maps to f and f maps to h through
the *same* geometric affinity (B, b) and the same radiometric affinity
(s, t).  The full window-to-window transform is therefore the square of
the estimated half-transform: A = B^2, a = (B + I) b, contrast p = s^2,
offset q = (s + 1) t.

Estimation alternates a closed-form update of f (a weighted mean of both
windows resampled into the reference frame) with a Gauss-Newton step on
the eight half-transform parameters theta = [b11, b21, b12, b22, b1, b2,
s, t] (2x2 blocks ordered column-major, matching the parameter vector).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    InsufficientOverlapError,
    UntexturedPatchError,
    WindowTooSmallError,
)

_NORMAL_COND_MAX = 1e12


# ---------------------------------------------------------------------------
# Bicubic (Catmull-Rom) interpolation


def _cr_weights(t):
    w0 = ((-0.5 * t + 1.0) * t - 0.5) * t
    w1 = (1.5 * t - 2.5) * t * t + 1.0
    w2 = ((-1.5 * t + 2.0) * t + 0.5) * t
    w3 = (0.5 * t - 0.5) * t * t
    return np.stack([w0, w1, w2, w3], axis=-1)


def _cr_weights_d(t):
    w0 = -1.5 * t * t + 2.0 * t - 0.5
    w1 = 4.5 * t * t - 5.0 * t
    w2 = -4.5 * t * t + 4.0 * t + 0.5
    w3 = 1.5 * t * t - t
    return np.stack([w0, w1, w2, w3], axis=-1)


def _gather(grid, rows, cols):
    i0 = np.clip(np.floor(rows).astype(int), 1, grid.shape[0] - 3)
    j0 = np.clip(np.floor(cols).astype(int), 1, grid.shape[1] - 3)
    tr = rows - i0
    tc = cols - j0
    ir = i0[:, None] + np.arange(-1, 3)[None, :]
    jc = j0[:, None] + np.arange(-1, 3)[None, :]
    return grid[ir[:, :, None], jc[:, None, :]], tr, tc


def bicubic_sample(grid, points):
    """Catmull-Rom interpolation of ``grid`` at fractional (row, col) points.

    Points must lie in [1, n-2] x [1, m-2]; the kernel needs one guard
    pixel on each side.
    """
    points = np.asarray(points, dtype=float)
    rows, cols = points[..., 0].ravel(), points[..., 1].ravel()
    if rows.size and (
        rows.min() < 1.0 or cols.min() < 1.0
        or rows.max() > grid.shape[0] - 2 or cols.max() > grid.shape[1] - 2
    ):
        raise ValueError("bicubic sample outside the interpolable domain")
    nbhd, tr, tc = _gather(grid, rows, cols)
    vals = np.einsum("na,nab,nb->n", _cr_weights(tr), nbhd, _cr_weights(tc))
    return vals.reshape(points.shape[:-1])


def bicubic_sample_grad(grid, points):
    """Values plus gradient (d/drow, d/dcol) of the interpolant."""
    points = np.asarray(points, dtype=float)
    rows, cols = points[..., 0].ravel(), points[..., 1].ravel()
    nbhd, tr, tc = _gather(grid, rows, cols)
    wr, wc = _cr_weights(tr), _cr_weights(tc)
    vals = np.einsum("na,nab,nb->n", wr, nbhd, wc)
    dr = np.einsum("na,nab,nb->n", _cr_weights_d(tr), nbhd, wc)
    dc = np.einsum("na,nab,nb->n", wr, nbhd, _cr_weights_d(tc))
    shape = points.shape[:-1]
    return vals.reshape(shape), dr.reshape(shape), dc.reshape(shape)


# ---------------------------------------------------------------------------
# Patches and parameters


@dataclass(frozen=True)
class ImagePatch:
    """A grayscale window with a signal-dependent noise model.

    ``intensities`` is a (rows, cols) grid; local coordinates (x, y) put
    (0, 0) at the grid center, x along columns.  ``origin`` locates that
    center in full-image pixel coordinates.  ``noise_fn`` = (c0, c1) gives
    the intensity variance c0 + c1 * I.
    """

    intensities: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    noise_fn: tuple = (1.0, 0.0)

    def __post_init__(self):
        img = np.asarray(self.intensities, dtype=float)
        if img.ndim != 2 or min(img.shape) < 5:
            raise ValueError("patch must be a grid of at least 5x5 pixels")
        object.__setattr__(self, "intensities", img)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(2))
        c0, c1 = self.noise_fn
        if c0 + c1 * img.min() <= 0 and c0 + c1 * img.max() <= 0:
            raise ValueError("noise variance must be positive over the patch range")

    @property
    def interp_half_extent(self):
        """Half sides (x, y) of the domain where bicubic sampling is valid."""
        rows, cols = self.intensities.shape
        return np.array([(cols - 3) / 2.0, (rows - 3) / 2.0])

    def grid_coords(self):
        """Local (x, y) coordinates of every pixel, flattened to (N, 2)."""
        rows, cols = self.intensities.shape
        xs = np.arange(cols) - (cols - 1) / 2.0
        ys = np.arange(rows) - (rows - 1) / 2.0
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def _to_index(self, points):
        rows, cols = self.intensities.shape
        pts = np.asarray(points, dtype=float)
        return np.stack(
            [pts[..., 1] + (rows - 1) / 2.0, pts[..., 0] + (cols - 1) / 2.0], axis=-1
        )

    def sample(self, points):
        return bicubic_sample(self.intensities, self._to_index(points))

    def sample_grad(self, points):
        vals, dr, dc = bicubic_sample_grad(self.intensities, self._to_index(points))
        return vals, dc, dr  # gradient in local (x, y) order

    def variance(self, intensity):
        c0, c1 = self.noise_fn
        return np.maximum(c0 + c1 * np.asarray(intensity, dtype=float), 1e-12)


@dataclass(frozen=True)
class SymmetricLsmParams:
    """Half-transform parameters [b11, b21, b12, b22, b1, b2, s, t]."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).reshape(8)
        if th[6] <= 0:
            raise ValueError("half contrast must be positive")
        if th[0] * th[3] - th[1] * th[2] <= 0:
            raise ValueError("half affinity must be orientation preserving")
        object.__setattr__(self, "theta", th)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]))

    @property
    def b_mat(self):
        t = self.theta
        return np.array([[t[0], t[2]], [t[1], t[3]]])

    @property
    def b_vec(self):
        return self.theta[4:6]

    @property
    def s(self):
        return float(self.theta[6])

    @property
    def t(self):
        return float(self.theta[7])


def half_params_from_affinity(a, shift):
    """Initial half-transform from a detector affinity and point shift.

    B is the real principal square root of A; when A has no real root
    (negative real eigenvalues) B falls back to identity and the second
    return value reports the fallback.  The half shift is shift / 2.
    """
    a = np.asarray(a, dtype=float).reshape(2, 2)
    shift = np.asarray(shift, dtype=float).reshape(2)
    b = scipy.linalg.sqrtm(a)
    ok = True
    if np.iscomplexobj(b):
        if np.abs(np.asarray(b).imag).max() > 1e-9:
            b, ok = np.eye(2), False
        else:
            b = np.asarray(b).real
    if ok and np.linalg.det(b) <= 0:
        b, ok = np.eye(2), False
    theta = np.array([b[0, 0], b[1, 0], b[0, 1], b[1, 1], shift[0] / 2.0, shift[1] / 2.0, 1.0, 0.0])
    return SymmetricLsmParams(theta), ok


def compose_full_transform(theta):
    """Full transform psi from the half-transform theta, with its Jacobian.

    psi = [a11, a21, a12, a22, a1, a2, p, q]: A = B^2, a = (B + I) b,
    p = s^2, q = (s + 1) t.  The 8x8 Jacobian is exact.
    """
    t = np.asarray(theta, dtype=float).reshape(8)
    b = np.array([[t[0], t[2]], [t[1], t[3]]])
    a_mat = b @ b
    a_vec = (b + np.eye(2)) @ t[4:6]
    psi = np.array(
        [a_mat[0, 0], a_mat[1, 0], a_mat[0, 1], a_mat[1, 1], a_vec[0], a_vec[1], t[6] ** 2, (t[6] + 1.0) * t[7]]
    )
    jac = np.zeros((8, 8))
    jac[0, :4] = [2 * t[0], t[2], t[1], 0.0]
    jac[1, :4] = [t[1], t[0] + t[3], 0.0, t[1]]
    jac[2, :4] = [t[2], 0.0, t[0] + t[3], t[2]]
    jac[3, :4] = [0.0, t[2], t[1], 2 * t[3]]
    jac[4, :6] = [t[4], 0.0, t[5], 0.0, t[0] + 1.0, t[2]]
    jac[5, :6] = [0.0, t[4], 0.0, t[5], t[1], t[3] + 1.0]
    jac[6, 6] = 2 * t[6]
    jac[7, 6:8] = [t[7], t[6] + 1.0]
    return psi, jac


def variance_factor(omega, k_g, k_h):
    """Weighted residual sum over redundancy.

    The reference signal consumes about sqrt(Kg*Kh) of the Kg + Kh
    observations, on top of the eight transform parameters.
    """
    r = k_g + k_h - (8.0 + np.sqrt(float(k_g) * float(k_h)))
    if r <= 0:
        raise WindowTooSmallError(f"nonpositive redundancy ({k_g} + {k_h} observations)")
    return float(omega) / r


def predicted_stddev(window_side, sigma_noise, sigma_gradient):
    """Idealized precision of the affinity entries and of the shift.

    For an N x N window with uncorrelated gradients of standard deviation
    sigma_gradient and intensity noise sigma_noise:
    sigma_a = sqrt(12)/N^2 * (sigma_noise/sigma_gradient),
    sigma_p = 1/N * (sigma_noise/sigma_gradient).
    """
    if window_side <= 0 or sigma_noise <= 0 or sigma_gradient <= 0:
        raise ValueError("all inputs must be positive")
    ratio = sigma_noise / sigma_gradient
    return np.sqrt(12.0) / window_side**2 * ratio, ratio / window_side


# ---------------------------------------------------------------------------
# Reference-frame grid


@dataclass
class _MeanPatch:
    values: np.ndarray   # (ny, nx)
    x0: float            # reference-frame coordinate of column 0
    y0: float            # reference-frame coordinate of row 0

    def interpolable(self, pts, margin=0.0):
        ny, nx = self.values.shape
        cx = pts[:, 0] - self.x0
        cy = pts[:, 1] - self.y0
        return (
            (cx >= 1.0 + margin) & (cx <= nx - 2.0 - margin)
            & (cy >= 1.0 + margin) & (cy <= ny - 2.0 - margin)
        )

    def sample_grad(self, pts):
        idx = np.stack([pts[:, 1] - self.y0, pts[:, 0] - self.x0], axis=-1)
        vals, dr, dc = bicubic_sample_grad(self.values, idx)
        return vals, dc, dr


def common_square(g: ImagePatch, h: ImagePatch, params: SymmetricLsmParams):
    """Largest axis-aligned square of the reference frame visible in both windows.

    A point x is usable when B^-1 (x - b) can be sampled in g and B x + b
    can be sampled in h.  Returns (center, half_side); half_side is 0 when
    no candidate center is feasible.
    """
    b_mat, b_vec = params.b_mat, params.b_vec
    b_inv = np.linalg.inv(b_mat)
    gext = g.interp_half_extent
    hext = h.interp_half_extent

    def feasible(pts):
        yg = pts @ b_inv.T - (b_inv @ b_vec)
        zh = pts @ b_mat.T + b_vec
        return np.all(np.abs(yg) <= gext, axis=-1) & np.all(np.abs(zh) <= hext, axis=-1)

    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])
    candidates = [0.5 * (b_vec - b_inv @ b_vec), b_vec, -b_inv @ b_vec, np.zeros(2)]
    r_max = 2.0 * (max(gext.max(), hext.max()) + np.linalg.norm(b_vec)) + 1.0
    best_c, best_r = np.zeros(2), 0.0
    for c in candidates:
        if not feasible(c[None, :])[0]:
            continue
        lo, hi = 0.0, r_max
        for _ in range(42):
            mid = 0.5 * (lo + hi)
            if np.all(feasible(c + mid * corners)):
                lo = mid
            else:
                hi = mid
        if lo > best_r:
            best_c, best_r = c, lo
    return best_c, best_r


def _mean_patch_grid(g, h, params, center, half_side):
    xs = np.arange(np.ceil(center[0] - half_side), np.floor(center[0] + half_side) + 1.0)
    ys = np.arange(np.ceil(center[1] - half_side), np.floor(center[1] + half_side) + 1.0)
    if len(xs) < 5 or len(ys) < 5:
        raise InsufficientOverlapError(
            f"common square holds only {len(xs)}x{len(ys)} integer pixels"
        )
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    b_mat, b_vec, s, t = params.b_mat, params.b_vec, params.s, params.t
    y_pts = (pts - b_vec) @ np.linalg.inv(b_mat).T
    z_pts = pts @ b_mat.T + b_vec
    g_vals = g.sample(y_pts)
    h_vals = h.sample(z_pts)
    w_g = 1.0 / (s**2 * g.variance(g_vals))
    w_h = s**2 / h.variance(h_vals)
    f_vals = (w_g * (s * g_vals + t) + w_h * (h_vals - t) / s) / (w_g + w_h)
    return _MeanPatch(f_vals.reshape(len(ys), len(xs)), xs[0], ys[0])


def estimate_mean_patch(g: ImagePatch, h: ImagePatch, params: SymmetricLsmParams):
    """Maximum-likelihood reference patch given the half-transform.

    Pixelwise weighted mean of both windows mapped into the reference
    frame; weights are the inverse variances of the mapped intensities,
    1/(s^2 Vg) for g and s^2/Vh for h.
    """
    center, half_side = common_square(g, h, params)
    grid = _mean_patch_grid(g, h, params, center, half_side)
    ny, nx = grid.values.shape
    origin = np.array([grid.x0 + (nx - 1) / 2.0, grid.y0 + (ny - 1) / 2.0])
    w_mean = 1.0 / np.mean(
        1.0 / g.variance(np.median(g.intensities)) + 1.0 / h.variance(np.median(h.intensities))
    )
    return ImagePatch(grid.values, origin=origin, noise_fn=(float(w_mean), 0.0))


# ---------------------------------------------------------------------------
# Gauss-Newton refinement


def _side_system_g(g, params, fgrid, coords, obs):
    """Residuals/Jacobian for the g window: n = g - (f(B y + b) - t)/s."""
    b_mat, b_vec, s, t = params.b_mat, params.b_vec, params.s, params.t
    x_pts = coords @ b_mat.T + b_vec
    # half-pixel margin keeps the pixel set valid under trial steps
    keep = fgrid.interpolable(x_pts, margin=0.5)
    coords, obs, x_pts = coords[keep], obs[keep], x_pts[keep]
    f_vals, fx, fy = fgrid.sample_grad(x_pts)
    resid = obs - (f_vals - t) / s
    grad = np.stack([fx, fy], axis=1)
    jac = np.zeros((len(obs), 8))
    # columns [b11, b21, b12, b22]: d n / d B_kl = -(1/s) * grad_k * y_l
    jac[:, 0] = -grad[:, 0] * coords[:, 0] / s
    jac[:, 1] = -grad[:, 1] * coords[:, 0] / s
    jac[:, 2] = -grad[:, 0] * coords[:, 1] / s
    jac[:, 3] = -grad[:, 1] * coords[:, 1] / s
    jac[:, 4] = -grad[:, 0] / s
    jac[:, 5] = -grad[:, 1] / s
    jac[:, 6] = (f_vals - t) / s**2
    jac[:, 7] = 1.0 / s
    weights = 1.0 / g.variance(obs)
    return resid, jac, weights, keep


def _side_system_h(h, params, fgrid, coords, obs):
    """Residuals/Jacobian for the h window: m = h - (s f(B^-1 (z - b)) + t)."""
    b_mat, b_vec, s, t = params.b_mat, params.b_vec, params.s, params.t
    b_inv = np.linalg.inv(b_mat)
    v_pts = (coords - b_vec) @ b_inv.T
    keep = fgrid.interpolable(v_pts, margin=0.5)
    coords, obs, v_pts = coords[keep], obs[keep], v_pts[keep]
    f_vals, fx, fy = fgrid.sample_grad(v_pts)
    resid = obs - (s * f_vals + t)
    grad_b = np.stack([fx, fy], axis=1) @ b_inv  # rows: B^-T grad f
    jac = np.zeros((len(obs), 8))
    # d m / d B_kl = s * (B^-T grad f)_k * v_l
    jac[:, 0] = s * grad_b[:, 0] * v_pts[:, 0]
    jac[:, 1] = s * grad_b[:, 1] * v_pts[:, 0]
    jac[:, 2] = s * grad_b[:, 0] * v_pts[:, 1]
    jac[:, 3] = s * grad_b[:, 1] * v_pts[:, 1]
    jac[:, 4] = s * grad_b[:, 0]
    jac[:, 5] = s * grad_b[:, 1]
    jac[:, 6] = -f_vals
    jac[:, 7] = -1.0
    weights = 1.0 / h.variance(obs)
    return resid, jac, weights, keep


def _omega_fixed(g, h, theta_vec, fgrid, g_coords, g_obs, h_coords, h_obs):
    """Weighted residual sum for a trial theta with f and pixel sets frozen."""
    if theta_vec[6] <= 0 or theta_vec[0] * theta_vec[3] - theta_vec[1] * theta_vec[2] <= 0:
        return np.inf
    params = SymmetricLsmParams(theta_vec)
    b_mat, b_vec, s, t = params.b_mat, params.b_vec, params.s, params.t
    x_pts = g_coords @ b_mat.T + b_vec
    v_pts = (h_coords - b_vec) @ np.linalg.inv(b_mat).T
    if not (np.all(fgrid.interpolable(x_pts)) and np.all(fgrid.interpolable(v_pts))):
        return np.inf
    fg = fgrid.sample_grad(x_pts)[0]
    fh = fgrid.sample_grad(v_pts)[0]
    n = g_obs - (fg - t) / s
    m = h_obs - (s * fh + t)
    return float(np.sum(n**2 / g.variance(g_obs)) + np.sum(m**2 / h.variance(h_obs)))


@dataclass
class LsmResult:
    """Refined full transform with covariance and fit diagnostics."""

    psi: np.ndarray            # [a11, a21, a12, a22, a1, a2, p, q]
    cov_psi: np.ndarray        # 8x8, scaled by the variance factor
    variance_factor: float
    iterations: int
    converged: bool
    theta: SymmetricLsmParams
    cov_theta: np.ndarray
    omega: float
    n_g: int
    n_h: int
    omega_history: list

    @property
    def a_mat(self):
        p = self.psi
        return np.array([[p[0], p[2]], [p[1], p[3]]])

    @property
    def a_vec(self):
        return self.psi[4:6]


def refine_ac_symmetric(g: ImagePatch, h: ImagePatch, init: SymmetricLsmParams,
                        max_iterations=50, tol=1e-4):
    """Refine the half-transform between two windows by alternating estimation.

    Each iteration recomputes the common square and the mean patch for the
    current parameters, then applies one Gauss-Newton step with up to 8
    step halvings; a trial step is only accepted if it does not increase
    the weighted residual sum (at fixed reference patch).  Convergence is
    declared when the accepted update falls below ``tol`` (the radiometric
    offset entry is compared against ``tol`` scaled by the intensity spread
    of g, since it lives in intensity units); three consecutive rejected
    steps return with ``converged=False``.
    """
    theta = np.asarray(init.theta, dtype=float).copy()
    tol_scale = np.ones(8)
    tol_scale[7] = max(1.0, float(np.std(g.intensities)))
    g_coords_all, g_obs_all = g.grid_coords(), g.intensities.ravel()
    h_coords_all, h_obs_all = h.grid_coords(), h.intensities.ravel()

    history = []
    converged = False
    stalls = 0
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        params = SymmetricLsmParams(theta)
        center, half_side = common_square(g, h, params)
        fgrid = _mean_patch_grid(g, h, params, center, half_side)

        rg, jg, wg, keep_g = _side_system_g(g, params, fgrid, g_coords_all, g_obs_all)
        rh, jh, wh, keep_h = _side_system_h(h, params, fgrid, h_coords_all, h_obs_all)
        resid = np.concatenate([rg, rh])
        jac = np.vstack([jg, jh])
        weights = np.concatenate([wg, wh])
        omega = float(np.sum(weights * resid**2))
        history.append(("mean_patch", omega, iterations))

        normal = jac.T @ (weights[:, None] * jac)
        sv = np.linalg.svd(normal, compute_uv=False)
        if sv[-1] <= 0 or sv[0] / sv[-1] > _NORMAL_COND_MAX:
            raise UntexturedPatchError("normal matrix is ill conditioned")
        step = -np.linalg.solve(normal, jac.T @ (weights * resid))

        g_coords, g_obs = g_coords_all[keep_g], g_obs_all[keep_g]
        h_coords, h_obs = h_coords_all[keep_h], h_obs_all[keep_h]
        accepted = None
        for k in range(9):
            trial = theta + step / 2.0**k
            omega_try = _omega_fixed(g, h, trial, fgrid, g_coords, g_obs, h_coords, h_obs)
            if omega_try <= omega * (1.0 + 1e-12):
                accepted = (trial, step / 2.0**k, omega_try)
                break
        if accepted is None:
            if np.abs(step / tol_scale).max() < tol:
                converged = True  # proposed update already negligible
                break
            stalls += 1
            history.append(("step", omega, iterations))
            if stalls >= 3:
                break
            continue
        theta, taken, omega_acc = accepted
        stalls = 0
        history.append(("step", omega_acc, iterations))
        if np.abs(taken / tol_scale).max() < tol:
            converged = True
            break

    params = SymmetricLsmParams(theta)
    center, half_side = common_square(g, h, params)
    fgrid = _mean_patch_grid(g, h, params, center, half_side)
    rg, jg, wg, _ = _side_system_g(g, params, fgrid, g_coords_all, g_obs_all)
    rh, jh, wh, _ = _side_system_h(h, params, fgrid, h_coords_all, h_obs_all)
    omega = float(np.sum(wg * rg**2) + np.sum(wh * rh**2))
    n_g, n_h = len(rg), len(rh)
    vf = variance_factor(omega, n_g, n_h)

    jac = np.vstack([jg, jh])
    weights = np.concatenate([wg, wh])
    normal = jac.T @ (weights[:, None] * jac)
    sv = np.linalg.svd(normal, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > _NORMAL_COND_MAX:
        raise UntexturedPatchError("normal matrix is ill conditioned at the solution")
    cov_theta = np.linalg.inv(normal)
    cov_theta = 0.5 * (cov_theta + cov_theta.T)

    psi, j_psi = compose_full_transform(theta)
    cov_psi = vf * (j_psi @ cov_theta @ j_psi.T)
    return LsmResult(
        psi=psi,
        cov_psi=0.5 * (cov_psi + cov_psi.T),
        variance_factor=vf,
        iterations=iterations,
        converged=converged,
        theta=params,
        cov_theta=cov_theta,
        omega=omega,
        n_g=n_g,
        n_h=n_h,
        omega_history=history,
    )


# ---------------------------------------------------------------------------
# Noise-model estimation


def fit_noise_function(image, n_bins=16):
    """Fit the intensity-variance line var(I) = c0 + c1 * I from one image.

    Second differences along both axes cancel locally linear structure and
    leave (scaled) noise; their squares are binned by local intensity and a
    nonnegative least-squares line is fit through the bin variances.
    Constant images fall back to (1e-6, 0).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or min(img.shape) < 16:
        raise ValueError("noise estimation needs a grid of at least 16x16 pixels")
    if img.max() - img.min() < 1e-12:
        return 1e-6, 0.0
    d_h = (img[:, :-2] - 2.0 * img[:, 1:-1] + img[:, 2:]) / np.sqrt(6.0)
    d_v = (img[:-2, :] - 2.0 * img[1:-1, :] + img[2:, :]) / np.sqrt(6.0)
    sq = np.concatenate([d_h.ravel() ** 2, d_v.ravel() ** 2])
    level = np.concatenate([img[:, 1:-1].ravel(), img[1:-1, :].ravel()])

    edges = np.quantile(level, np.linspace(0.0, 1.0, n_bins + 1))
    rows, rhs, weights = [], [], []
    for k in range(n_bins):
        lo, hi = edges[k], edges[k + 1]
        mask = (level >= lo) & (level <= hi if k == n_bins - 1 else level < hi)
        if mask.sum() < 16:
            continue
        rows.append([1.0, float(level[mask].mean())])
        rhs.append(float(sq[mask].mean()))
        weights.append(np.sqrt(mask.sum()))
    if len(rows) < 2:
        return max(float(sq.mean()), 1e-6), 0.0
    a = np.asarray(rows) * np.asarray(weights)[:, None]
    b = np.asarray(rhs) * np.asarray(weights)
    coef, _ = scipy.optimize.nnls(a, b)
    c0, c1 = float(coef[0]), float(coef[1])
    if c0 + c1 * float(np.mean(level)) < 1e-9:
        return 1e-6, 0.0
    return c0, c1


def extract_patch(image, center, side, noise_fn):
    """Integer-aligned square window of a full image around a keypoint.

    Returns (patch, local offset of the keypoint from the window center),
    or None when the window does not fit inside the image.
    """
    img = np.asarray(image, dtype=float)
    side = int(side) | 1  # odd, so the center pixel is unambiguous
    half = side // 2
    c = np.rint(np.asarray(center, dtype=float)).astype(int)
    if (
        c[0] - half < 0 or c[1] - half < 0
        or c[0] + half >= img.shape[1] or c[1] + half >= img.shape[0]
    ):
        return None
    window = img[c[1] - half : c[1] + half + 1, c[0] - half : c[0] + half + 1]
    patch = ImagePatch(window.copy(), origin=c.astype(float), noise_fn=noise_fn)
    return patch, np.asarray(center, dtype=float) - c
