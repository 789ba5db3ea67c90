"""Core two-view geometry: correspondence types, model containers, residuals.

Conventions used throughout the package:
  * vec() of a 3x3 model matrix is row-major.
  * Model matrices are scaled to ||vec|| = 1 with the largest-magnitude
    entry positive, so equality tests are well defined.
  * The epipolar constraint is written z^T F y = 0 with y in image 1 and
    z in image 2; F y is the epipolar line of y in image 2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionAmbiguousError, DegeneratePointError


def hom(pts):
    """Append a unit coordinate: (..., 2) -> (..., 3)."""
    pts = np.asarray(pts, dtype=float)
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def project(m, pts):
    """Apply a 3x3 projective transform to (..., 2) points."""
    q = hom(pts) @ np.asarray(m, dtype=float).T
    w = q[..., 2]
    if np.any(np.abs(w) < 1e-15):
        raise DegeneratePointError("point maps to infinity")
    return q[..., :2] / w[..., None]


def normalize_model_matrix(m):
    """Scale a 3x3 matrix to ||vec|| = 1 with the largest-|entry| positive."""
    m = np.asarray(m, dtype=float)
    n = np.linalg.norm(m)
    if n == 0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite matrix")
    m = m / n
    v = m.ravel()
    if v[np.argmax(np.abs(v))] < 0:
        m = -m
    return m


def skew(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rotation_from_vector(r):
    """Rodrigues map: rotation vector (axis * angle) -> rotation matrix."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        return np.eye(3) + skew(r)
    axis = r / angle
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def vector_from_rotation(m):
    """Inverse Rodrigues map; returns the rotation vector of a rotation matrix."""
    m = np.asarray(m, dtype=float)
    cos_a = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    w = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    if angle < 1e-7:
        return 0.5 * w
    if np.pi - angle < 1e-5:
        # near half turn: axis from the dominant column of m + I
        b = m + np.eye(3)
        col = b[:, np.argmax(np.linalg.norm(b, axis=0))]
        axis = col / np.linalg.norm(col)
        if np.dot(w, axis) < 0:
            axis = -axis
        return angle * axis
    return angle * w / (2.0 * np.sin(angle))


def rotation_jacobians(r):
    """Rotation matrix R(r) and the three derivatives dR/dr_i.

    Uses the closed form for derivatives of the exponential map; near the
    identity the limit dR/dr_i = [e_i]_x is substituted.
    """
    r = np.asarray(r, dtype=float)
    rot = rotation_from_vector(r)
    angle2 = float(r @ r)
    jacs = []
    if angle2 < 1e-14:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            jacs.append(skew(e))
        return rot, jacs
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        v = r[i] * r + np.cross(r, (np.eye(3) - rot) @ e)
        jacs.append(skew(v / angle2) @ rot)
    return rot, jacs


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class PointCorrespondence:
    """A matched pixel pair; y0 in image 1, z0 in image 2."""

    y0: np.ndarray
    z0: np.ndarray

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float).reshape(2)
        z0 = np.asarray(self.z0, dtype=float).reshape(2)
        if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(z0))):
            raise ValueError("correspondence coordinates must be finite")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "z0", z0)


@dataclass(frozen=True)
class AffineCorrespondence:
    """Point match plus the 2x2 local affinity mapping image-1 offsets to image-2 offsets.

    ``cov`` (optional) is an 8x8 covariance over (y0, z0, vec A) with vec A
    row-major.  ``point_only`` marks entries parsed from 4-field rows where
    no affinity was measured (A is identity by convention).
    """

    pc: PointCorrespondence
    a: np.ndarray
    cov: np.ndarray | None = None
    quality: float | None = None
    point_only: bool = False

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(2, 2)
        if not np.all(np.isfinite(a)):
            raise ValueError("affinity must be finite")
        object.__setattr__(self, "a", a)
        if self.cov is not None:
            c = np.asarray(self.cov, dtype=float).reshape(8, 8)
            if not np.allclose(c, c.T, atol=1e-9 * max(1.0, np.abs(c).max())):
                raise ValueError("covariance must be symmetric")
            if np.linalg.eigvalsh(0.5 * (c + c.T)).min() < -1e-9 * max(1.0, np.abs(c).max()):
                raise ValueError("covariance must be positive semidefinite")
            object.__setattr__(self, "cov", c)

    @property
    def y0(self):
        return self.pc.y0

    @property
    def z0(self):
        return self.pc.z0

    @property
    def orientation_preserving(self):
        return float(np.linalg.det(self.a)) > 0.0

    @property
    def valid(self):
        return float(np.linalg.det(self.a)) != 0.0


def _check_unit_vec(m):
    if abs(np.linalg.norm(m) - 1.0) > 1e-9:
        raise ValueError("model matrix must have unit vec norm")


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, ||vec|| = 1, largest-magnitude entry positive."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(3, 3)
        _check_unit_vec(m)
        if abs(np.linalg.det(m)) < 1e-14:
            raise ValueError("homography must be invertible")
        object.__setattr__(self, "m", m)

    @classmethod
    def from_matrix(cls, m):
        return cls(normalize_model_matrix(m))


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 epipolar matrix, ||vec|| = 1, largest-magnitude entry positive."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(3, 3)
        _check_unit_vec(m)
        if abs(np.linalg.det(m)) > 1e-8:
            raise ValueError("fundamental matrix must be singular")
        object.__setattr__(self, "m", m)

    @classmethod
    def from_matrix(cls, m):
        return cls(normalize_model_matrix(m))


@dataclass(frozen=True)
class EssentialMatrix:
    """Calibrated epipolar matrix with equal nonzero singular values.

    Optionally carries the minimal parametrization (unit translation b,
    rotation vector r) with E proportional to [b]_x R(r).
    """

    m: np.ndarray
    b: np.ndarray | None = None
    r: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(3, 3)
        _check_unit_vec(m)
        s = np.linalg.svd(m, compute_uv=False)
        if abs(s[0] - s[1]) > 1e-8 * max(1.0, s[0]) or s[2] > 1e-8 * max(1.0, s[0]):
            raise ValueError("essential matrix must have singular values (s, s, 0)")
        object.__setattr__(self, "m", m)
        if self.b is not None:
            b = np.asarray(self.b, dtype=float).reshape(3)
            if abs(np.linalg.norm(b) - 1.0) > 1e-9:
                raise ValueError("translation must be a unit vector")
            object.__setattr__(self, "b", b)
        if self.r is not None:
            object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))

    @classmethod
    def from_matrix(cls, m, b=None, r=None):
        return cls(project_to_essential(m), b=b, r=r)

    @classmethod
    def from_pose(cls, rotation, translation):
        t = np.asarray(translation, dtype=float).reshape(3)
        t = t / np.linalg.norm(t)
        e = skew(t) @ np.asarray(rotation, dtype=float)
        return cls(normalize_model_matrix(e), b=t, r=vector_from_rotation(rotation))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Upper-triangular calibration matrix with positive focal entries."""

    k: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float).reshape(3, 3)
        if abs(k[2, 2] - 1.0) > 1e-12 or abs(k[1, 0]) > 1e-12 or abs(k[2, 0]) > 1e-12 or abs(k[2, 1]) > 1e-12:
            raise ValueError("calibration matrix must be upper triangular with K[2,2]=1")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal entries must be positive")
        object.__setattr__(self, "k", k)

    @property
    def linear(self):
        """The 2x2 pixel-from-normalized linear block."""
        return self.k[:2, :2]

    def normalize(self, pts):
        """Pixel coordinates -> normalized camera coordinates."""
        k = self.k
        pts = np.asarray(pts, dtype=float)
        out = pts.copy()
        out[..., 1] = (pts[..., 1] - k[1, 2]) / k[1, 1]
        out[..., 0] = (pts[..., 0] - k[0, 2] - k[0, 1] * out[..., 1]) / k[0, 0]
        return out

    def denormalize(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts @ self.linear.T + self.k[:2, 2]


def _as_matrix(model):
    if isinstance(model, (Homography, FundamentalMatrix, EssentialMatrix)):
        return model.m
    return np.asarray(model, dtype=float).reshape(3, 3)


def _as_k(k):
    if isinstance(k, CameraIntrinsics):
        return k
    return CameraIntrinsics(k)


# ---------------------------------------------------------------------------
# Operations


def ac_to_point_correspondences(ac: AffineCorrespondence):
    """Expand an AC into three point correspondences.

    The original pair plus the images of unit pixel steps along both axes,
    with the second point displaced by A applied to the same step.
    """
    y0, z0, a = ac.y0, ac.z0, ac.a
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    return [
        PointCorrespondence(y0, z0),
        PointCorrespondence(y0 + e1, z0 + a @ e1),
        PointCorrespondence(y0 + e2, z0 + a @ e2),
    ]


def affinity_from_homography(h, y0):
    """Exact differential of the projective map of h at y0.

    Returns (z0, A) where z0 is the image of y0 and A is the Jacobian
    dz/dy, i.e. A[i][j] = (H[i][j] - H[2][j] z0[i]) / s with s the
    projective depth H[2] . (y0; 1).
    """
    m = _as_matrix(h)
    y0 = np.asarray(y0, dtype=float).reshape(2)
    q = m @ np.append(y0, 1.0)
    s = q[2]
    if abs(s) < 1e-12 * max(1.0, np.abs(m).max() * (1.0 + np.abs(y0).max())):
        raise DegeneratePointError("projective depth vanishes at y0")
    z0 = q[:2] / s
    a = (m[:2, :2] - np.outer(z0, m[2, :2])) / s
    return z0, a


def sampson_distance_f(f, y, z):
    """First-order epipolar (Sampson) distance in pixels.

    Vectorized over leading dimensions of y and z.  Pairs whose four
    constraint partials all vanish are flagged with +inf.
    """
    m = _as_matrix(f)
    yh = hom(y)
    zh = hom(z)
    fy = yh @ m.T
    ftz = zh @ m
    val = np.sum(zh * fy, axis=-1)
    denom = fy[..., 0] ** 2 + fy[..., 1] ** 2 + ftz[..., 0] ** 2 + ftz[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(val) / np.sqrt(denom)
    return np.where(denom < 1e-30, np.inf, d)


def _transfer_error(m, src, dst):
    q = hom(src) @ np.asarray(m, dtype=float).T
    w = q[..., 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    d = np.linalg.norm(q[..., :2] / w[..., None] - np.asarray(dst, dtype=float), axis=-1)
    return np.where(bad, np.inf, d)


def reprojection_error_h(h, y, z):
    """Symmetric RMS transfer error of a homography in pixels.

    Points mapped to infinity by either direction get +inf.
    """
    m = _as_matrix(h)
    e_fwd = _transfer_error(m, y, z)
    e_bwd = _transfer_error(np.linalg.inv(m), z, y)
    return np.sqrt(0.5 * (e_fwd**2 + e_bwd**2))


def project_to_essential(m):
    """Nearest matrix with singular values (s, s, 0), scaled to ||vec|| = 1."""
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=float).reshape(3, 3))
    e = u @ np.diag([1.0, 1.0, 0.0]) @ vt
    return normalize_model_matrix(e)


def triangulate_point(rotation, translation, y, z):
    """Linear triangulation in normalized coordinates; cameras [I|0] and [R|t]."""
    p2 = np.hstack([rotation, translation.reshape(3, 1)])
    a = np.zeros((4, 4))
    a[0] = np.array([-1.0, 0.0, y[0], 0.0])
    a[1] = np.array([0.0, -1.0, y[1], 0.0])
    a[2] = z[0] * p2[2] - p2[0]
    a[3] = z[1] * p2[2] - p2[1]
    _, _, vt = np.linalg.svd(a)
    x = vt[-1]
    if abs(x[3]) < 1e-15:
        return np.full(3, np.inf)
    return x[:3] / x[3]


def decompose_essential(e, ys, zs, k1, k2):
    """Relative pose (R, t) from an essential matrix and supporting pixel points.

    The four (R, t) candidates are ranked by the count of supporting points
    triangulating in front of both cameras; the winner must hold a strict
    majority.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if ys.shape[0] == 0:
        raise ValueError("at least one supporting correspondence is required")
    yn = _as_k(k1).normalize(ys)
    zn = _as_k(k2).normalize(zs)

    u, _, vt = np.linalg.svd(_as_matrix(e))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = u[:, 2]
    candidates = [(u @ w @ vt, t), (u @ w @ vt, -t), (u @ w.T @ vt, t), (u @ w.T @ vt, -t)]

    best, best_count = None, -1
    for rot, trans in candidates:
        count = 0
        for y, z in zip(yn, zn):
            x = triangulate_point(rot, trans, y, z)
            if not np.all(np.isfinite(x)):
                continue
            z2 = (rot @ x + trans)[2]
            if x[2] > 0 and z2 > 0:
                count += 1
        if count > best_count:
            best, best_count = (rot, trans), count
    if best_count * 2 <= len(yn):
        raise DecompositionAmbiguousError(
            f"only {best_count}/{len(yn)} points in front of both cameras"
        )
    return best


def fundamental_from_essential(e, k1, k2):
    """Pixel-frame epipolar matrix induced by E and the two calibrations."""
    m = np.linalg.inv(_as_k(k2).k).T @ _as_matrix(e) @ np.linalg.inv(_as_k(k1).k)
    return normalize_model_matrix(m)


def essential_from_fundamental(f, k1, k2):
    m = _as_k(k2).k.T @ _as_matrix(f) @ _as_k(k1).k
    return normalize_model_matrix(m)


def homography_from_plane(k1, k2, rotation, translation, normal, depth):
    """Plane-induced homography for the plane n . X = d in camera-1 coordinates."""
    m = (np.asarray(rotation, float) + np.outer(np.asarray(translation, float), np.asarray(normal, float)) / depth)
    return normalize_model_matrix(_as_k(k2).k @ m @ np.linalg.inv(_as_k(k1).k))
