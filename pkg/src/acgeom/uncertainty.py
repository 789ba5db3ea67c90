"""First-order covariance propagation for minimal-solver outputs.

Every solver here is defined by constraints g(y, theta) = 0 between the
observations and the model.  Appending just enough model-only constraints
h(theta) = 0 (norm, determinant, unit translation) makes the stacked
Jacobian B = d(g; h)/d theta square, and the input covariance propagates
as Sigma = B^-1 A Sigma_yy A^T B^-T with A = d(g; h)/dy (zero rows for h).

Observation layouts (all row-major for vectorized 2x2 blocks):
  h_4pc     [y_i, z_i] x 4                                   (16)
  h_1ac1pc  [y0, z0, vec A, y_pc, z_pc]                      (12)
  h_2ac     [y1, z1, vec A1, y2, z2, vec A2]                 (16)
  f_7pc     [y_i, z_i] x 7                                   (28)
  f_2ac1pc  [y1, z1, vec A1, y2, z2, vec A2, y_pc, z_pc]     (20)
  e_5pc     [yn_i, zn_i] x 5          (normalized)           (20)
  e_2ac     [yn1, zn1, vec An1, yn2, zn2, vec An2] (norm.)   (16)

For the essential matrix the model is parametrized minimally by the unit
translation b and rotation vector r, with the single constraint
h = ||b|| - 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import CriticalConfigurationError, InconsistentManifoldError, InsufficientDataError
from .geometry import (
    CameraIntrinsics,
    decompose_essential,
    rotation_jacobians,
    skew,
)
from .solvers import (
    MinimalSample,
    _affinity_inverse,
    epipolar_rows_from_parts,
    h_2ac_constraint_rows,
    normalized_affinity,
    select_h2ac_rows,
)

_B_COND_MAX = 1e12
_RANK_REL_TOL = 1e-10


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class ConstraintSystem:
    """Stacked Jacobians of the constraints defining one solver solution."""

    a: np.ndarray      # d(g; h)/dy, h rows zero
    b: np.ndarray      # d(g; h)/dtheta, square
    n_g: int           # number of observation-dependent constraints

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if b.shape[0] != b.shape[1]:
            raise ValueError("stacked constraint Jacobian must be square")
        if a.shape[0] != b.shape[0]:
            raise ValueError("A and B must have the same number of rows")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class ModelCovariance:
    sigma: np.ndarray
    trace: float
    cond_proxy: float
    rank: int


@dataclass(frozen=True)
class TracePrior:
    """Distribution fitted to covariance traces of high-inlier-ratio models."""

    family: str                  # exponential | lognormal | normal
    params: tuple
    n_models: int = 0

    def __post_init__(self):
        if self.family not in ("exponential", "lognormal", "normal"):
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.family == "exponential" and self.params[0] <= 0:
            raise ValueError("rate must be positive")
        if self.family in ("lognormal", "normal") and self.params[1] <= 0:
            raise ValueError("variance must be positive")


@dataclass(frozen=True)
class IdentityTest:
    statistic: float
    dof: int
    threshold: float
    passed: bool


# ---------------------------------------------------------------------------
# Propagation


def propagate(system: ConstraintSystem, sigma_yy) -> ModelCovariance:
    """Covariance of the model parameters implied by the constraint system.

    Raises when B is numerically singular (critical configuration).  The
    returned condition proxy is computed on the regular projection of the
    (possibly rank-deficient) covariance.
    """
    sigma_yy = np.asarray(sigma_yy, dtype=float)
    b = system.b
    sv = np.linalg.svd(b, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > _B_COND_MAX:
        raise CriticalConfigurationError("constraint Jacobian B is singular")
    core = system.a @ sigma_yy @ system.a.T
    half = np.linalg.solve(b, core)
    sigma = np.linalg.solve(b, half.T).T
    sigma = 0.5 * (sigma + sigma.T)
    eigvals = np.linalg.eigvalsh(sigma)
    positive = eigvals[eigvals > _RANK_REL_TOL * max(eigvals.max(), 1e-300)]
    rank = len(positive)
    trace = float(np.trace(sigma))
    if rank == 0:
        c_s = np.inf
    else:
        c_s = float(positive.sum() * np.sum(1.0 / positive))
    return ModelCovariance(sigma=sigma, trace=trace, cond_proxy=c_s, rank=rank)


def condition_proxies(sigma):
    """(condition number, trace proxy c_s, trace) of a covariance matrix.

    c_s = tr(S) tr(S^-1) upper-bounds the condition number and converges
    to it for strongly anisotropic spectra; singular input gives +inf for
    both condition measures.
    """
    sigma = np.asarray(sigma, dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    trace = float(np.sum(eig))
    if eig.min() <= _RANK_REL_TOL * max(abs(eig).max(), 1e-300):
        return np.inf, np.inf, trace
    c = float(eig.max() / eig.min())
    c_s = float(np.sum(eig) * np.sum(1.0 / eig))
    return c, c_s, trace


def column_space_basis(sigma, rel_tol=_RANK_REL_TOL):
    """Orthonormal basis of the column space of a PSD matrix."""
    sigma = np.asarray(sigma, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    keep = eigvals > rel_tol * max(eigvals.max(), 1e-300)
    return eigvecs[:, keep]


def project_and_compare(sigma_alg, sigma_mc, n_samples, alpha=0.01, mass_tol=0.05):
    """Likelihood-ratio identity test of an empirical against an analytic covariance.

    Both matrices are projected onto the column space of the analytic one,
    where they are regular; the statistic
    (n-1) (ln det S0 - ln det S + tr(S0^-1 S) - p) is chi^2 with
    p(p+1)/2 degrees of freedom under equality.  Empirical mass outside
    the analytic column space beyond ``mass_tol`` raises.
    """
    sigma_alg = np.asarray(sigma_alg, dtype=float)
    sigma_mc = np.asarray(sigma_mc, dtype=float)
    if sigma_alg.shape != sigma_mc.shape:
        raise ValueError("covariance matrices must have identical shapes")
    basis = column_space_basis(sigma_alg)
    p = basis.shape[1]
    if p == 0:
        raise CriticalConfigurationError("analytic covariance is zero")
    residual_proj = np.eye(len(sigma_alg)) - basis @ basis.T
    outside = np.linalg.norm(residual_proj @ sigma_mc @ residual_proj)
    if outside > mass_tol * max(np.linalg.norm(sigma_mc), 1e-300):
        raise InconsistentManifoldError(
            f"empirical covariance has {outside:.3g} mass outside the model manifold"
        )
    s0 = basis.T @ sigma_alg @ basis
    s1 = basis.T @ sigma_mc @ basis
    sign0, logdet0 = np.linalg.slogdet(s0)
    sign1, logdet1 = np.linalg.slogdet(s1)
    if sign0 <= 0 or sign1 <= 0:
        raise CriticalConfigurationError("projected covariance is not positive definite")
    statistic = (n_samples - 1) * (logdet0 - logdet1 + np.trace(np.linalg.solve(s0, s1)) - p)
    dof = p * (p + 1) // 2
    threshold = float(scipy.stats.chi2.ppf(1.0 - alpha, dof))
    return IdentityTest(float(statistic), dof, threshold, bool(statistic < threshold))


# ---------------------------------------------------------------------------
# Constraint systems per solver kind


def _cofactor_matrix(m):
    c = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(m, i, axis=0), j, axis=1)
            c[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    return c


def _h_point_jacobians(h_mat, y, z):
    """Two DLT rows: values g, d/dtheta (2x9), d/dy (2x2), d/dz (2x2)."""
    yh = np.append(y, 1.0)
    s3 = h_mat[2] @ yh
    d_theta = np.zeros((2, 9))
    d_theta[0, 0:3] = yh
    d_theta[0, 6:9] = -z[0] * yh
    d_theta[1, 3:6] = yh
    d_theta[1, 6:9] = -z[1] * yh
    d_y = np.stack([h_mat[0, :2] - z[0] * h_mat[2, :2], h_mat[1, :2] - z[1] * h_mat[2, :2]])
    d_z = -np.diag([s3, s3])
    return d_theta, d_y, d_z


def _h_affinity_jacobians(h_mat, y, z, a):
    """Four affinity rows H[i,j] - z_i H[2,j] - A[i,j] (H[2] . y~) = 0."""
    yh = np.append(y, 1.0)
    s3 = h_mat[2] @ yh
    d_theta = np.zeros((4, 9))
    d_y = np.zeros((4, 2))
    d_z = np.zeros((4, 2))
    d_a = np.zeros((4, 4))
    r = 0
    for i in range(2):
        for j in range(2):
            d_theta[r, 3 * i + j] += 1.0
            d_theta[r, 6 + j] -= z[i]
            d_theta[r, 6:9] -= a[i, j] * yh
            d_y[r] = -a[i, j] * h_mat[2, :2]
            d_z[r, i] = -h_mat[2, j]
            d_a[r, 2 * i + j] = -s3
            r += 1
    return d_theta, d_y, d_z, d_a


def _f_point_jacobians(f_mat, y, z):
    yh = np.append(y, 1.0)
    zh = np.append(z, 1.0)
    d_theta = np.kron(zh, yh)
    d_y = (f_mat.T @ zh)[:2]
    d_z = (f_mat @ yh)[:2]
    return d_theta, d_y, d_z


def _f_affine_jacobians(f_mat, y, z, a):
    """The affine pair c = (F y~)_{1:2} + A^-T (F^T z~)_{1:2}."""
    yh = np.append(y, 1.0)
    zh = np.append(z, 1.0)
    a_inv = _affinity_inverse(a)
    u = (f_mat.T @ zh)[:2]
    w = a_inv.T @ u
    d_theta = epipolar_rows_from_parts(y, z, a)[1:3]
    d_y = f_mat[:2, :2]
    d_z = a_inv.T @ f_mat[:2, :2].T
    d_a = np.zeros((2, 4))
    for k in range(2):
        for l in range(2):
            col = -a_inv[l] * w[k]  # d c / d A[k, l]
            d_a[:, 2 * k + l] = col
    return d_theta, d_y, d_z, d_a


def _e_matrix_jacobians(b_vec, r_vec):
    """E = [b]_x R(r) and its derivatives w.r.t. (b, r)."""
    rot, d_rot = rotation_jacobians(r_vec)
    e = skew(b_vec) @ rot
    d_theta = []
    for k in range(3):
        ek = np.zeros(3)
        ek[k] = 1.0
        d_theta.append(skew(ek) @ rot)
    for j in range(3):
        d_theta.append(skew(b_vec) @ d_rot[j])
    return e, d_theta


def _as_k(k):
    return k if isinstance(k, CameraIntrinsics) else CameraIntrinsics(k)


def pose_parameters_from_essential(model, sample: MinimalSample, k1, k2):
    """Minimal (b, r) parameters of an essential matrix, using the sample
    points to resolve the four-fold decomposition ambiguity."""
    ys, zs = sample.all_points()
    rotation, translation = decompose_essential(model, ys, zs, k1, k2)
    from .geometry import vector_from_rotation

    return translation, vector_from_rotation(rotation)


def constraint_system_for(kind, sample: MinimalSample, model, k1=None, k2=None, drop_row=5):
    """Analytic constraint Jacobians (A, B) for one solver solution.

    ``model`` must be consistent with the sample within solver tolerance;
    the Jacobians are evaluated at the given (observations, parameters).
    """
    if kind in ("h_4pc", "h_1ac1pc", "h_2ac"):
        h_mat = model.m if hasattr(model, "m") else np.asarray(model, dtype=float)
        theta = h_mat.ravel()
        if kind == "h_4pc":
            n_y = 16
            rows_t, rows_y = [], []
            for i, pc in enumerate(sample.pcs):
                d_theta, d_y, d_z = _h_point_jacobians(h_mat, pc.y0, pc.z0)
                block = np.zeros((2, n_y))
                block[:, 4 * i : 4 * i + 2] = d_y
                block[:, 4 * i + 2 : 4 * i + 4] = d_z
                rows_t.append(d_theta)
                rows_y.append(block)
        elif kind == "h_1ac1pc":
            n_y = 12
            ac = sample.acs[0]
            pc = sample.pcs[0]
            rows_t, rows_y = [], []
            d_theta, d_y, d_z = _h_point_jacobians(h_mat, ac.y0, ac.z0)
            block = np.zeros((2, n_y))
            block[:, 0:2] = d_y
            block[:, 2:4] = d_z
            rows_t.append(d_theta)
            rows_y.append(block)
            d_theta, d_y, d_z, d_a = _h_affinity_jacobians(h_mat, ac.y0, ac.z0, ac.a)
            block = np.zeros((4, n_y))
            block[:, 0:2] = d_y
            block[:, 2:4] = d_z
            block[:, 4:8] = d_a
            rows_t.append(d_theta)
            rows_y.append(block)
            d_theta, d_y, d_z = _h_point_jacobians(h_mat, pc.y0, pc.z0)
            block = np.zeros((2, n_y))
            block[:, 8:10] = d_y
            block[:, 10:12] = d_z
            rows_t.append(d_theta)
            rows_y.append(block)
        else:  # h_2ac
            n_y = 16
            ac1, ac2 = sample.acs
            all_t = np.zeros((12, 9))
            all_y = np.zeros((12, n_y))
            for idx, ac in enumerate((ac1, ac2)):
                off = 8 * idx
                d_theta, d_y, d_z = _h_point_jacobians(h_mat, ac.y0, ac.z0)
                all_t[6 * idx : 6 * idx + 2] = d_theta
                all_y[6 * idx : 6 * idx + 2, off : off + 2] = d_y
                all_y[6 * idx : 6 * idx + 2, off + 2 : off + 4] = d_z
                d_theta, d_y, d_z, d_a = _h_affinity_jacobians(h_mat, ac.y0, ac.z0, ac.a)
                all_t[6 * idx + 2 : 6 * idx + 6] = d_theta
                all_y[6 * idx + 2 : 6 * idx + 6, off : off + 2] = d_y
                all_y[6 * idx + 2 : 6 * idx + 6, off + 2 : off + 4] = d_z
                all_y[6 * idx + 2 : 6 * idx + 6, off + 4 : off + 8] = d_a
            full_rows = h_2ac_constraint_rows(ac1.y0, ac1.z0, ac1.a, ac2.y0, ac2.z0, ac2.a)
            subset = list(select_h2ac_rows(full_rows))
            rows_t = [all_t[subset]]
            rows_y = [all_y[subset]]
        b_g = np.vstack(rows_t)
        a_g = np.vstack(rows_y)
        b_h = theta[None, :]  # gradient of ||vec H|| - 1 at unit norm
        a = np.vstack([a_g, np.zeros((1, n_y))])
        b = np.vstack([b_g, b_h])
        return ConstraintSystem(a=a, b=b, n_g=a_g.shape[0])

    if kind in ("f_7pc", "f_2ac1pc"):
        f_mat = model.m if hasattr(model, "m") else np.asarray(model, dtype=float)
        theta = f_mat.ravel()
        if kind == "f_7pc":
            n_y = 28
            rows_t, rows_y = [], []
            for i, pc in enumerate(sample.pcs):
                d_theta, d_y, d_z = _f_point_jacobians(f_mat, pc.y0, pc.z0)
                block = np.zeros(n_y)
                block[4 * i : 4 * i + 2] = d_y
                block[4 * i + 2 : 4 * i + 4] = d_z
                rows_t.append(d_theta[None, :])
                rows_y.append(block[None, :])
        else:
            n_y = 20
            rows_t, rows_y = [], []
            for idx, ac in enumerate(sample.acs):
                off = 8 * idx
                d_theta, d_y, d_z = _f_point_jacobians(f_mat, ac.y0, ac.z0)
                block = np.zeros(n_y)
                block[off : off + 2] = d_y
                block[off + 2 : off + 4] = d_z
                rows_t.append(d_theta[None, :])
                rows_y.append(block[None, :])
                d_theta, d_y, d_z, d_a = _f_affine_jacobians(f_mat, ac.y0, ac.z0, ac.a)
                block = np.zeros((2, n_y))
                block[:, off : off + 2] = d_y
                block[:, off + 2 : off + 4] = d_z
                block[:, off + 4 : off + 8] = d_a
                rows_t.append(d_theta)
                rows_y.append(block)
            pc = sample.pcs[0]
            d_theta, d_y, d_z = _f_point_jacobians(f_mat, pc.y0, pc.z0)
            block = np.zeros(n_y)
            block[16:18] = d_y
            block[18:20] = d_z
            rows_t.append(d_theta[None, :])
            rows_y.append(block[None, :])
        b_g = np.vstack(rows_t)
        a_g = np.vstack(rows_y)
        b_h = np.vstack([_cofactor_matrix(f_mat).ravel(), theta])
        a = np.vstack([a_g, np.zeros((2, n_y))])
        b = np.vstack([b_g, b_h])
        return ConstraintSystem(a=a, b=b, n_g=a_g.shape[0])

    if kind in ("e_5pc", "e_2ac"):
        if k1 is None or k2 is None:
            raise ValueError("essential-matrix systems need both calibrations")
        k1, k2 = _as_k(k1), _as_k(k2)
        b_vec, r_vec = pose_parameters_from_essential(model, sample, k1, k2)
        e_mat, d_e = _e_matrix_jacobians(b_vec, r_vec)
        if kind == "e_5pc":
            n_y = 20
            rows_t, rows_y = [], []
            for i, pc in enumerate(sample.pcs):
                yn = k1.normalize(pc.y0)
                zn = k2.normalize(pc.z0)
                yh = np.append(yn, 1.0)
                zh = np.append(zn, 1.0)
                d_theta = np.array([zh @ g @ yh for g in d_e])
                d_y = (e_mat.T @ zh)[:2]
                d_z = (e_mat @ yh)[:2]
                block = np.zeros(n_y)
                block[4 * i : 4 * i + 2] = d_y
                block[4 * i + 2 : 4 * i + 4] = d_z
                rows_t.append(d_theta[None, :])
                rows_y.append(block[None, :])
            b_g = np.vstack(rows_t)
            a_g = np.vstack(rows_y)
        else:
            n_y = 16
            all_t = np.zeros((6, 6))
            all_y = np.zeros((6, n_y))
            for idx, ac in enumerate(sample.acs):
                off = 8 * idx
                yn = k1.normalize(ac.y0)
                zn = k2.normalize(ac.z0)
                a_n = normalized_affinity(ac.a, k1, k2)
                yh = np.append(yn, 1.0)
                zh = np.append(zn, 1.0)
                row = 3 * idx
                all_t[row] = [zh @ g @ yh for g in d_e]
                all_y[row, off : off + 2] = (e_mat.T @ zh)[:2]
                all_y[row, off + 2 : off + 4] = (e_mat @ yh)[:2]
                _, d_y, d_z, d_a = _f_affine_jacobians(e_mat, yn, zn, a_n)
                a_inv = _affinity_inverse(a_n)
                for j, g in enumerate(d_e):
                    all_t[row + 1 : row + 3, j] = (g @ yh)[:2] + a_inv.T @ (g.T @ zh)[:2]
                all_y[row + 1 : row + 3, off : off + 2] = d_y
                all_y[row + 1 : row + 3, off + 2 : off + 4] = d_z
                all_y[row + 1 : row + 3, off + 4 : off + 8] = d_a
            keep = [i for i in range(6) if i != drop_row]
            b_g = all_t[keep]
            a_g = all_y[keep]
        b_h = np.zeros((1, 6))
        b_h[0, :3] = b_vec  # gradient of ||b|| - 1
        a = np.vstack([a_g, np.zeros((1, n_y))])
        b = np.vstack([b_g, b_h])
        return ConstraintSystem(a=a, b=b, n_g=a_g.shape[0])

    raise ValueError(f"unsupported model kind {kind!r}")


def default_input_covariance(kind, sample: MinimalSample, k1=None, k2=None,
                             point_sigma=0.3, affine_sigma=0.01):
    """Measurement covariance used when no refined covariances are available.

    Point coordinates are isotropic with ``point_sigma`` (pixels), affinity
    entries independent with ``affine_sigma``, cross covariances zero.  For
    the essential-matrix kinds the blocks are mapped to normalized camera
    units through the calibration matrices.
    """
    layouts = {
        "h_4pc": ("pp",) * 4,
        "h_1ac1pc": ("ppa", "pp"),
        "h_2ac": ("ppa", "ppa"),
        "f_7pc": ("pp",) * 7,
        "f_2ac1pc": ("ppa", "ppa", "pp"),
        "e_5pc": ("pp",) * 5,
        "e_2ac": ("ppa", "ppa"),
    }
    if kind not in layouts:
        raise ValueError(f"unsupported model kind {kind!r}")
    calibrated = kind.startswith("e_")
    blocks = []
    if calibrated:
        b1 = np.linalg.inv(_as_k(k1).linear)
        b2 = np.linalg.inv(_as_k(k2).linear)
    for item in layouts[kind]:
        if calibrated:
            blocks.append(point_sigma**2 * (b1 @ b1.T))
            blocks.append(point_sigma**2 * (b2 @ b2.T))
        else:
            blocks.append(point_sigma**2 * np.eye(2))
            blocks.append(point_sigma**2 * np.eye(2))
        if item == "ppa":
            if calibrated:
                m = np.kron(b2, np.linalg.inv(b1).T)  # vec_r(B2^-1 A B1)
                blocks.append(affine_sigma**2 * (m @ m.T))
            else:
                blocks.append(affine_sigma**2 * np.eye(4))
    return scipy.linalg.block_diag(*blocks)


# ---------------------------------------------------------------------------
# Trace priors


def fit_trace_prior(traces, inlier_ratios, family="lognormal", min_inlier_ratio=0.95):
    """Fit a distribution to covariance traces of good models.

    Only models with inlier ratio >= ``min_inlier_ratio`` enter the fit.
    The exponential rate is (n - 2) / sum(t); the lognormal family fits
    mean and unbiased variance of log10(t); the normal family fits mean
    and unbiased variance of t.
    """
    traces = np.asarray(traces, dtype=float)
    ratios = np.asarray(inlier_ratios, dtype=float)
    good = traces[ratios >= min_inlier_ratio]
    n = len(good)
    if family == "exponential":
        if n < 3:
            raise InsufficientDataError(f"exponential fit needs >= 3 good models, got {n}")
        return TracePrior("exponential", (float((n - 2) / good.sum()),), n)
    if family == "lognormal":
        if n < 2:
            raise InsufficientDataError(f"lognormal fit needs >= 2 good models, got {n}")
        logs = np.log10(good)
        mu = float(logs.mean())
        var = float(np.sum((logs - mu) ** 2) / (n - 1))
        return TracePrior("lognormal", (mu, var), n)
    if family == "normal":
        if n < 2:
            raise InsufficientDataError(f"normal fit needs >= 2 good models, got {n}")
        mu = float(good.mean())
        var = float(np.sum((good - mu) ** 2) / (n - 1))
        return TracePrior("normal", (mu, var), n)
    raise ValueError(f"unknown prior family {family!r}")


def acceptability_prior(trace, prior: TracePrior):
    """Probability that a model with the given covariance trace is acceptable.

    Survival function of the fitted family; monotone non-increasing in the
    trace, approaching 1 as the trace vanishes.
    """
    t = float(trace)
    if prior.family == "exponential":
        return float(np.exp(-prior.params[0] * max(t, 0.0)))
    if prior.family == "lognormal":
        if t <= 0:
            return 1.0
        mu, var = prior.params
        return float(scipy.stats.norm.sf((np.log10(t) - mu) / np.sqrt(var)))
    mu, var = prior.params
    return float(scipy.stats.norm.sf((t - mu) / np.sqrt(var)))
