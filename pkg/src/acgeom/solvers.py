"""Minimal solvers for H, F and E from affine and point correspondences.

All linear systems follow the package conventions: row-major vec() of the
3x3 model, epipolar constraint z^T M y = 0.  Point-based solvers are the
classical 4-point homography, 7-point fundamental and 5-point essential
algorithms; the affine solvers replace point rows with the three linear
constraints each affine correspondence puts on the model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, InvalidPolynomialError, NoninvertibleAffinityError
from .geometry import (
    AffineCorrespondence,
    CameraIntrinsics,
    EssentialMatrix,
    FundamentalMatrix,
    Homography,
    PointCorrespondence,
    normalize_model_matrix,
    project_to_essential,
)

RANK_TOL = 1e-9  # singular-value ratio below which a system counts as rank deficient


# ---------------------------------------------------------------------------
# Univariate polynomial roots

def _horner_pair(c, x):
    """Polynomial value and derivative at x; c highest first (python floats)."""
    p = c[0]
    d = 0.0
    for k in range(1, len(c)):
        d = d * x + p
        p = p * x + c[k]
    return p, d


def poly_real_roots(coeffs, dedupe_tol=1e-9):
    """All real roots of a univariate polynomial (coefficients highest first).

    Roots come from the companion matrix and are Newton-polished until the
    residual is below 1e-12 * max|coeff| * max(1, |x|)^deg; duplicates
    within ``dedupe_tol`` are merged.  Raises on the all-zero polynomial.
    """
    c = np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel()
    scale = np.abs(c).max() if c.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        raise InvalidPolynomialError("all coefficients vanish")
    significant = np.abs(c) > 1e-14 * scale
    c = c[np.argmax(significant):]
    if c.size == 1:
        return np.array([])
    roots = np.roots(c)
    real = roots[np.abs(roots.imag) <= 1e-8 * np.maximum(1.0, np.abs(roots.real))].real
    deg = c.size - 1
    cl = [float(v) for v in c]
    polished = []
    for x in np.sort(real):
        x = float(x)
        p, _ = _horner_pair(cl, x)
        best_x, best_val = x, abs(p)
        for _ in range(40):
            tol = 1e-13 * scale * max(1.0, abs(x)) ** deg
            p, d = _horner_pair(cl, x)
            if abs(p) < best_val:
                best_x, best_val = x, abs(p)
            if abs(p) <= tol or d == 0.0 or not np.isfinite(d):
                break
            step = p / d
            if not np.isfinite(step) or abs(step) < 1e-16 * max(1.0, abs(x)):
                break
            x = x - step
        tol = 1e-12 * scale * max(1.0, abs(best_x)) ** deg
        if best_val <= tol:
            polished.append(best_x)
    out = []
    for x in sorted(polished):
        if not out or abs(x - out[-1]) > dedupe_tol:
            out.append(x)
    return np.array(out)


def cubic_real_roots(c3, c2, c1, c0):
    """Real roots of c3 x^3 + c2 x^2 + c1 x + c0."""
    return poly_real_roots([c3, c2, c1, c0])


# ---------------------------------------------------------------------------
# Samples

SAMPLE_REQUIREMENTS = {
    "h_1ac1pc": (1, 1),
    "h_2ac": (2, 0),
    "h_4pc": (0, 4),
    "f_2ac1pc": (2, 1),
    "f_7pc": (0, 7),
    "e_2ac": (2, 0),
    "e_5pc": (0, 5),
}

MODEL_OF_KIND = {k: k[0] for k in SAMPLE_REQUIREMENTS}


def sample_size(kind):
    n_ac, n_pc = SAMPLE_REQUIREMENTS[kind]
    return n_ac + n_pc


@dataclass(frozen=True)
class MinimalSample:
    """A minimal set of correspondences for one solver kind."""

    kind: str
    acs: tuple = ()
    pcs: tuple = ()

    def __post_init__(self):
        if self.kind not in SAMPLE_REQUIREMENTS:
            raise ValueError(f"unknown sample kind {self.kind!r}")
        object.__setattr__(self, "acs", tuple(self.acs))
        object.__setattr__(self, "pcs", tuple(self.pcs))
        n_ac, n_pc = SAMPLE_REQUIREMENTS[self.kind]
        if len(self.acs) != n_ac or len(self.pcs) != n_pc:
            raise ValueError(
                f"{self.kind} needs {n_ac} ACs + {n_pc} PCs, "
                f"got {len(self.acs)} + {len(self.pcs)}"
            )

    def all_points(self):
        ys = [ac.y0 for ac in self.acs] + [pc.y0 for pc in self.pcs]
        zs = [ac.z0 for ac in self.acs] + [pc.z0 for pc in self.pcs]
        return np.array(ys), np.array(zs)


# ---------------------------------------------------------------------------
# Shared linear algebra

def hartley_normalization(pts):
    """Similarity transform moving points to centroid 0, mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    s = np.sqrt(2.0) / max(d, 1e-12)
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, t


def _null_vectors(rows, n_null, context):
    rows = np.asarray(rows, dtype=float)
    _, s, vt = np.linalg.svd(rows)
    rank_needed = rows.shape[1] - n_null
    if s[rank_needed - 1] < RANK_TOL * s[0]:
        raise DegenerateSampleError(f"{context}: constraint matrix is rank deficient")
    return vt[rank_needed:]


def _point_row_f(y, z):
    yh = np.append(y, 1.0)
    zh = np.append(z, 1.0)
    return np.kron(zh, yh)


def _affinity_inverse(a):
    a = np.asarray(a, dtype=float)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) < 1e-12 * max(1.0, float(np.abs(a).max()) ** 2):
        raise NoninvertibleAffinityError("affinity matrix is singular")
    return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det


def epipolar_rows_from_parts(y, z, a):
    """3x9 linear constraints on vec(F) from one affine correspondence.

    Row 0 is the point (epipolar) constraint; rows 1-2 force the affinity
    to be the differential of the epipolar mapping:
    (F y~)_{1:2} + A^-T (F^T z~)_{1:2} = 0.
    """
    ainv = _affinity_inverse(a)
    yh = np.append(np.asarray(y, dtype=float), 1.0)
    zh = np.append(np.asarray(z, dtype=float), 1.0)
    rows = np.zeros((3, 9))
    rows[0] = np.kron(zh, yh)
    for k in range(2):
        rows[1 + k, 3 * k : 3 * k + 3] += yh
        for m in range(2):
            rows[1 + k, [m, 3 + m, 6 + m]] += ainv[m, k] * zh
    return rows


def ac_epipolar_rows(ac: AffineCorrespondence):
    """Three linear constraints an AC puts on the epipolar geometry (pixel frame)."""
    return epipolar_rows_from_parts(ac.y0, ac.z0, ac.a)


# ---------------------------------------------------------------------------
# Homography solvers

def _dlt_point_rows(y, z):
    yh = np.append(y, 1.0)
    rows = np.zeros((2, 9))
    rows[0, 0:3] = yh
    rows[0, 6:9] = -z[0] * yh
    rows[1, 3:6] = yh
    rows[1, 6:9] = -z[1] * yh
    return rows


def _h_affinity_rows(y, z, a):
    """Four linear constraints tying the local affinity to the homography:
    H[i][j] - H[2][j] z_i - A[i][j] (H[2] . y~) = 0."""
    yh = np.append(y, 1.0)
    rows = np.zeros((4, 9))
    r = 0
    for i in range(2):
        for j in range(2):
            rows[r, 3 * i + j] += 1.0
            rows[r, 6 + j] -= z[i]
            rows[r, 6:9] -= a[i, j] * yh
            r += 1
    return rows


def _any_collinear_triple(pts, tol=1e-8):
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                area = abs(np.cross(pts[j] - pts[i], pts[k] - pts[i]))
                if area < tol:
                    return True
    return False


def solve_h_4pc(sample: MinimalSample):
    """Normalized DLT from four point correspondences."""
    ys, zs = sample.all_points()
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    if _any_collinear_triple(yn) or _any_collinear_triple(zn):
        raise DegenerateSampleError("three of the four points are collinear")
    rows = np.vstack([_dlt_point_rows(y, z) for y, z in zip(yn, zn)])
    h_n = _null_vectors(rows, 1, "h_4pc")[0].reshape(3, 3)
    return [Homography.from_matrix(np.linalg.inv(t2) @ h_n @ t1)]


def h_spurious_direction(y0, z0, y_other):
    """The structural null vector of point+affinity constraint systems.

    The rank-1 matrix z0~ (y0~ x y_other~)^T satisfies the point rows of
    both points and all four affinity rows at y0 identically, for any data.
    Geometrically, adding it post-composes the model with an elation whose
    center is z0 and whose axis passes through the two image points, which
    leaves the first point, its local Jacobian and the second point fixed.
    """
    r3 = np.cross(np.append(np.asarray(y0, float), 1.0), np.append(np.asarray(y_other, float), 1.0))
    return np.outer(np.append(np.asarray(z0, float), 1.0), r3)


def solve_h_1ac1pc(sample: MinimalSample):
    """Homography interpolating one AC (6 constraints) and one PC (2 constraints).

    The eight constraints determine the model only up to the one-parameter
    elation family described by :func:`h_spurious_direction`: every member
    maps y0 to z0 with the same local Jacobian and maps the extra point
    correctly.  The solver returns the member of that family with the
    smallest projective component (||H[2, :2]||), which recovers the
    underlying map exactly whenever it is affine.  For a uniquely
    determined homography from two affine correspondences use
    :func:`solve_h_2ac`.
    """
    ac = sample.acs[0]
    pc = sample.pcs[0]
    ys = np.array([ac.y0, pc.y0])
    zs = np.array([ac.z0, pc.z0])
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    a_n = (t2[0, 0] / t1[0, 0]) * ac.a
    rows = np.vstack(
        [
            _dlt_point_rows(yn[0], zn[0]),
            _h_affinity_rows(yn[0], zn[0], a_n),
            _dlt_point_rows(yn[1], zn[1]),
        ]
    )
    _, s, vt = np.linalg.svd(rows)
    # rank 7 is the generic consistent case (7 constraints + structural null)
    if s[6] < RANK_TOL * s[0]:
        raise DegenerateSampleError("h_1ac1pc: constraint matrix is rank deficient")
    basis = vt[7:]  # 2-dim solution family
    sel = basis[:, 6:8]  # projective part of the third row
    m = sel @ sel.T
    w, v = np.linalg.eigh(m)
    h_n = (v[:, 0] @ basis).reshape(3, 3)
    return [Homography.from_matrix(np.linalg.inv(t2) @ h_n @ t1)]


# canonical square subsets of the 12 two-AC constraint rows, in priority
# order; each lists (point rows of both ACs) + four affinity-row indices
H2AC_ROW_PRIORITY = (
    (0, 1, 6, 7, 2, 3, 4, 11),
    (0, 1, 6, 7, 2, 8, 9, 10),
    (0, 1, 6, 7, 5, 8, 9, 10),
    (0, 1, 6, 7, 3, 4, 5, 8),
)


def h_2ac_constraint_rows(y1, z1, a1, y2, z2, a2):
    """All 12 linear constraint rows two ACs put on a homography."""
    return np.vstack(
        [
            _dlt_point_rows(y1, z1),
            _h_affinity_rows(y1, z1, a1),
            _dlt_point_rows(y2, z2),
            _h_affinity_rows(y2, z2, a2),
        ]
    )


def select_h2ac_rows(rows):
    """First canonical 8-row subset of the 12 with full rank."""
    for subset in H2AC_ROW_PRIORITY:
        sel = rows[list(subset)]
        s = np.linalg.svd(sel, compute_uv=False)
        if s[7] >= RANK_TOL * s[0]:
            return subset
    raise DegenerateSampleError("h_2ac: no well-conditioned constraint subset")


def solve_h_2ac(sample: MinimalSample):
    """Homography from two ACs: a square subset of their 12 linear constraints.

    Eight of the twelve rows suffice; a fixed priority list of subsets keeps
    the selection deterministic (the symmetric splits are rank deficient on
    consistent data, so the subsets mix point rows with an asymmetric choice
    of affinity rows).
    """
    ac1, ac2 = sample.acs
    ys = np.array([ac1.y0, ac2.y0])
    zs = np.array([ac1.z0, ac2.z0])
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    scale = t2[0, 0] / t1[0, 0]
    rows = h_2ac_constraint_rows(yn[0], zn[0], scale * ac1.a, yn[1], zn[1], scale * ac2.a)
    subset = select_h2ac_rows(rows)
    h_n = _null_vectors(rows[list(subset)], 1, "h_2ac")[0].reshape(3, 3)
    return [Homography.from_matrix(np.linalg.inv(t2) @ h_n @ t1)]


# ---------------------------------------------------------------------------
# Fundamental-matrix solvers

def _f_from_pencil(rows, t1, t2, context):
    """Shared tail of the 7-point style solvers: 2-dim null space,
    F = x F1 + F2, det = 0 cubic, denormalization."""
    basis = _null_vectors(rows, 2, context)
    f1 = basis[0].reshape(3, 3)
    f2 = basis[1].reshape(3, 3)
    xs = np.array([-1.0, 0.0, 1.0, 2.0])
    vals = np.array([np.linalg.det(x * f1 + f2) for x in xs])
    coeffs = np.linalg.solve(np.vander(xs, 4), vals)
    try:
        roots = poly_real_roots(coeffs)
    except InvalidPolynomialError as exc:
        raise DegenerateSampleError(f"{context}: singular matrix pencil") from exc
    models = []
    for x in roots:
        f_n = x * f1 + f2
        f_px = t2.T @ f_n @ t1
        # snap the tiny numerical determinant drift away before validation
        u, s, vt = np.linalg.svd(f_px)
        s[2] = 0.0
        models.append(FundamentalMatrix.from_matrix(u @ np.diag(s) @ vt))
    return models


def solve_f_7pc(sample: MinimalSample):
    """Classical 7-point solver: rank-7 system, cubic determinant constraint."""
    ys, zs = sample.all_points()
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    rows = np.array([_point_row_f(y, z) for y, z in zip(yn, zn)])
    return _f_from_pencil(rows, t1, t2, "f_7pc")


def solve_f_2ac1pc(sample: MinimalSample):
    """Fundamental matrix from two ACs (3 rows each) and one PC (1 row)."""
    ys, zs = sample.all_points()
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    scale = t2[0, 0] / t1[0, 0]
    rows = np.vstack(
        [
            epipolar_rows_from_parts(yn[0], zn[0], scale * sample.acs[0].a),
            epipolar_rows_from_parts(yn[1], zn[1], scale * sample.acs[1].a),
            _point_row_f(yn[2], zn[2])[None, :],
        ]
    )
    return _f_from_pencil(rows, t1, t2, "f_2ac1pc")


# ---------------------------------------------------------------------------
# Essential-matrix solvers
#
# The 4-dimensional null space E = x B1 + y B2 + z B3 + B4 is substituted
# into det(E) = 0 and 2 E E^T E - tr(E E^T) E = 0, giving ten cubics in
# (x, y, z).  Treating z as the hidden variable turns them into a 10x10
# polynomial matrix M(z) acting on the degree-<=3 monomials in (x, y);
# det M(z) is a degree-10 polynomial whose real roots yield the solutions.

_MONO20 = [
    (3, 0, 0), (2, 1, 0), (1, 2, 0), (0, 3, 0),
    (2, 0, 1), (1, 1, 1), (0, 2, 1),
    (1, 0, 2), (0, 1, 2),
    (0, 0, 3),
    (2, 0, 0), (1, 1, 0), (0, 2, 0),
    (1, 0, 1), (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0), (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
]
_MONO10_DEG2 = [
    (2, 0, 0), (1, 1, 0), (0, 2, 0), (1, 0, 1), (0, 1, 1),
    (0, 0, 2), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0),
]
_MONO4_DEG1 = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
_XY10 = [(3, 0), (2, 1), (1, 2), (0, 3), (2, 0), (1, 1), (0, 2), (1, 0), (0, 1), (0, 0)]

_IDX20 = {m: i for i, m in enumerate(_MONO20)}
_IDX10 = {m: i for i, m in enumerate(_MONO10_DEG2)}


def _addexp(p, q):
    return (p[0] + q[0], p[1] + q[1], p[2] + q[2])


_TABLE11 = [(i, j, _IDX10[_addexp(a, b)]) for i, a in enumerate(_MONO4_DEG1) for j, b in enumerate(_MONO4_DEG1)]
_TABLE21 = [(i, j, _IDX20[_addexp(a, b)]) for i, a in enumerate(_MONO10_DEG2) for j, b in enumerate(_MONO4_DEG1)]
# column/z-power layout of the hidden-variable matrix
_HVCOL = [( _XY10.index((m[0], m[1])), m[2]) for m in _MONO20]


def _mul11(p, q):
    """Product of degree-1 polynomials in (x, y, z); broadcasts over leading dims."""
    out = np.zeros(np.broadcast_shapes(p.shape[:-1], q.shape[:-1]) + (10,))
    for i, j, t in _TABLE11:
        out[..., t] += p[..., i] * q[..., j]
    return out


def _mul21(p, q):
    """Degree-2 times degree-1 polynomial product; broadcasts over leading dims."""
    out = np.zeros(np.broadcast_shapes(p.shape[:-1], q.shape[:-1]) + (20,))
    for i, j, t in _TABLE21:
        out[..., t] += p[..., i] * q[..., j]
    return out


def _essential_equations(basis):
    """The ten cubic constraints as a (10, 20) coefficient matrix."""
    e = np.stack([b.reshape(3, 3) for b in basis], axis=-1)  # (3, 3, 4)

    # det(E) via cofactor expansion along the first row
    minors = [
        _mul11(e[1, 1], e[2, 2]) - _mul11(e[1, 2], e[2, 1]),
        _mul11(e[1, 0], e[2, 2]) - _mul11(e[1, 2], e[2, 0]),
        _mul11(e[1, 0], e[2, 1]) - _mul11(e[1, 1], e[2, 0]),
    ]
    det_eq = _mul21(minors[0], e[0, 0]) - _mul21(minors[1], e[0, 1]) + _mul21(minors[2], e[0, 2])

    # 2 E E^T E - tr(E E^T) E
    gram = _mul11(e[:, None, :, :], e[None, :, :, :]).sum(axis=2)  # (3, 3, 10) = E E^T
    cube = _mul21(gram[:, None, :, :], np.swapaxes(e, 0, 1)[None, :, :, :]).sum(axis=2)
    trace = gram[0, 0] + gram[1, 1] + gram[2, 2]
    trace_term = _mul21(trace[None, None, :], e)
    c = 2.0 * cube - trace_term  # (3, 3, 20)

    eqs = np.vstack([det_eq[None, :], c.reshape(9, 20)])
    norms = np.linalg.norm(eqs, axis=1, keepdims=True)
    norms[norms < 1e-300] = 1.0
    return eqs / norms


def _hidden_variable_matrix(eqs):
    """(10, 10, 4) coefficients of M(z): rows are equations, columns are
    (x, y) monomials, the last axis holds powers of z."""
    m = np.zeros((10, 10, 4))
    for src, (col, zpow) in enumerate(_HVCOL):
        m[:, col, zpow] = eqs[:, src]
    return m


_Z_SCALE = 4.0
_FIT_NODES = _Z_SCALE * np.cos(np.pi * (2 * np.arange(24) + 1) / 48.0)


def _eval_hidden(mcoef, z):
    return mcoef[..., 0] + z * (mcoef[..., 1] + z * (mcoef[..., 2] + z * mcoef[..., 3]))


_NODE_POWERS = (_FIT_NODES[:, None] ** np.arange(4)[None, :])  # (n_nodes, 4)
_U_NODES = _FIT_NODES / _Z_SCALE
_FIT_PINV = np.linalg.pinv(_U_NODES[:, None] ** np.arange(11)[None, :])  # (11, n_nodes)


def _det_polynomial(mcoef):
    """Degree-10 polynomial det M(z), coefficients highest first.

    The determinant is evaluated at Chebyshev nodes and the exact degree-10
    polynomial is recovered by a precomputed least-squares fit in the scaled
    variable u = z / Z_SCALE.
    """
    mats = np.einsum("rck,nk->nrc", mcoef, _NODE_POWERS)
    vals = np.linalg.det(mats)
    coeffs_lo = (_FIT_PINV @ vals) / _Z_SCALE ** np.arange(11)
    return coeffs_lo[::-1], np.abs(vals).max()


def _polish_root_on_det(z, mcoef, dp_coeffs, val_scale):
    val = np.linalg.det(_eval_hidden(mcoef, z))
    best_z, best_val = z, abs(val)
    for _ in range(8):
        if best_val <= 1e-14 * val_scale:
            break
        der, _ = _horner_pair(dp_coeffs, z)
        if der == 0.0 or not np.isfinite(der):
            break
        step = val / der
        if not np.isfinite(step) or abs(step) < 1e-14 * (1.0 + abs(z)):
            break
        z = z - step
        val = np.linalg.det(_eval_hidden(mcoef, z))
        if abs(val) < best_val:
            best_z, best_val = z, abs(val)
    return best_z


def _mono20_with_jac(x, y, z):
    """The 20 monomials of degree <= 3 at (x, y, z) and their 20x3 Jacobian."""
    vals = np.empty(20)
    jac = np.zeros((20, 3))
    for idx, (i, j, k) in enumerate(_MONO20):
        xi = x**i
        yj = y**j
        zk = z**k
        vals[idx] = xi * yj * zk
        if i:
            jac[idx, 0] = i * x ** (i - 1) * yj * zk
        if j:
            jac[idx, 1] = xi * j * y ** (j - 1) * zk
        if k:
            jac[idx, 2] = xi * yj * k * z ** (k - 1)
    return vals, jac


def _polish_xyz(eqs, x, y, z, iterations=6):
    """Gauss-Newton refinement of a root of the ten cubic constraints."""
    best = (x, y, z)
    best_res = np.inf
    for _ in range(iterations):
        vals, jac = _mono20_with_jac(x, y, z)
        r = eqs @ vals
        res = float(np.abs(r).max())
        if res < best_res:
            best, best_res = (x, y, z), res
        if res < 1e-15 * max(1.0, abs(x) + abs(y) + abs(z)) ** 3:
            break
        j = eqs @ jac
        try:
            step, *_ = np.linalg.lstsq(j, -r, rcond=None)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        x, y, z = x + step[0], y + step[1], z + step[2]
    return best


def essential_constraint_residuals(e):
    """(trace-constraint residual, |det|) of a 3x3 matrix."""
    e = np.asarray(e, dtype=float)
    gram = e @ e.T
    c = 2.0 * gram @ e - np.trace(gram) * e
    return float(np.abs(c).max()), float(abs(np.linalg.det(e)))


def _essential_candidates(basis, context, residual_tol=1e-6):
    eqs = _essential_equations(basis)
    mcoef = _hidden_variable_matrix(eqs)
    coeffs, val_scale = _det_polynomial(mcoef)
    if np.abs(coeffs).max() < 1e-10 or val_scale < 1e-12:
        raise DegenerateSampleError(f"{context}: solution set is not zero-dimensional")
    try:
        roots = poly_real_roots(coeffs)
    except InvalidPolynomialError as exc:
        raise DegenerateSampleError(f"{context}: singular hidden-variable system") from exc
    dp = [float(v) for v in np.polyder(coeffs)]
    models = []
    for z in roots:
        z = _polish_root_on_det(z, mcoef, dp, val_scale)
        mz = _eval_hidden(mcoef, z)
        _, _, vt = np.linalg.svd(mz)
        v = vt[-1]
        if abs(v[9]) < 1e-13 * np.abs(v).max():
            continue  # solution at infinity in (x, y)
        x, y, z = _polish_xyz(eqs, v[7] / v[9], v[8] / v[9], z)
        e_raw = x * basis[0].reshape(3, 3) + y * basis[1].reshape(3, 3) \
            + z * basis[2].reshape(3, 3) + basis[3].reshape(3, 3)
        try:
            e_raw = normalize_model_matrix(e_raw)
        except ValueError:
            continue
        trace_res, det_res = essential_constraint_residuals(e_raw)
        if trace_res > residual_tol or det_res > residual_tol:
            continue
        models.append(EssentialMatrix(project_to_essential(e_raw)))
    # drop duplicate models (identical after normalization)
    unique = []
    for m in models:
        if all(np.abs(m.m - u.m).max() > 1e-9 for u in unique):
            unique.append(m)
    return unique


def _as_k(k):
    return k if isinstance(k, CameraIntrinsics) else CameraIntrinsics(k)


def normalized_affinity(a, k1, k2):
    """Affinity expressed in normalized camera coordinates."""
    b1 = _as_k(k1).linear
    b2 = _as_k(k2).linear
    return np.linalg.solve(b2, np.asarray(a, dtype=float) @ b1)


def solve_e_5pc(sample: MinimalSample, k1, k2):
    """Five-point relative pose; returns up to ten essential matrices."""
    k1, k2 = _as_k(k1), _as_k(k2)
    ys, zs = sample.all_points()
    yn = k1.normalize(ys)
    zn = k2.normalize(zs)
    rows = np.array([_point_row_f(y, z) for y, z in zip(yn, zn)])
    basis = _null_vectors(rows, 4, "e_5pc")
    return _essential_candidates(basis, "e_5pc")


def solve_e_2ac(sample: MinimalSample, k1, k2, drop_row=5):
    """Essential matrix from two ACs: five of their six linear constraints.

    ``drop_row`` selects which of the six stacked rows (point, affine x2
    per correspondence) is discarded; the default drops the second affine
    row of the second correspondence.
    """
    k1, k2 = _as_k(k1), _as_k(k2)
    rows = []
    for ac in sample.acs:
        yn = k1.normalize(ac.y0)
        zn = k2.normalize(ac.z0)
        rows.append(epipolar_rows_from_parts(yn, zn, normalized_affinity(ac.a, k1, k2)))
    rows = np.vstack(rows)
    if not 0 <= drop_row < 6:
        raise ValueError("drop_row must be in [0, 6)")
    kept = np.delete(rows, drop_row, axis=0)
    basis = _null_vectors(kept, 4, "e_2ac")
    return _essential_candidates(basis, "e_2ac")


# ---------------------------------------------------------------------------
# Dispatch and non-minimal (least-squares) fits used by local optimization

def solve_minimal(sample: MinimalSample, k1=None, k2=None):
    """Run the solver matching the sample kind; returns a list of models."""
    if sample.kind == "h_4pc":
        return solve_h_4pc(sample)
    if sample.kind == "h_1ac1pc":
        return solve_h_1ac1pc(sample)
    if sample.kind == "h_2ac":
        return solve_h_2ac(sample)
    if sample.kind == "f_7pc":
        return solve_f_7pc(sample)
    if sample.kind == "f_2ac1pc":
        return solve_f_2ac1pc(sample)
    if k1 is None or k2 is None:
        raise ValueError("essential-matrix solvers need both calibrations")
    if sample.kind == "e_5pc":
        return solve_e_5pc(sample, k1, k2)
    return solve_e_2ac(sample, k1, k2)


def fit_h_dlt(ys, zs):
    """Least-squares DLT homography from n >= 4 point pairs."""
    ys = np.asarray(ys, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if len(ys) < 4:
        raise DegenerateSampleError("homography fit needs at least 4 points")
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    rows = np.vstack([_dlt_point_rows(y, z) for y, z in zip(yn, zn)])
    h_n = _null_vectors(rows, 1, "fit_h_dlt")[0].reshape(3, 3)
    return Homography.from_matrix(np.linalg.inv(t2) @ h_n @ t1)


def fit_f_linear(ys, zs):
    """Eight-point style least-squares F with rank-2 projection (n >= 8)."""
    ys = np.asarray(ys, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if len(ys) < 8:
        raise DegenerateSampleError("linear F fit needs at least 8 points")
    yn, t1 = hartley_normalization(ys)
    zn, t2 = hartley_normalization(zs)
    rows = np.array([_point_row_f(y, z) for y, z in zip(yn, zn)])
    f_n = _null_vectors(rows, 1, "fit_f_linear")[0].reshape(3, 3)
    u, s, vt = np.linalg.svd(f_n)
    s[2] = 0.0
    return FundamentalMatrix.from_matrix(t2.T @ (u @ np.diag(s) @ vt) @ t1)


def fit_e_linear(ys, zs, k1, k2):
    """Least-squares essential matrix with manifold projection (n >= 8)."""
    ys = np.asarray(ys, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if len(ys) < 8:
        raise DegenerateSampleError("linear E fit needs at least 8 points")
    yn = _as_k(k1).normalize(ys)
    zn = _as_k(k2).normalize(zs)
    rows = np.array([_point_row_f(y, z) for y, z in zip(yn, zn)])
    e_lin = _null_vectors(rows, 1, "fit_e_linear")[0].reshape(3, 3)
    return EssentialMatrix(project_to_essential(e_lin))
