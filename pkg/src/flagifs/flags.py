"""Flags on R^d and the triangular form of linear maps acting on them.

A complete flag F_1 < F_2 < ... < F_d is stored as an orthonormal frame
whose first i columns span F_i.  Columns are only defined up to sign, so
each column is normalised so that its largest-magnitude entry (lowest
index on ties) is positive.

For an invertible L the image flag has raw frame Q and

    L @ frame(F) = Q @ R,   R upper triangular with positive diagonal,

which is the QR factorisation with a sign fix.  ``R`` is the triangular
matrix M(L, F) of L with respect to the two frames.  The canonical image
frame differs from Q by a diagonal sign matrix S (canonical = Q S).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ComplexPair, DimensionMismatch, ModuliCollision, SingularMatrix

DET_TOL = 1e-12
ORTHO_TOL = 1e-12
MODULI_GAP = 1e-6


SMALL_DIM = 4


def _householder_small(a):
    """Householder QR of one small square matrix in plain Python floats.

    numpy's per-call overhead dominates for d <= 4, and orbit loops make
    millions of such calls.  Returns (Q, R) as nested lists with the
    diagonal of R made non-negative.
    """
    d = len(a)
    if d == 2:
        return _householder_2x2(a)
    R = [list(row) for row in a]
    Q = [[1.0 if i == j else 0.0 for j in range(d)] for i in range(d)]
    for k in range(d - 1):
        x = [R[i][k] for i in range(k, d)]
        alpha = math.hypot(*x)
        if alpha == 0.0:
            continue
        v = x
        v[0] += math.copysign(alpha, v[0])
        vv = 0.0
        for t in v:
            vv += t * t
        m = d - k
        for j in range(k, d):
            f = 0.0
            for i in range(m):
                f += v[i] * R[k + i][j]
            f = 2.0 * f / vv
            for i in range(m):
                R[k + i][j] -= f * v[i]
        for row in Q:
            f = 0.0
            for i in range(m):
                f += row[k + i] * v[i]
            f = 2.0 * f / vv
            for i in range(m):
                row[k + i] -= f * v[i]
        for i in range(k + 1, d):
            R[i][k] = 0.0
    for k in range(d):
        if R[k][k] < 0:
            R[k] = [-t for t in R[k]]
            for row in Q:
                row[k] = -row[k]
    return Q, R


def _householder_2x2(a):
    # the same reflection as the general loop, written out for d = 2
    (a00, a01), (a10, a11) = a
    alpha = math.hypot(a00, a10)
    if alpha == 0.0:
        q00, q01, q10, q11 = 1.0, 0.0, 0.0, 1.0
        r00, r01, r11 = a00, a01, a11
    else:
        v0 = a00 + math.copysign(alpha, a00)
        v1 = a10
        vv = v0 * v0 + v1 * v1
        q00 = 1.0 - 2.0 * v0 * v0 / vv
        q01 = -2.0 * v0 * v1 / vv
        q11 = 1.0 - 2.0 * v1 * v1 / vv
        q10 = q01
        r00 = -math.copysign(alpha, a00)
        r01 = q00 * a01 + q01 * a11
        r11 = q10 * a01 + q11 * a11
    if r00 < 0:
        r00, r01 = -r00, -r01
        q00, q10 = -q00, -q10
    if r11 < 0:
        r11 = -r11
        q01, q11 = -q01, -q11
    return [[q00, q01], [q10, q11]], [[r00, r01], [0.0, r11]]


def qr_positive(a):
    """Householder QR with the diagonal of R made positive.

    A single matrix of size <= 4 goes through a plain-Python Householder
    routine; larger matrices and stacks of shape (..., d, d) use LAPACK.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[0] == a.shape[1] <= SMALL_DIM:
        q, r = _householder_small(a.tolist())
        return np.array(q), np.array(r)
    q, r = np.linalg.qr(a)
    s = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    s = np.where(s == 0, 1.0, s)
    q = q * s[..., None, :]
    r = r * s[..., :, None]
    return q, r


def canonical_signs(frame):
    """Column signs that make each column's dominant entry positive."""
    if frame.ndim == 2 and frame.shape[0] <= SMALL_DIM:
        out = []
        for col in frame.T.tolist():
            best = col[0]
            for v in col[1:]:
                if abs(v) > abs(best):
                    best = v
            out.append(-1.0 if best < 0 else 1.0)
        return np.array(out)
    idx = np.argmax(np.abs(frame), axis=-2)
    dom = np.take_along_axis(frame, idx[..., None, :], axis=-2)[..., 0, :]
    return np.where(dom < 0, -1.0, 1.0)


def canonicalize(frame):
    # adding 0.0 turns -0.0 into +0.0 so serialised frames are tidy
    return frame * canonical_signs(frame)[..., None, :] + 0.0


class Flag:
    """Complete flag in R^d, held as a canonical orthonormal frame."""

    __slots__ = ("_frame",)

    def __init__(self, frame):
        a = np.array(frame, dtype=float)
        if a.ndim == 1 and a.size == 1:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatch(f"flag frame must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("flag frame has non-finite entries")
        d = a.shape[0]
        if np.max(np.abs(a.T @ a - np.eye(d))) > ORTHO_TOL:
            q, r = qr_positive(a)
            if np.min(np.abs(np.diag(r))) <= DET_TOL:
                raise SingularMatrix("frame columns are linearly dependent")
            a = q
        a = canonicalize(a)
        a.setflags(write=False)
        self._frame = a

    @classmethod
    def _trusted(cls, frame):
        # frame is already orthonormal and canonical
        obj = cls.__new__(cls)
        a = np.array(frame, dtype=float)
        a.setflags(write=False)
        obj._frame = a
        return obj

    @classmethod
    def canonical(cls, d):
        return cls._trusted(np.eye(d))

    @classmethod
    def random(cls, d, rng):
        """Haar-distributed flag drawn with the numpy Generator ``rng``."""
        q, _ = qr_positive(rng.standard_normal((d, d)))
        return cls._trusted(canonicalize(q))

    @classmethod
    def from_angle(cls, phi):
        """Flag in R^2 whose line is spanned by (cos phi, sin phi)."""
        c, s = np.cos(phi), np.sin(phi)
        return cls(np.array([[c, -s], [s, c]]))

    @property
    def frame(self):
        return self._frame

    @property
    def dim(self):
        return self._frame.shape[0]

    def subspace(self, i):
        """Orthonormal basis of F_i."""
        return self._frame[:, :i]

    def tolist(self):
        return self._frame.tolist()

    def __eq__(self, other):
        return isinstance(other, Flag) and np.array_equal(self._frame, other._frame)

    def __hash__(self):
        return hash(self._frame.tobytes())

    def __repr__(self):
        return f"Flag({np.array2string(self._frame, precision=6)})"


def _check_matrix(L, d):
    L = np.asarray(L, dtype=float)
    if L.shape != (d, d):
        raise DimensionMismatch(f"matrix shape {L.shape} does not match flag dimension {d}")
    return L


def qr_raw(L, frame):
    """(Q, R, S): raw image frame, triangular matrix and canonical signs."""
    q, r = qr_positive(L @ frame)
    if not np.prod(np.diag(r)) > DET_TOL:
        raise SingularMatrix(f"|det L| = {np.prod(np.diag(r)):.3e} is below {DET_TOL}")
    return q, r, canonical_signs(q)


def qr_of(L, F: Flag):
    """Image flag (canonical) and the triangular matrix M(L, F).

    ``L @ F.frame == Q @ R`` where Q is the raw positive-QR frame; the
    returned flag is Q with column signs canonicalised.
    """
    L = _check_matrix(L, F.dim)
    q, r, s = qr_raw(L, F.frame)
    return Flag._trusted(q * s), r


def flag_map(L, F: Flag) -> Flag:
    return qr_of(L, F)[0]


def so_frame_index(d):
    """Canonical order of the basis X_ij (i > j) of so(d), 0-based pairs.

    Pairs with i - j = d - 1 come first, then d - 2, and so on; inside a
    group j increases.
    """
    return [(j + g, j) for g in range(d - 1, 0, -1) for j in range(d - g)]


def pair_label(pair):
    i, j = pair
    return f"X{i + 1}{j + 1}"


def _pair_arrays(d):
    pairs = so_frame_index(d)
    return np.array([p[0] for p in pairs], dtype=int), np.array([p[1] for p in pairs], dtype=int)


def derivative_from_triangular(r):
    """T(L, F) from R = M(L, F), in the canonical so(d) order.

    The image of the basis element X_kl = E_kl - E_lk is the antisymmetric
    matrix whose under-diagonal part is that of R X_kl R^-1; its
    coefficient on X_ij is R[i,k] R^-1[l,j] - R[i,l] R^-1[k,j].

    Rows are indexed by the source element X_kl and columns by the image
    coefficient X_ij (row-vector convention).  With the canonical order
    this makes T upper triangular; the column convention gives the
    transpose, which is lower triangular.  Composition therefore reads
    T(L2 L1, F) = T(L1, F) @ T(L2, F1) up to sign conjugation.
    """
    d = r.shape[0]
    ii, jj = _pair_arrays(d)
    s = np.triu(np.linalg.inv(r))
    col = r[np.ix_(ii, ii)] * s[np.ix_(jj, jj)].T - r[np.ix_(ii, jj)] * s[np.ix_(ii, jj)].T
    return col.T


def derivative_matrix(L, F: Flag):
    """Derivative of the flag map at F in the canonical so(d) frames.

    The source tangent space uses frame(F) and the target uses the raw
    positive-QR image frame, so the diagonal entry at (i, j) is
    R_ii / R_jj > 0.  Switching the target to the canonical image frame
    multiplies the (i, j) coefficient by s_i s_j.  See
    :func:`derivative_from_triangular` for the row/column convention.
    """
    _, r = qr_of(L, F)
    return derivative_from_triangular(r)


def pair_signs(s):
    """Diagonal of the sign conjugation s_i s_j in so(d) order."""
    ii, jj = _pair_arrays(len(s))
    return s[ii] * s[jj]


def stable_flag(L) -> Flag:
    """Flag of eigenvector spans ordered by decreasing eigenvalue modulus."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {L.shape}")
    vals, vecs = np.linalg.eig(L)
    if np.iscomplexobj(vals) and np.any(vals.imag != 0):
        raise ComplexPair(f"eigenvalues {vals} include a complex-conjugate pair")
    vals = np.real(vals)
    vecs = np.real(vecs)
    order = np.argsort(-np.abs(vals), kind="stable")
    mods = np.abs(vals[order])
    for a, b in zip(mods[:-1], mods[1:]):
        if a == 0 or (a - b) / a < MODULI_GAP:
            raise ModuliCollision(f"eigenvalue moduli {a:.6g} and {b:.6g} are not separated")
    q, r = qr_positive(vecs[:, order])
    if np.min(np.abs(np.diag(r))) <= DET_TOL:
        raise ModuliCollision("eigenvectors are numerically dependent")
    return Flag._trusted(canonicalize(q))


def qr_eigen_iterate(A, iters):
    """Diagonal of A_n after n unshifted QR steps A_{k+1} = R_k Q_k."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    q, r = qr_positive(A)
    if not np.prod(np.abs(np.diag(r))) > DET_TOL:
        raise SingularMatrix("matrix is singular")
    for _ in range(int(iters)):
        q, r = qr_positive(A)
        A = r @ q
    return [float(v) for v in np.diag(A)]


def principal_angle(U, V):
    """Largest principal angle between the spans of orthonormal U and V.

    Computed from the sine (residual of V after projecting on U), which
    stays accurate for tiny angles where arccos does not.
    """
    resid = V - U @ (U.T @ V)
    return float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))
