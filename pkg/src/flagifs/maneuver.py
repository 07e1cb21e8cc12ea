"""Maneuverability certificates, prescribed-diagonal words and zero-exponent orbits."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotManeuverable, WitnessMiss
from .flags import Flag, canonicalize, qr_positive
from .ifs import LINEAR, flag_distance, word_str

MARGIN = 0.05


def sign_vectors(d):
    """All t in {+1,-1}^d, in lexicographic order with +1 first."""
    return np.array(list(itertools.product([1.0, -1.0], repeat=d)))


def sign_index(t):
    """Index of a sign vector in :func:`sign_vectors` order."""
    idx = 0
    for v in t:
        idx = 2 * idx + (0 if v > 0 else 1)
    return idx


@dataclass
class ManeuverMesh:
    """Product sample set: base points times flags.

    ``base_res`` is the grid resolution per torus axis (None in linear
    mode, where the base is a single point).  ``angle_res`` is set when the
    flags are the d = 2 angle grid k*pi/angle_res, which allows O(1)
    lookup; otherwise lookup is a nearest-neighbour search.
    """

    bases: np.ndarray
    flags: np.ndarray
    base_res: int | None = None
    angle_res: int | None = None
    flag_seed: int | None = None

    @property
    def size(self):
        return len(self.bases) * len(self.flags)

    def cell(self, ib, jf):
        return ib * len(self.flags) + jf

    def split(self, cell):
        return divmod(cell, len(self.flags))

    def locate(self, x, frame):
        if self.base_res is None:
            ib = 0
        else:
            idx = np.mod(np.rint(np.asarray(x) * self.base_res).astype(int), self.base_res)
            ib = int(np.ravel_multi_index(tuple(idx), (self.base_res,) * len(idx)))
        if len(self.flags) == 1:
            jf = 0
        elif self.angle_res is not None:
            phi = math.atan2(frame[1, 0], frame[0, 0]) % math.pi
            jf = int(round(phi / (math.pi / self.angle_res))) % self.angle_res
        else:
            jf = int(np.argmin(flag_distance(self.flags, frame)))
        return self.cell(ib, jf)

    def spec(self):
        return {
            "base_points": len(self.bases),
            "base_res": self.base_res,
            "flag_points": len(self.flags),
            "angle_res": self.angle_res,
            "flag_seed": self.flag_seed,
        }


def default_mesh(ifs, flag_points=None, base_res=None, seed=0):
    """Deterministic mesh: angle grid for d = 2, seeded Haar flags for d >= 3."""
    d = ifs.dim
    if ifs.mode == LINEAR:
        bases = np.zeros((1, 0))
        base_res = None
        flag_points = flag_points or {1: 1, 2: 1024}.get(d, 2048)
    else:
        base_res = base_res or {1: 256, 2: 32, 3: 8}[d]
        axes = [np.arange(base_res) / base_res] * d
        bases = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        flag_points = flag_points or {1: 1, 2: 64}.get(d, 256)
    angle_res = None
    flag_seed = None
    if d == 1:
        flags = np.ones((1, 1, 1))
    elif d == 2:
        angle_res = flag_points
        phi = np.arange(flag_points) * math.pi / flag_points
        c, s = np.cos(phi), np.sin(phi)
        flags = canonicalize(np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -1))
    else:
        flag_seed = seed
        rng = np.random.default_rng(seed)
        q, _ = qr_positive(rng.standard_normal((flag_points, d, d)))
        flags = canonicalize(q)
    return ManeuverMesh(bases, flags, base_res, angle_res, flag_seed)


def mesh_logdiag(ifs, mesh):
    """log M_ii for every generator and cell: shape (ell, cells, d)."""
    out = []
    for g in ifs.generators:
        J = g.jacobian(mesh.bases)
        A = J[:, None] @ mesh.flags[None]
        _, r = qr_positive(A)
        out.append(np.log(np.diagonal(r, axis1=-2, axis2=-1)).reshape(-1, ifs.dim))
    return np.stack(out)


@dataclass
class ManeuverCertificate:
    """Mesh evidence of maneuverability.

    ``witnesses[cell, k]`` is a generator whose log-diagonal realises the
    sign vector ``sign_vectors(d)[k]`` with margin at least ``c_raw`` at
    the cell's sample point.  The usable margin ``c`` is ``c_raw`` reduced
    by ``MARGIN`` to absorb the gaps between mesh points.
    """

    c: float
    c_raw: float
    C: float
    mesh_size: int
    witnesses: np.ndarray
    mesh: ManeuverMesh
    ell: int

    def witness(self, cell, t):
        return int(self.witnesses[cell, sign_index(t)])

    def to_dict(self):
        return {
            "c": self.c,
            "c_raw": self.c_raw,
            "C": self.C,
            "margin": MARGIN,
            "mesh_size": self.mesh_size,
            "mesh": self.mesh.spec(),
            "sign_vectors": sign_vectors(self.mesh.flags.shape[-1]).astype(int).tolist(),
            "witnesses": self.witnesses.tolist(),
        }


def certify_maneuverability(ifs, mesh=None):
    """c = min over cells and signs t of max over generators of min_i t_i log M_ii."""
    mesh = mesh or default_mesh(ifs)
    L = mesh_logdiag(ifs, mesh)  # (ell, cells, d)
    T = sign_vectors(ifs.dim)
    # V[t, s, cell] = min_i t_i L[s, cell, i]
    V = np.min(T[:, None, None, :] * L[None], axis=-1)
    best = np.argmax(V, axis=1)  # first maximiser: lowest generator index
    score = np.max(V, axis=1)  # (2^d, cells)
    k, cell = np.unravel_index(np.argmin(score), score.shape)
    c_raw = float(score[k, cell])
    if not c_raw > 0:
        ib, jf = mesh.split(int(cell))
        raise NotManeuverable(
            f"no generator realises signs {T[k].astype(int).tolist()} at base "
            f"{mesh.bases[ib].tolist()} flag {mesh.flags[jf].round(6).tolist()} "
            f"(best margin {c_raw:.4g})",
            cell=int(cell),
            signs=tuple(int(v) for v in T[k]),
        )
    return ManeuverCertificate(
        c=c_raw * (1 - MARGIN), c_raw=c_raw, C=ifs.C, mesh_size=mesh.size,
        witnesses=best.T.copy(), mesh=mesh, ell=ifs.ell,
    )


def _pick(ifs, cert, x, frame, t, need, offset=0, members=None):
    """Generator realising sign vector t with t_i * lambda_i >= need_i.

    Tries the cached witness first and falls back to a search over
    ``members`` (default: all generators).  Returns (symbol, step data).
    """
    s = cert.witness(cert.mesh.locate(x, frame), t) + offset
    step = ifs.step(s, x, frame)
    lam = np.log(np.diag(step[2]))
    if np.all(t * lam >= need):
        return s, step, lam, False
    members = range(ifs.ell) if members is None else members
    best = None
    for s2 in members:
        st = ifs.step(s2, x, frame)
        l2 = np.log(np.diag(st[2]))
        if np.all(t * l2 >= need):
            m = float(np.min(t * l2))
            if best is None or m > best[0]:
                best = (m, s2, st, l2)
    if best is None:
        raise WitnessMiss(
            f"no generator realises signs {t.astype(int).tolist()} with margin {np.max(need):.4g} "
            f"at base {np.asarray(x).tolist()}"
        )
    return best[1], best[2], best[3], True


@dataclass
class PrescribeTrace:
    """Greedy word with prescribed average log-diagonal chi.

    ``deviations[n]`` is delta^(n) = n chi - sum_{j<n} lambda^(j) for
    n = 0..q, and ``logdiag[j]`` is lambda^(j).
    """

    word: tuple
    deviations: np.ndarray
    logdiag: np.ndarray
    q: int
    eta: float
    chi: np.ndarray
    end: tuple
    misses: int = 0

    @property
    def average(self):
        return self.logdiag.mean(axis=0)

    def rows(self):
        run = np.cumsum(self.logdiag, axis=0)
        for n, s in enumerate(self.word):
            yield [n, s, *self.logdiag[n].tolist(), *run[n].tolist()]

    def summary(self):
        return {
            "word": word_str(self.word),
            "q": self.q,
            "eta": self.eta,
            "chi": self.chi.tolist(),
            "average": self.average.tolist(),
            "max_abs_deviation": float(np.max(np.abs(self.deviations))),
            "witness_misses": self.misses,
        }


def prescribe_word(ifs, cert, start, chi, eta):
    """Word of length q = ceil(C / eta) whose average log-diagonal is within C/q of chi.

    At step n the sign vector is t = sign(delta^(n) + chi) (sign 0 = +1)
    and the generator must satisfy t_i lambda_i >= |chi_i|.  Then
    |delta^(n)| <= C for every prefix, by induction.
    """
    chi = np.asarray(chi, dtype=float).reshape(-1)
    if chi.shape != (ifs.dim,):
        raise ValueError(f"chi must have length {ifs.dim}")
    if np.any(np.abs(chi) > cert.c + 1e-12):
        raise ValueError(f"|chi_i| must not exceed c = {cert.c:.6g}")
    if not eta > 0:
        raise ValueError("eta must be positive")
    C = cert.C
    q = int(math.ceil(C / eta))
    x, frame = np.asarray(start[0], dtype=float), start[1].frame
    need = np.abs(chi)
    word = []
    lams = np.empty((q, ifs.dim))
    devs = np.zeros((q + 1, ifs.dim))
    delta = np.zeros(ifs.dim)
    misses = 0
    for n in range(q):
        t = np.where(delta + chi >= 0, 1.0, -1.0)
        s, (x, frame, _, _), lam, missed = _pick(ifs, cert, x, frame, t, need)
        misses += missed
        word.append(s)
        lams[n] = lam
        delta = delta + chi - lam
        devs[n + 1] = delta
    return PrescribeTrace(tuple(word), devs, lams, q, float(eta), chi, (x, Flag._trusted(frame)), misses)


@dataclass
class ZeroOrbit:
    symbols: tuple
    theta: tuple
    logdiag: np.ndarray
    running: np.ndarray
    end: tuple
    misses: int = 0

    @property
    def max_running(self):
        return float(np.max(np.abs(self.running))) if len(self.running) else 0.0

    def furstenberg(self):
        return self.running[-1] / len(self.symbols)

    def rows(self):
        for n, s in enumerate(self.symbols):
            yield [n, s, self.theta[n], *self.logdiag[n].tolist(), *self.running[n].tolist()]

    def summary(self, C):
        lam = self.furstenberg()
        return {
            "length": len(self.symbols),
            "max_abs_running_sum": self.max_running,
            "bound_2C": 2 * C,
            "furstenberg": lam.tolist(),
            "furstenberg_norm": float(np.linalg.norm(lam)),
            "witness_misses": self.misses,
        }


def zero_exponent_orbit(ifs, certs, theta, start):
    """Orbit whose running log-diagonal sums stay within 2C of zero.

    Symbol n comes from the first half of the generators when theta_n = 0
    and from the second half otherwise.  Each coordinate steps against
    its running sum: negative if the sum is positive, positive otherwise.
    ``certs`` certify the two halves (local symbol numbering).
    """
    if ifs.ell % 2:
        raise ValueError(f"bi-maneuverability needs an even number of generators, got {ifs.ell}")
    h = ifs.ell // 2
    theta = tuple(int(b) for b in theta)
    if any(b not in (0, 1) for b in theta):
        raise ValueError("theta must be binary")
    x, frame = np.asarray(start[0], dtype=float), start[1].frame
    d = ifs.dim
    n = len(theta)
    lams = np.empty((n, d))
    run = np.empty((n, d))
    S = np.zeros(d)
    syms = []
    misses = 0
    zero = np.zeros(d)
    for k, b in enumerate(theta):
        t = np.where(S > 0, -1.0, 1.0)
        s, (x, frame, _, _), lam, missed = _pick(
            ifs, certs[b], x, frame, t, zero + 1e-300, offset=b * h, members=range(b * h, (b + 1) * h)
        )
        misses += missed
        syms.append(s)
        lams[k] = lam
        S = S + lam
        run[k] = S
    return ZeroOrbit(tuple(syms), theta, lams, run, (x, Flag._trusted(frame)), misses)


def theta_coding(symbols, ell):
    """theta_n = 0 iff symbol_n < ell / 2."""
    return (np.asarray(symbols) >= ell / 2).astype(np.int64)


@dataclass
class CoverageReport:
    k: int
    covered: int
    total: int
    missing: list

    @property
    def complete(self):
        return self.covered == self.total

    def to_dict(self):
        return {"k": self.k, "covered": self.covered, "total": self.total,
                "complete": self.complete, "missing": self.missing[:16]}


def entropy_block_coverage(orbits, k, ell):
    """Which binary k-blocks occur in the theta-codings of the given symbol sequences."""
    if not 1 <= k <= 12:
        raise ValueError("block length must be between 1 and 12")
    seen = np.zeros(2 ** k, dtype=bool)
    weights = 2 ** np.arange(k - 1, -1, -1)
    for syms in orbits:
        code = theta_coding(syms, ell)
        if len(code) < k:
            continue
        win = np.lib.stride_tricks.sliding_window_view(code, k)
        seen[win @ weights] = True
    missing = [format(i, f"0{k}b") for i in np.flatnonzero(~seen)]
    return CoverageReport(k, int(seen.sum()), 2 ** k, missing)


def de_bruijn_binary(k):
    """Binary de Bruijn sequence of order k (cyclic, length 2^k)."""
    a = [0] * (2 * k)
    seq = []

    def db(t, p):
        if t > k:
            if k % p == 0:
                seq.extend(a[1:p + 1])
        else:
            a[t] = a[t - p]
            db(t + 1, p)
            for j in range(a[t - p] + 1, 2):
                a[t] = j
                db(t + 1, t)

    db(1, 1)
    return seq
