"""Lyapunov and Furstenberg exponents along skew-product orbits."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExhaustedFuture, ModuliCollision, NoFixedPoint, NotInCone
from .flags import (
    MODULI_GAP,
    Flag,
    derivative_from_triangular,
    pair_signs,
    so_frame_index,
    stable_flag,
)
from .ifs import LINEAR, SkewPoint, check_word, derivative_along, flag_distance, verification_mesh, word_str


@dataclass(frozen=True)
class FurstenbergVector:
    values: tuple
    sample_count: int

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("Furstenberg vector has non-finite entries")

    def __len__(self):
        return len(self.values)

    def as_array(self):
        return np.array(self.values)


@dataclass(frozen=True)
class LyapunovVector:
    values: tuple

    def __post_init__(self):
        v = self.values
        if any(a < b for a, b in zip(v[:-1], v[1:])):
            raise ValueError(f"Lyapunov vector must be non-increasing, got {v}")

    def as_array(self):
        return np.array(self.values)


def in_cone(lam):
    """0 > lam_1 > lam_2 > ... > lam_d."""
    lam = list(lam)
    return lam[0] < 0 and all(a > b for a, b in zip(lam[:-1], lam[1:]))


def least_gap(lam):
    """gamma = min(-lam_1, lam_1 - lam_2, ..., lam_{d-1} - lam_d)."""
    lam = list(lam)
    return min([-lam[0]] + [a - b for a, b in zip(lam[:-1], lam[1:])])


def _take_symbols(start, symbols, n):
    if symbols is None:
        if len(start.future) < n:
            raise ExhaustedFuture(f"need {n} future symbols, start has {len(start.future)}")
        return start.future[:n], start.future[n:]
    seq = tuple(int(s) for s in itertools.islice(iter(symbols), n))
    if len(seq) < n:
        raise ExhaustedFuture(f"symbol source supplied {len(seq)} of {n} symbols")
    return seq, ()


def furstenberg_estimate(ifs, symbols, start: SkewPoint, n, running=False):
    """Birkhoff average of the one-step log-diagonal log M_jj.

    ``symbols`` is any iterable of symbols, or None to consume
    ``start.future``.  Returns (FurstenbergVector, final SkewPoint) and,
    with ``running=True``, also the (n, d) array of running averages.
    The final point's future is whatever is left of ``start.future``
    (empty when an external source was used).
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    seq, rest = _take_symbols(start, symbols, n)
    for s in seq:
        if not 0 <= s < ifs.ell:
            raise ValueError(f"symbol {s} outside alphabet")
    x = start.base
    frame = start.flag.frame
    acc = np.zeros(start.flag.dim)
    run = np.empty((n, start.flag.dim)) if running else None
    for t, s in enumerate(seq):
        x, frame, r, _ = ifs.step(s, x, frame)
        acc += np.log(np.diag(r))
        if running:
            run[t] = acc / (t + 1)
    fv = FurstenbergVector(tuple(float(v) for v in acc / n), n)
    end = SkewPoint(start.past + seq, rest, x, Flag._trusted(frame))
    if running:
        return fv, end, run
    return fv, end


def flag_cocycle_exponents(lam):
    """Lambda_i - Lambda_j for i > j, in canonical so(d) order."""
    v = list(lam.values if hasattr(lam, "values") else lam)
    return [v[i] - v[j] for i, j in so_frame_index(len(v))]


def flag_cocycle_growth(ifs, symbols, start: SkewPoint, n, seed=0):
    """Top growth rate of products of FlagDerivative matrices along an orbit.

    Power iteration with a seeded random row vector; the coefficients are
    re-expressed in the canonical image frame after every step.
    """
    seq, _ = _take_symbols(start, symbols, int(n))
    d = start.flag.dim
    D = d * (d - 1) // 2
    if D == 0:
        return float("-inf")
    v = np.random.default_rng(seed).standard_normal(D)
    v /= np.linalg.norm(v)
    x, frame = start.base, start.flag.frame
    total = 0.0
    for s in seq:
        x, frame, r, sg = ifs.step(s, x, frame)
        v = (v @ derivative_from_triangular(r)) * pair_signs(sg)
        nv = np.linalg.norm(v)
        total += math.log(nv)
        v /= nv
    return total / len(seq)


def triangular_exponents(Rs):
    """Average log |diagonal| over a sequence of triangular matrices."""
    Rs = [np.asarray(R, dtype=float) for R in Rs]
    if not Rs:
        raise ValueError("need at least one matrix")
    d = Rs[0].shape[0]
    if any(R.shape != (d, d) for R in Rs):
        raise ValueError("matrices must share a dimension")
    acc = np.zeros(d)
    for R in Rs:
        acc += np.log(np.abs(np.diag(R)))
    return [float(v) for v in acc / len(Rs)]


def _log_max_binom(n, k):
    # log of max_{0 <= j <= k} binom(n, j)
    best = 0.0
    for j in range(0, min(k, n) + 1):
        best = max(best, math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1))
    return best


def offdiag_bound_N(d, C, lam, eta):
    """Smallest N with d^2 C^(2(d-1)) binom(n, <=d-1) e^(lam n) <= e^((lam+eta) n) for all n >= N.

    The inequality reduces to f(n) = log(d^2 C^(2(d-1))) + log maxbinom(n) - eta n <= 0.
    f is decreasing once (d-1)/(n-d+2) < eta, so scanning stops at the first
    non-positive value past that point.
    """
    if not C > 1:
        raise ValueError("C must exceed 1")
    if not eta > 0:
        raise ValueError("eta must be positive")
    k = d - 1
    const = 2 * math.log(d) + 2 * k * math.log(C)

    def f(n):
        return const + _log_max_binom(n, k) - eta * n

    n_dec = max(2 * k, int(math.ceil(k / eta)) + k)
    last_bad = 0
    n = 1
    while True:
        if f(n) > 0:
            last_bad = n
        elif n >= n_dec:
            return last_bad + 1
        n += 1


@dataclass
class PeriodicOrbitRecord:
    """Periodic point of the flag skew product and its exponents.

    ``log_rho_base`` and ``log_rho_flag`` are the logs of the spectral radii
    of Dg_[w](x0) and of the flag derivative at (x0, F0); both must be
    negative for the point to attract in the flag bundle.  In linear mode
    the base is a single point and ``log_rho_base`` is None.
    """

    word: tuple
    base: np.ndarray
    flag: Flag
    lam: LyapunovVector
    gamma: float
    log_rho_base: float
    log_rho_flag: float
    residual: float
    logdiag: np.ndarray = field(repr=False, default=None)

    @property
    def period(self):
        return len(self.word)

    @property
    def attracting(self):
        base_ok = self.log_rho_base is None or self.log_rho_base < 0
        return base_ok and (self.log_rho_flag is None or self.log_rho_flag < 0)

    @property
    def norm(self):
        return float(np.linalg.norm(self.lam.values))

    def in_cone(self):
        return in_cone(self.lam.values)

    def to_dict(self, full_word=True):
        out = {
            "period": self.period,
            "lambda": list(self.lam.values),
            "gamma": self.gamma,
            "base": self.base.tolist(),
            "flag": self.flag.tolist(),
            "log_spectral_radius_base": self.log_rho_base,
            "log_spectral_radius_flag": self.log_rho_flag,
            "attracting": self.attracting,
            "in_cone": self.in_cone(),
            "residual": self.residual,
        }
        if full_word:
            out["word"] = word_str(self.word)
        return out


def _wrap(v):
    return v - np.round(v)


def _word_map_batch(ifs, w, X):
    """Images and Jacobians of g_[w] at the stacked points X."""
    d = ifs.dim
    J = np.broadcast_to(np.eye(d), X.shape[:-1] + (d, d)).copy()
    Y = X
    for s in w:
        g = ifs.generators[s]
        J = g.jacobian(Y) @ J
        Y = g.apply(Y)
    return Y, J


def _newton_fixed_points(ifs, w, seeds, iters=60):
    """Damped Newton on g_[w](x) - x from every seed at once."""
    X = np.array(seeds, dtype=float)
    d = ifs.dim
    eye = np.eye(d)
    Y, J = _word_map_batch(ifs, w, X)
    res = _wrap(Y - X)
    rn = np.max(np.abs(res), axis=-1)
    for _ in range(iters):
        active = rn >= 1e-14
        if not np.any(active):
            break
        A = J[active] - eye
        ok = np.abs(np.linalg.det(A)) > 1e-14
        step = np.zeros_like(X[active])
        if np.any(ok):
            step[ok] = -np.linalg.solve(A[ok], res[active][ok][..., None])[..., 0]
        t = np.ones(step.shape[0])
        Xa = X[active]
        rna = rn[active]
        newX = Xa.copy()
        newr = rna.copy()
        newres = res[active].copy()
        newJ = J[active].copy()
        pending = np.ones(step.shape[0], dtype=bool)
        for _ in range(30):
            if not np.any(pending):
                break
            cand = np.mod(Xa[pending] + t[pending, None] * step[pending], 1.0)
            Yc, Jc = _word_map_batch(ifs, w, cand)
            rc = _wrap(Yc - cand)
            rcn = np.max(np.abs(rc), axis=-1)
            better = rcn < rna[pending]
            idx = np.flatnonzero(pending)
            acc = idx[better]
            newX[acc], newr[acc], newres[acc], newJ[acc] = cand[better], rcn[better], rc[better], Jc[better]
            pending[acc] = False
            t[pending] *= 0.5
        X[active], rn[active], res[active], J[active] = newX, newr, newres, newJ
    return X, rn, J


def _flag_fixed_point(ifs, w, x0, F, tol=1e-13, max_iter=10000):
    """Iterate the flag map of the word until the frame stops moving."""
    frame = F.frame
    for _ in range(max_iter):
        newF, _, _ = derivative_along(ifs, w, x0, Flag._trusted(frame))
        if flag_distance(newF.frame, frame) < tol:
            return newF
        frame = newF.frame
    raise ModuliCollision("flag iteration did not settle; the word's moduli may be too close")


SHORT_WORD = 48


def lyapunov_vector_of_periodic(ifs, w, require_cone=False, start=None, seeds=None):
    """Record for the periodic orbit of the word w.

    The fixed point comes from damped Newton over the verification mesh
    (torus mode) or is the single base point (linear mode).  For short
    words the stable flag is computed from the eigenvectors of Dg_[w]; for
    long words, whose product over- or underflows, it is found by
    iterating the flag map from ``start`` (a (base, Flag) pair) or the
    canonical flag.  lambda_i = log M_ii(Dg_[w](x0), F0) / p.
    """
    w = check_word(ifs, w)
    p = len(w)
    if p == 0:
        raise ValueError("word must be nonempty")
    d = ifs.dim
    if ifs.mode == LINEAR:
        x0 = np.zeros(0)
        residual = 0.0
        J0 = None
    else:
        if seeds is None:
            seeds = verification_mesh(d)[0] if start is None else np.atleast_2d(start[0])
        X, rn, J = _newton_fixed_points(ifs, w, seeds)
        good = np.flatnonzero(rn < 1e-12)
        if good.size == 0:
            raise NoFixedPoint(f"damped Newton failed from all {len(X)} seeds (best residual {rn.min():.3e})")
        radii = np.array([np.max(np.abs(np.linalg.eigvals(J[i]))) for i in good])
        attracting = good[radii < 1]
        pool = attracting if attracting.size else good
        best = pool[np.lexsort((pool, rn[pool]))[0]]
        x0 = X[best]
        x0 = np.where(x0 >= 1.0, x0 - 1.0, x0)
        residual = float(rn[best])
        J0 = J[best]

    if p <= SHORT_WORD and start is None:
        if J0 is None:
            J0 = np.eye(d)
            for s in w:
                J0 = ifs.generators[s].matrix @ J0
        F0 = stable_flag(J0)
    else:
        F_start = start[1] if start is not None else Flag.canonical(d)
        F0 = _flag_fixed_point(ifs, w, x0, F_start)

    _, _, logd = derivative_along(ifs, w, x0, F0)
    lam = logd / p
    for a, b in zip(logd[:-1], logd[1:]):
        # relative modulus gap 1 - exp(-(log|mu_i| - log|mu_i+1|))
        if -math.expm1(-(a - b)) < MODULI_GAP:
            raise ModuliCollision(f"eigenvalue moduli of the word are not separated (log gap {a - b:.3e})")
    lam_t = tuple(float(v) for v in lam)
    gamma = least_gap(lam_t)
    log_rho_base = None if ifs.mode == LINEAR else p * lam_t[0]
    log_rho_flag = None if d == 1 else p * max(lam_t[i] - lam_t[j] for i, j in so_frame_index(d))
    if require_cone and not in_cone(lam_t):
        raise NotInCone(f"lambda = {lam_t} is not in the cone 0 > l1 > ... > ld")
    return PeriodicOrbitRecord(
        word=w, base=x0, flag=F0, lam=LyapunovVector(lam_t), gamma=float(gamma),
        log_rho_base=None if log_rho_base is None else float(log_rho_base),
        log_rho_flag=None if log_rho_flag is None else float(log_rho_flag),
        residual=residual, logdiag=logd,
    )


def exponent_record(fv: FurstenbergVector, residuals=None):
    """JSON-ready summary {lambda, gamma, samples, residuals}."""
    lam = list(fv.values)
    return {
        "lambda": lam,
        "gamma": least_gap(sorted(lam, reverse=True)),
        "samples": fv.sample_count,
        "residuals": residuals if residuals is not None else [],
    }
