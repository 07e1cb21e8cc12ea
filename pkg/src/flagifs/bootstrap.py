"""Orbit improvement, shadowing proportions and the bootstrap driver.

One improvement step turns a periodic orbit z with word w and exponents
lambda in the cone into a longer periodic orbit with word

    w^n  b_1 ... b_m  w'

where the b_j are prescribed-diagonal blocks aiming at
chi = c |lambda| / |lambda_d| and w' is a group tour back to a small ball
around z.  The new exponents are close to (1 - kappa0) lambda + kappa0 chi,
which is shorter than lambda and points the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cocycle import LyapunovVector, PeriodicOrbitRecord, in_cone, least_gap
from .errors import ConeExit, ContractFailure, ContractionLost, FlagIFSError, NotInCone
from .flags import Flag, canonicalize, derivative_from_triangular, qr_positive, so_frame_index
from .ifs import LINEAR, SkewPoint, check_word, derivative_along, state_distance, word_str
from .maneuver import prescribe_word
from .minimality import (
    Ball,
    TourReport,
    apply_word_batch,
    ball_samples,
    bundle_jacobian,
    depth_for,
    group_tour,
    run_word,
    tour_and_go_home,
    tour_pairs,
    verify_density,
)

SLACK = 0.1
FIXED_POINT_TOL = 1e-12
FIXED_POINT_ITERS = 10_000
MIN_NORM = 1e-10


# -- periodic orbits and shadowing ---------------------------------------------


@dataclass
class PeriodicOrbit:
    """Fully enumerated periodic orbit: states X[i], F[i] before symbol word[i]."""

    word: tuple
    X: np.ndarray
    F: np.ndarray

    @property
    def period(self):
        return len(self.word)

    @classmethod
    def from_state(cls, ifs, word, x, frame):
        word = check_word(ifs, word)
        X, F = run_word(ifs, word, x, frame)
        return cls(word, X[:-1], F[:-1])

    @classmethod
    def from_record(cls, ifs, rec: PeriodicOrbitRecord):
        return cls.from_state(ifs, rec.word, rec.base, rec.flag.frame)

    def skew_point(self, i, depth):
        """Skew point at orbit index i with a symmetric window of the given depth."""
        p = self.period
        past = [self.word[(i - k) % p] for k in range(depth, 0, -1)]
        future = [self.word[(i + k) % p] for k in range(depth + 1)]
        return SkewPoint(past, future, self.X[i], Flag._trusted(self.F[i]))


@dataclass(frozen=True)
class ShadowReport:
    """Fraction of points of the new orbit that eps-shadow the old one for a full old period."""

    eps: float
    proportion: float
    kappa: float
    shadowed: int
    total: int
    window: int

    def to_dict(self):
        return {
            "eps": self.eps,
            "proportion": self.proportion,
            "kappa": self.kappa,
            "shadowed": self.shadowed,
            "total": self.total,
            "window": self.window,
        }


def window_radius(eps):
    """Largest r such that agreeing on |k| <= r is needed for symbolic distance < eps.

    The symbolic distance is 2^-n for the first disagreement at |k| = n,
    so it is below eps exactly when the windows agree for |k| <= r with
    r = floor(log2(1/eps)).  Returns -1 when eps > 1 (no condition).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps > 1:
        return -1
    r = math.floor(math.log2(1 / eps))
    # guard the floor against rounding just below an integer
    while 2.0 ** (-(r + 1)) >= eps:
        r += 1
    while r > 0 and 2.0 ** (-r) < eps:
        r -= 1
    return r


_MOD = (1 << 31) - 1
_BASES = (911_382_323, 972_663_749)


def _window_hashes(seq, start_offset, W, count):
    """Double polynomial hashes of the cyclic windows seq[a+start_offset : +W] for a < count."""
    n = len(seq)
    ext = [int(seq[(start_offset + t) % n]) + 1 for t in range(count + W - 1)]
    out = []
    for b in _BASES:
        bw = pow(b, W, _MOD)
        h = 0
        for t in range(W):
            h = (h * b + ext[t]) % _MOD
        hs = [h]
        for a in range(1, count):
            h = (h * b + ext[a + W - 1] - ext[a - 1] * bw) % _MOD
            hs.append(h)
        out.append(hs)
    return list(zip(*out))


def _ok_windows(bad, L, W):
    """ok[j] for j < L: no bad entry in bad[j : j + W]."""
    cs = np.concatenate([[0], np.cumsum(bad, dtype=np.int64)])
    return cs[W:W + L] - cs[:L] == 0


def shadow_proportion(A: PeriodicOrbit, B: PeriodicOrbit, eps):
    """Fraction of x' in A admitting x in B with d(h^i x', h^i x) < eps for 0 <= i < period(B).

    The skew distance is the max of the symbolic distance of the
    two-sided periodic sequences and the state distance.  Candidate
    alignments come from rolling hashes of the symbol windows and are
    then checked exactly, run by run along diagonals.
    """
    r = window_radius(eps)
    pA, pB = A.period, B.period
    wA = np.asarray(A.word)
    wB = np.asarray(B.word)
    if r >= 0:
        W = pB + 2 * r
        hb = {}
        for b, h in enumerate(_window_hashes(wB, -r, W, pB)):
            hb.setdefault(h, []).append(b)
        pairs = [(a, b) for a, h in enumerate(_window_hashes(wA, -r, W, pA)) for b in hb.get(h, ())]
    else:
        W = 0
        pairs = [(a, b) for a in range(pA) for b in range(pB)]
    # group into diagonal runs (a, b), (a+1, b+1), ...
    pairs.sort(key=lambda ab: ((ab[0] - ab[1]) % pB, ab[0]))
    runs = []
    for a, b in pairs:
        if runs:
            a0, b0, L = runs[-1]
            if a == a0 + L and b == (b0 + L) % pB:
                runs[-1] = (a0, b0, L + 1)
                continue
        runs.append((a, b, 1))
    good = np.zeros(pA, dtype=bool)
    for a0, b0, L in runs:
        ok = np.ones(L, dtype=bool)
        if W:
            t = np.arange(L + W - 1)
            bad = wA[(a0 - r + t) % pA] != wB[(b0 - r + t) % pB]
            ok &= _ok_windows(bad, L, W)
            if not ok.any():
                continue
        t = np.arange(L + pB - 1)
        ia = (a0 + t) % pA
        ib = (b0 + t) % pB
        dist = state_distance(A.X[ia], A.F[ia], B.X[ib], B.F[ib])
        ok &= _ok_windows(dist >= eps, L, pB)
        good[a0:a0 + L] |= ok
    count = int(good.sum())
    prop = count / pA
    return ShadowReport(float(eps), prop, 1.0 - prop, count, pA, r)


# -- improvement constants ---------------------------------------------------------


def tau(lam, c, C):
    """tau(lambda) = 1 - (c/C) * gamma(lambda) / |lambda_d|; invariant under positive scaling."""
    lam = np.asarray(lam, dtype=float)
    return 1.0 - (c / C) * least_gap(lam) / abs(lam[-1])


def vector_angle(a, b):
    """Euclidean angle between two nonzero vectors, stable for small angles."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ua = a / np.linalg.norm(a)
    ub = b / np.linalg.norm(b)
    return float(2 * math.atan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub)))


@dataclass(frozen=True)
class ImproveConstants:
    """Constants derived from lambda, c and C for one improvement step."""

    c: float
    C: float
    gamma: float
    kappa0: float
    beta: float
    tau: float
    chi: tuple

    @classmethod
    def from_lambda(cls, lam, c, C):
        lam = np.asarray(lam, dtype=float)
        gamma = least_gap(lam)
        kappa0 = gamma / (2 * C)
        beta = (1 - kappa0) * gamma - kappa0 * c
        chi = np.minimum(c * np.abs(lam) / abs(lam[-1]), c)
        return cls(float(c), float(C), float(gamma), float(kappa0), float(beta), float(tau(lam, c, C)),
                   tuple(float(v) for v in chi))

    @property
    def kappa_bound(self):
        """kappa = gamma / C, the shadowing defect the step must not exceed."""
        return self.gamma / self.C

    def to_dict(self):
        return {
            "c": self.c, "C": self.C, "gamma": self.gamma, "kappa0": self.kappa0,
            "beta": self.beta, "tau": self.tau, "chi": list(self.chi), "kappa_bound": self.kappa_bound,
        }


@dataclass
class ImproveParams:
    """Budget and tolerances for one improvement step.

    ``n`` and ``m`` fix the phase lengths; when left as None they are
    chosen from the proportion rule and raised automatically (up to
    ``retries`` times, never past ``max_length`` symbols) if a contract
    fails.  ``eta`` sets the prescribe block length q = ceil(C / eta).
    """

    theta: float = 0.2
    eps: float = 0.25
    delta: float = 0.3
    n: int | None = None
    m: int | None = None
    eta: float = 0.05
    rho_max: float = 0.1
    tour_fraction: float = 0.05
    n_min: int = 1
    max_length: int = 2_000_000
    retries: int = 3
    samples: int = 8
    seed: int = 0
    kmax: int = 12
    chunk: int = 32
    safety: float = 2.0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def choose_lengths(consts: ImproveConstants, p, q, r, k_est, eta, tour_fraction, n_min=1, n_cap=10**7):
    """Smallest n (with its m) meeting the proportion, tour and shadowing targets.

    m is the largest count with qm/(pn+qm) below kappa0 - eta/2.  The
    predicted shadowing fraction (pn - 2r - p)/(pn + qm + k) must clear
    1 - kappa by a quarter of kappa0.
    """
    k0 = consts.kappa0
    kt = max(k0 - eta / 2, 0.0)
    need = 1 - consts.kappa_bound + k0 / 4
    for n in range(max(n_min, 1), n_cap):
        m = int(math.floor(kt * p * n / ((1 - kt) * q))) if kt > 0 else 0
        core = p * n + q * m
        frac = q * m / core
        if not (k0 - eta < frac < k0 or (m == 0 and k0 <= eta)):
            continue
        total = core + k_est
        if k_est > tour_fraction * total:
            continue
        if (p * n - 2 * max(r, 0) - p) / total < need:
            continue
        return n, m
    raise ContractFailure(f"no phase lengths below n = {n_cap} meet the targets")


# -- contraction certificate ---------------------------------------------------------


def chunked_log_lipschitz(ifs, word, X, F, chunk):
    """Sum over chunks of log max over samples of the chunk's local expansion.

    Samples (X, F) are carried along.  Returns (per-chunk log maxima,
    final X, final F).
    """
    logs = []
    for a in range(0, len(word), chunk):
        piece = word[a:a + chunk]
        if ifs.mode == LINEAR and ifs.dim > 1:
            # the chunk derivative is one constant matrix; QR it against every sample frame
            P = np.eye(ifs.dim)
            for s in piece:
                P = ifs.generators[s].matrix @ P
            Q, R = qr_positive(P @ F)
            mx = max(float(np.linalg.norm(derivative_from_triangular(r), 2)) for r in R)
            logs.append(math.log(mx))
            F = canonicalize(Q)
            continue
        norms = []
        for i in range(len(X)):
            J = bundle_jacobian(ifs, piece, X[i], F[i])
            norms.append(float(np.linalg.norm(J, 2)) if J.size else 0.0)
        mx = max(norms)
        logs.append(math.log(mx) if mx > 0 else -math.inf)
        X, F = apply_word_batch(ifs, piece, X, F)
    return np.array(logs), X, F


def _fixed_point(ifs, word, x, frame):
    disp = math.inf
    for it in range(1, FIXED_POINT_ITERS + 1):
        Y, G = apply_word_batch(ifs, word, x[None], frame[None])
        disp = float(state_distance(Y[0], G[0], x, frame))
        x, frame = Y[0], G[0]
        if disp < FIXED_POINT_TOL:
            return x, frame, disp, it
    raise ContractionLost(f"fixed-point iteration did not settle (last displacement {disp:.3e})")


def record_from_fixed_point(ifs, word, x, frame, residual):
    """PeriodicOrbitRecord for a word whose fixed state is already known."""
    T = len(word)
    _, _, logd = derivative_along(ifs, word, x, Flag._trusted(frame))
    lam = tuple(float(v) for v in logd / T)
    d = ifs.dim
    return PeriodicOrbitRecord(
        word=tuple(word),
        base=np.asarray(x, dtype=float),
        flag=Flag._trusted(frame),
        lam=_lyap_or_raise(lam),
        gamma=float(least_gap(lam)),
        log_rho_base=None if ifs.mode == LINEAR else T * lam[0],
        log_rho_flag=None if d == 1 else T * max(lam[i] - lam[j] for i, j in so_frame_index(d)),
        residual=float(residual),
        logdiag=logd,
    )


def _lyap_or_raise(lam):
    try:
        return LyapunovVector(lam)
    except ValueError as e:
        raise ConeExit(f"new exponents {lam} are not ordered: {e}") from None


# -- improvement step -------------------------------------------------------------


@dataclass
class ImproveStep:
    """Result of one improvement step and its contract checks."""

    record: PeriodicOrbitRecord
    shadow: ShadowReport
    tour: TourReport
    constants: ImproveConstants
    n: int
    m: int
    q: int
    k: int
    ratio: float
    angle: float
    log_lipschitz: float
    home_radius: float
    tour_radius: float
    tour_ball_certified: bool
    contracts: dict
    attempts: int
    prescribe_misses: int
    orbit: PeriodicOrbit = field(repr=False, default=None)

    @property
    def ok(self):
        return all(self.contracts.values())

    def to_dict(self, full_word=False):
        return {
            "record": self.record.to_dict(full_word),
            "shadow": self.shadow.to_dict(),
            "tour": self.tour.to_dict(full_word),
            "constants": self.constants.to_dict(),
            "n": self.n, "m": self.m, "q": self.q, "k": self.k,
            "period": self.record.period,
            "ratio": self.ratio,
            "tau_bound": self.constants.tau * (1 + SLACK),
            "angle": self.angle,
            "log_lipschitz": self.log_lipschitz,
            "home_radius": self.home_radius,
            "tour_radius": self.tour_radius,
            "tour_ball_certified": self.tour_ball_certified,
            "contracts": self.contracts,
            "attempts": self.attempts,
            "prescribe_misses": self.prescribe_misses,
        }


def _build(ifs, cert, z, params: ImproveParams, consts, n, m, q, old_orbit):
    p = z.period
    rho = min(params.eps / 2, params.rho_max)
    home = Ball(z.base, z.flag.frame, rho)
    x0 = np.asarray(z.base, dtype=float)
    f0 = z.flag.frame
    rng = np.random.default_rng(params.seed)
    SX, SF = ball_samples(ifs, home, params.samples, rng)

    head = tuple(z.word) * n
    x, frame = apply_word_batch(ifs, head, x0[None], f0[None])
    x, frame = x[0], frame[0]
    misses = 0
    chi = np.array(consts.chi)
    for _ in range(m):
        tr = prescribe_word(ifs, cert, (x, Flag._trusted(frame)), chi, params.eta)
        head += tr.word
        misses += tr.misses
        x, frame = np.asarray(tr.end[0], dtype=float), tr.end[1].frame
    logs_head, SX, SF = chunked_log_lipschitz(ifs, head, SX, SF, params.chunk)
    log_head = math.log(params.safety) + float(np.sum(logs_head))
    r_m = rho * math.exp(min(log_head, 700.0))

    gt = group_tour(
        ifs, params.delta, home, Ball(x, frame, r_m),
        samples=params.samples, seed=params.seed, safety=params.safety, kmax=params.kmax,
    )
    word = head + gt.word
    logs_tail, _, _ = chunked_log_lipschitz(ifs, gt.word, SX, SF, params.chunk)
    log_lip = log_head + float(np.sum(logs_tail))

    Y, G = apply_word_batch(ifs, word, x0[None], f0[None])
    drift = float(home.distance(Y, G)[0])
    if not drift + rho * math.exp(min(log_lip, 700.0)) < rho:
        raise ContractionLost(
            f"composed map not certified on the home ball: drift {drift:.3e}, "
            f"log Lipschitz {log_lip:.3f}, radius {rho:.3e}"
        )
    xf, ff, residual, _ = _fixed_point(ifs, word, x0, f0)
    rec = record_from_fixed_point(ifs, word, xf, ff, residual)
    if not rec.in_cone():
        raise ConeExit(f"new exponents {list(rec.lam.values)} left the cone")

    orbit = PeriodicOrbit.from_state(ifs, word, xf, ff)
    shadow = shadow_proportion(orbit, old_orbit, params.eps)

    # re-verify the tour on the true periodic orbit
    mdepth = depth_for(params.delta)
    TX, TF, tpairs, _ = tour_pairs(ifs, params.delta, mdepth, params.seed)
    t0 = len(head)
    tour_start = (orbit.X[t0] if ifs.base_dim else np.zeros(0), Flag._trusted(orbit.F[t0]))
    witnesses, dense = verify_density(ifs, gt.word, tour_start, TX, TF, tpairs, params.delta, mdepth, past=head[-mdepth:] if mdepth else ())
    tour = replace(gt.report, witnesses=witnesses, dense=bool(dense and gt.report.dense))

    lam_old = z.lam.as_array()
    lam_new = rec.lam.as_array()
    ratio = float(np.linalg.norm(lam_new) / np.linalg.norm(lam_old))
    angle = vector_angle(lam_new, lam_old)
    contracts = {
        "in_cone": bool(rec.in_cone()),
        "norm": ratio < consts.tau * (1 + SLACK),
        "angle": angle < params.theta,
        "shadow": shadow.proportion >= 1 - consts.kappa_bound,
        "dense": bool(tour.dense),
    }
    return ImproveStep(
        record=rec, shadow=shadow, tour=tour, constants=consts, n=n, m=m, q=q, k=len(gt.word),
        ratio=ratio, angle=angle, log_lipschitz=log_lip, home_radius=rho, tour_radius=gt.rho,
        tour_ball_certified=gt.rho >= r_m, contracts=contracts, attempts=1, prescribe_misses=misses,
        orbit=orbit,
    )


def improve_orbit(ifs, cert, z: PeriodicOrbitRecord, theta, eps, delta, budget: ImproveParams | None = None,
                  old_orbit: PeriodicOrbit | None = None):
    """One improvement step; returns an :class:`ImproveStep`.

    Raises ConeExit, ContractionLost or NotReached from the construction,
    and ContractFailure when a contract (norm, angle, shadowing, density)
    still fails after the automatic budget increases.
    """
    params = replace(budget or ImproveParams(), theta=theta, eps=eps, delta=delta)
    lam = z.lam.as_array()
    if np.linalg.norm(lam) < MIN_NORM:
        raise ValueError("improve_orbit needs a nonzero exponent vector")
    if not in_cone(lam):
        raise NotInCone(f"lambda = {lam.tolist()} is not in the cone")
    consts = ImproveConstants.from_lambda(lam, cert.c, cert.C)
    q = int(math.ceil(cert.C / params.eta))
    p = z.period
    old_orbit = old_orbit or PeriodicOrbit.from_record(ifs, z)
    fixed = params.n is not None and params.m is not None
    if fixed:
        n, m = params.n, params.m
    else:
        home = Ball(z.base, z.flag.frame, min(eps / 2, params.rho_max) / 2)
        dry = tour_and_go_home(ifs, delta, home, (z.base, z.flag), seed=params.seed, kmax=params.kmax,
                               visit_radius=delta / 4)
        n, m = choose_lengths(consts, p, q, window_radius(eps), len(dry.word), params.eta,
                              params.tour_fraction, params.n_min)
    attempts = 0
    while True:
        attempts += 1
        step = _build(ifs, cert, z, params, consts, n, m, q, old_orbit)
        step.attempts = attempts
        if step.ok:
            return step
        length = step.record.period
        if fixed or attempts > params.retries or length * 1.5 > params.max_length:
            failed = [k for k, v in step.contracts.items() if not v]
            err = ContractFailure(f"contracts {failed} failed after {attempts} attempt(s) at period {length}")
            err.step = step
            raise err
        n = int(math.ceil(n * 1.5)) + 1
        kt = max(consts.kappa0 - params.eta / 2, 0.0)
        m = int(math.floor(kt * p * n / ((1 - kt) * q))) if kt > 0 else 0


# -- bootstrap driver -------------------------------------------------------------------


@dataclass
class BootstrapLog:
    """Per-step records (plain dicts) and a closing summary."""

    records: list
    summary: dict
    steps: list = field(repr=False, default_factory=list)

    @property
    def failed(self):
        return "error" in self.summary


def _seed_entry(rec, C):
    return {
        "step": 0,
        "period": rec.period,
        "word": word_str(rec.word),
        "lambda": list(rec.lam.values),
        "norm": rec.norm,
        "gamma": rec.gamma,
        "in_cone": rec.in_cone(),
        "kappa_bound": rec.gamma / C,
    }


def run_bootstrap(ifs, cert, seed: PeriodicOrbitRecord, thetas, epss, deltas, steps, budget=None):
    """Iterate improve_orbit; the log survives a failing step."""
    thetas, epss, deltas = list(thetas), list(epss), list(deltas)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    for name, sched in (("theta", thetas), ("eps", epss), ("delta", deltas)):
        if len(sched) < steps:
            raise ValueError(f"{name} schedule has {len(sched)} entries, need {steps}")
        if any(not v > 0 for v in sched[:steps]):
            raise ValueError(f"{name} schedule entries must be positive")
    if not seed.in_cone():
        raise NotInCone("seed orbit is not in the cone")
    budget = budget or ImproveParams()
    records = [_seed_entry(seed, cert.C)]
    z = seed
    orbit = PeriodicOrbit.from_record(ifs, z)
    norms = [seed.norm]
    taus = []
    sum_eps = 0.0
    prod = 1.0
    done = []
    summary = {}
    for n in range(steps):
        try:
            st = improve_orbit(ifs, cert, z, thetas[n], epss[n], deltas[n], budget, old_orbit=orbit)
        except FlagIFSError as e:
            entry = {"step": n + 1, "error": type(e).__name__, "message": str(e)}
            partial = getattr(e, "step", None)
            if partial is not None:
                entry["partial"] = partial.to_dict()
            records.append(entry)
            summary["error"] = type(e).__name__
            break
        sum_eps += epss[n]
        prod *= 1 - st.shadow.kappa
        taus.append(st.constants.tau)
        norms.append(st.record.norm)
        entry = {
            "step": n + 1,
            "theta": thetas[n],
            "eps": epss[n],
            "delta": deltas[n],
            "lambda": list(st.record.lam.values),
            "norm": st.record.norm,
            "kappa_precondition": st.constants.kappa_bound < min(1.0, float(np.linalg.norm(z.lam.as_array()))),
            "sum_eps": sum_eps,
            "prod_one_minus_kappa": prod,
            "measure_distance": empirical_measure_distance(st.orbit, orbit),
        }
        entry.update(st.to_dict())
        records.append(entry)
        done.append(st)
        z = st.record
        orbit = st.orbit
    tmax = max(taus) if taus else None
    trend = all(norms[k] <= tmax ** k * norms[0] * (1 + 1e-12) for k in range(len(norms))) if taus else True
    summary.update({
        "steps_completed": len(done),
        "norms": norms,
        "max_tau": tmax,
        "trendline_ok": trend,
        "strictly_decreasing": all(b < a for a, b in zip(norms, norms[1:])),
        "sum_eps": sum_eps,
        "prod_one_minus_kappa": prod,
    })
    return BootstrapLog(records, summary, done)


# -- empirical measures ---------------------------------------------------------------


def _cylinder_frequencies(word, k):
    w = np.asarray(word, dtype=np.int64)
    p = len(w)
    idx = (np.arange(p)[:, None] + np.arange(k)[None]) % p
    rows = w[idx]
    keys, counts = np.unique(rows, axis=0, return_counts=True)
    return {tuple(r): c / p for r, c in zip(keys.tolist(), counts)}


def measure_features(orbit: PeriodicOrbit, ell=None):
    """Averages of the fixed test family over a periodic orbit.

    Family: torus Fourier modes e^{2 pi i <m, x>} with 0 < |m|_inf <= 2
    (one of each +-m pair), degree-2 same-column products F[a,j] F[b,j]
    of the frame (invariant under column signs; degree-1 entries are
    not), and cylinder indicators of depth 1 to 4.
    """
    out = {}
    bd = orbit.X.shape[1]
    if bd:
        for m in np.ndindex(*(5,) * bd):
            mv = np.array(m) - 2
            nz = mv[mv != 0]
            if nz.size == 0 or nz[0] < 0:
                continue
            out[("fourier", tuple(mv.tolist()))] = complex(np.mean(np.exp(2j * math.pi * (orbit.X @ mv))))
    d = orbit.F.shape[-1]
    for j in range(d):
        for a in range(d):
            for b in range(a, d):
                out[("frame", j, a, b)] = float(np.mean(orbit.F[:, a, j] * orbit.F[:, b, j]))
    for k in range(1, 5):
        for key, v in _cylinder_frequencies(orbit.word, k).items():
            out[("cyl",) + key] = float(v)
    return out


def empirical_measure_distance(A: PeriodicOrbit, B: PeriodicOrbit):
    """Max over the test family of |mean over A - mean over B| (missing cylinders count as 0)."""
    fa = measure_features(A)
    fb = measure_features(B)
    best = 0.0
    for key in set(fa) | set(fb):
        best = max(best, abs(fa.get(key, 0.0) - fb.get(key, 0.0)))
    return float(best)
