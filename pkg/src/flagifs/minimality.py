"""Word searches on the flag bundle: go home, tours, and the minimality criterion.

States are pairs (base point, canonical frame) and are handled in stacks:
``X`` has shape (n, base_dim) and ``F`` shape (n, d, d).  Distances are the
flag-bundle surrogate (max of torus and frame distances); on the skew
product the symbolic distance 2^-n is added on top.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotReached, RadiusCollapse
from .flags import Flag, _pair_arrays, canonicalize, derivative_from_triangular, qr_positive
from .ifs import (
    LINEAR,
    SkewPoint,
    check_word,
    derivative_along,
    flag_distance,
    skew_distance,
    state_distance,
    word_str,
)

NODE_BUDGET = 200_000
BLOCK_CAP = 4096
MIN_RADIUS = 1e-8
FD_STEP = 1e-6


@dataclass
class Ball:
    """Open ball in the flag bundle under the surrogate metric."""

    base: np.ndarray
    frame: np.ndarray
    radius: float

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float).reshape(-1)
        self.frame = canonicalize(np.asarray(self.frame, dtype=float))
        if not self.radius >= 0:
            raise ValueError("ball radius must be non-negative")

    @classmethod
    def at(cls, base, flag: Flag, radius):
        return cls(base, flag.frame, radius)

    def distance(self, X, F):
        return state_distance(X, F, self.base, self.frame)

    def contains(self, X, F):
        return self.distance(X, F) < self.radius

    def to_dict(self):
        return {"base": self.base.tolist(), "flag": self.frame.tolist(), "radius": self.radius}


def _stack(x, frame):
    return np.asarray(x, dtype=float).reshape(1, -1), np.asarray(frame, dtype=float)[None]


def run_word(ifs, w, x, frame):
    """All states along w from a single start: arrays of length len(w)+1."""
    w = check_word(ifs, w)
    X = np.empty((len(w) + 1, ifs.base_dim))
    F = np.empty((len(w) + 1, ifs.dim, ifs.dim))
    X[0] = x
    F[0] = frame
    for t, s in enumerate(w):
        X[t + 1], F[t + 1], _, _ = ifs.step(s, X[t], F[t])
    return X, F


def apply_word_batch(ifs, w, X, F):
    for s in w:
        X, F, _, _ = ifs.step(s, X, F)
    return X, F


def _quantize(X, F, res):
    flat = np.concatenate([X, F.reshape(len(F), -1)], axis=1)
    return np.floor(flat / res).astype(np.int64)


# -- breadth-first search ----------------------------------------------------


@dataclass
class SearchTree:
    """Levels of a breadth-first word search, in lexicographic order."""

    parents: list = field(default_factory=list)
    symbols: list = field(default_factory=list)

    def word(self, level, index):
        out = []
        for k in range(level, 0, -1):
            out.append(int(self.symbols[k - 1][index]))
            index = int(self.parents[k - 1][index])
        return tuple(reversed(out))


def _search(ifs, x0, f0, accept, kmax, res, node_budget, always_prune=False, visit=None):
    """Breadth-first search over words of length <= kmax.

    ``accept(X, F)`` flags the goal states.  Children are laid out parent
    by parent and symbol by symbol, so every level is in lexicographic
    order and the first accepted node is the lexicographically least
    among the shortest.  Once a level outgrows ``node_budget`` (or from
    the start when ``always_prune``) nodes are merged by a quantised key
    of resolution ``res``, keeping the earliest, and keys already seen at
    earlier levels are dropped.  ``visit(X, F, level)`` sees every level.
    """
    X, F = _stack(x0, f0)
    tree = SearchTree()
    seen = None
    for k in range(kmax + 1):
        if visit is not None:
            visit(X, F, k)
        if accept is not None:
            ok = accept(X, F)
            if np.any(ok):
                i = int(np.argmax(ok))
                return tree.word(k, i), X[i], F[i], tree
        if k == kmax or len(X) == 0:
            break
        if seen is None and (always_prune or len(X) * ifs.ell > node_budget):
            seen = set()
        keep = np.arange(len(X))
        if seen is not None:
            keys = _quantize(X, F, res)
            _, first = np.unique(keys, axis=0, return_index=True)
            first.sort()
            fresh = []
            for i in first:
                kb = keys[i].tobytes()
                if kb not in seen:
                    seen.add(kb)
                    fresh.append(i)
            keep = np.array(fresh, dtype=int)
            X, F = X[keep], F[keep]
        n = len(X)
        cx, cf = [], []
        for s in range(ifs.ell):
            xs, fs, _, _ = ifs.step(s, X, F)
            cx.append(xs)
            cf.append(fs)
        X = np.stack(cx, axis=1).reshape(n * ifs.ell, ifs.base_dim)
        F = np.stack(cf, axis=1).reshape(n * ifs.ell, ifs.dim, ifs.dim)
        tree.parents.append(np.repeat(keep, ifs.ell))
        tree.symbols.append(np.tile(np.arange(ifs.ell), n))
    return None, None, None, tree


def _go_home(ifs, target: Ball, x, frame, kmax, suffix=(), node_budget=NODE_BUDGET, res=None):
    suffix = check_word(ifs, suffix)
    res = res or max(target.radius / 4, 1e-9)

    def accept(X, F):
        Y, G = apply_word_batch(ifs, suffix, X, F)
        return target.contains(Y, G)

    word, xe, fe, _ = _search(ifs, x, frame, accept, kmax, res, node_budget)
    if word is None:
        raise NotReached(kmax)
    return word, xe, fe


def go_home(ifs, target: Ball, start, kmax, node_budget=NODE_BUDGET):
    """Shortest word (lexicographic tie-break) taking start into the target.

    ``start`` is a (base point, Flag) pair.  The search is exhaustive
    while levels stay under ``node_budget``; past that it merges states
    that share a cell of size radius/4.
    """
    if kmax < 1:
        raise ValueError("kmax must be at least 1")
    x, F = start
    word, _, _ = _go_home(ifs, target, x, F.frame, kmax, node_budget=node_budget)
    return word


# -- meshes ------------------------------------------------------------------


def _angle_count(r):
    arg = min(r / (2 * math.sqrt(2)), 1.0)
    return max(1, math.ceil(math.pi / (4 * math.asin(arg))))


def _angle_frames(n, offset=0.5):
    phi = (np.arange(n) + offset) * math.pi / n
    c, s = np.cos(phi), np.sin(phi)
    return canonicalize(np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -1))


def flag_mesh(d, r, seed=0, probes=2000, cap=20000):
    """Frames forming an r-dense set of flags, and whether that is proven.

    d = 1 is a single point and d = 2 an angle grid (proven).  For d >= 3
    Haar samples are added until ``probes`` independent probes all lie
    within r; the density is then sampled, not proven.
    """
    if d == 1:
        return np.ones((1, 1, 1)), True
    if d == 2:
        return _angle_frames(_angle_count(r)), True
    rng = np.random.default_rng(seed)
    probe = canonicalize(qr_positive(rng.standard_normal((probes, d, d)))[0])
    pts = canonicalize(qr_positive(rng.standard_normal((64, d, d)))[0])
    while len(pts) < cap:
        dist = np.min(flag_distance(probe[:, None], pts[None]), axis=1)
        far = dist >= r
        if not np.any(far):
            break
        pts = np.concatenate([pts, probe[far][: max(1, len(pts) // 2)]])
        probe = canonicalize(qr_positive(rng.standard_normal((probes, d, d)))[0])
    return pts, False


def bundle_mesh(ifs, r, seed=0):
    """(X, F, proven): an r-dense point set of the flag bundle."""
    frames, proven = flag_mesh(ifs.dim, r, seed)
    if ifs.mode == LINEAR:
        bases = np.zeros((1, 0))
    else:
        n = max(1, math.ceil(1 / (2 * r)))
        axes = [(np.arange(n) + 0.5) / n] * ifs.dim
        bases = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ifs.dim)
    X = np.repeat(bases, len(frames), axis=0)
    F = np.tile(frames, (len(bases), 1, 1))
    return X, F, proven


def bundle_diameter(ifs):
    """Upper bound on the skew-product diameter (symbolic part included)."""
    diam = 1.0
    if ifs.mode != LINEAR:
        diam = max(diam, 0.5)
    if ifs.dim > 1:
        diam = max(diam, math.sqrt(2 * ifs.dim))
    return diam


# -- local expansion -----------------------------------------------------------


def _chart_out(ifs, X, F, coords):
    """States at chart coordinates around each (X, F): base shift, then flag."""
    bd = ifs.base_dim
    d = ifs.dim
    ii, jj = _pair_arrays(d)
    Y = X + coords[:, :bd]
    if bd:
        Y = np.mod(Y, 1.0)
    A = np.zeros((len(X), d, d))
    c = coords[:, bd:] / math.sqrt(2)
    A[:, ii, jj] = c
    A[:, jj, ii] = -c
    G = canonicalize(qr_positive(F @ (np.eye(d) + A))[0])
    return Y, G


def _chart_in(ifs, x0, f0, X, F):
    """Inverse chart at (x0, f0); column signs are aligned to f0 first."""
    bd = ifs.base_dim
    ii, jj = _pair_arrays(ifs.dim)
    dx = (X - x0 + 0.5) % 1.0 - 0.5 if bd else X
    sg = np.sign(np.einsum("ij,nij->nj", f0, F))
    sg[sg == 0] = 1.0
    B = np.einsum("ji,njk->nik", f0, F * sg[:, None, :])
    y = (B[:, ii, jj] - B[:, jj, ii]) / 2 * math.sqrt(2)
    return np.concatenate([dx, y], axis=1)


def bundle_jacobian(ifs, w, x, frame, h=FD_STEP):
    """Derivative of the bundle map of w at one state, in orthonormal charts.

    Flag coordinates are scaled so the frame distance matches the chart
    norm to first order.  Linear mode uses the exact triangular formula;
    torus mode uses central differences.
    """
    w = check_word(ifs, w)
    x = np.asarray(x, dtype=float).reshape(-1)
    frame = np.asarray(frame, dtype=float)
    if ifs.mode == LINEAR:
        if ifs.dim == 1:
            return np.zeros((0, 0))
        _, P, _ = derivative_along(ifs, w, x, Flag._trusted(frame))
        return derivative_from_triangular(P)
    n = ifs.base_dim + len(_pair_arrays(ifs.dim)[0])
    E = np.concatenate([np.eye(n), -np.eye(n)]) * h
    Xc = np.repeat(x[None], 2 * n, axis=0)
    Fc = np.repeat(frame[None], 2 * n, axis=0)
    Y, G = _chart_out(ifs, Xc, Fc, E)
    Y, G = apply_word_batch(ifs, w, np.concatenate([Y, x[None]]), np.concatenate([G, frame[None]]))
    y = _chart_in(ifs, Y[-1], G[-1], Y[:-1], G[:-1])
    return ((y[:n] - y[n:]) / (2 * h)).T


def local_expansion(ifs, w, x, frame):
    """Operator 2-norm of :func:`bundle_jacobian` (0 for a point bundle)."""
    J = bundle_jacobian(ifs, w, x, frame)
    if J.size == 0:
        return 0.0
    return float(np.linalg.norm(J, 2))


def step_lipschitz(ifs, s, X, F):
    """Local expansion of one symbol at each stacked state."""
    if ifs.mode == LINEAR:
        if ifs.dim == 1:
            return np.zeros(len(X))
        J = ifs.generators[s].matrix
        _, R = qr_positive(J @ F)
        return np.array([np.linalg.norm(derivative_from_triangular(r), 2) for r in R])
    return np.array([local_expansion(ifs, (s,), X[i], F[i]) for i in range(len(X))])


def ball_samples(ifs, ball: Ball, n, rng):
    """The centre followed by n states drawn inside the ball."""
    bd = ifs.base_dim
    D = len(_pair_arrays(ifs.dim)[0])
    X = np.repeat(ball.base[None], n, axis=0)
    F = np.repeat(ball.frame[None], n, axis=0)
    if bd:
        X = np.mod(X + rng.uniform(-ball.radius, ball.radius, (n, bd)) * 0.999, 1.0)
    if D:
        v = rng.standard_normal((n, D))
        v *= (ball.radius * rng.uniform(0, 1, (n, 1))) / np.linalg.norm(v, axis=1, keepdims=True)
        z = np.zeros((n, bd))
        _, G = _chart_out(ifs, X, F, np.concatenate([z, v], axis=1))
        for _ in range(4):
            dist = state_distance(X, G, ball.base, ball.frame)
            over = dist >= ball.radius
            if not np.any(over):
                break
            v[over] *= 0.5
            _, G = _chart_out(ifs, X, F, np.concatenate([z, v], axis=1))
        F = G
    X = np.concatenate([ball.base[None], X])
    F = np.concatenate([ball.frame[None], F])
    return X, F


# -- tours ---------------------------------------------------------------------


def depth_for(delta):
    """Least m with 2^-m <= delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return max(0, math.ceil(math.log2(1 / delta) - 1e-12))


@dataclass
class TourReport:
    """Outcome of a tour: the word and what was verified about it.

    ``dense`` means every (mesh point, block) pair of the census has an
    orbit point within ``delta`` in the skew metric.  ``certified`` is
    False when the block census was subsampled or the flag mesh density
    was itself only sampled.  ``witnesses`` lists (pair index, orbit
    index, skew distance).
    """

    word: tuple
    delta: float
    dense: bool
    certified: bool
    endpoint_in_target: bool
    witnesses: list
    depth: int
    mesh_size: int
    blocks: int
    pairs: int
    visit_radius: float
    endpoint_distance: float

    @property
    def density_kind(self):
        return "certified" if self.certified else "sampled"

    def to_dict(self, full_word=True):
        out = {
            "length": len(self.word),
            "delta": self.delta,
            "dense": self.dense,
            "density": self.density_kind,
            "endpoint_in_target": self.endpoint_in_target,
            "endpoint_distance": self.endpoint_distance,
            "depth": self.depth,
            "mesh_size": self.mesh_size,
            "blocks": self.blocks,
            "pairs": self.pairs,
            "visit_radius": self.visit_radius,
            "witnesses": [list(w) for w in self.witnesses],
        }
        if full_word:
            out["word"] = word_str(self.word)
        return out


def tour_pairs(ifs, delta, m, seed=0, block_cap=BLOCK_CAP, blocks_per_point=1):
    """Census of (mesh point, block) pairs for a tour.

    Returns (X, F, pairs, certified) where pairs are (mesh index, block).
    All blocks of length 2m+1 are used when there are at most
    ``block_cap``; otherwise each mesh point gets ``blocks_per_point``
    seeded random blocks.
    """
    X, F, proven = bundle_mesh(ifs, delta / 2, seed)
    nblocks = ifs.ell ** (2 * m + 1)
    if nblocks <= block_cap:
        blocks = list(itertools.product(range(ifs.ell), repeat=2 * m + 1))
        pairs = [(i, b) for i in range(len(X)) for b in blocks]
        return X, F, pairs, proven
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(len(X)):
        for _ in range(blocks_per_point):
            pairs.append((i, tuple(int(s) for s in rng.integers(0, ifs.ell, 2 * m + 1))))
    return X, F, pairs, False


def verify_density(ifs, word, start, X, F, pairs, delta, m, past=()):
    """Skew-metric witnesses for each census pair along the replayed word.

    The orbit point at time t carries the window past+word[:t] behind it
    and word[t:] ahead; mesh point i with block b is the skew point whose
    window is b centred on b[m].  Returns the list of witnesses
    (pair index, t, distance) and whether every pair has one below delta.
    """
    x0, F0 = start
    Xs, Fs = run_word(ifs, word, x0, F0.frame)
    full = tuple(past) + tuple(word)
    off = len(past)
    where = {}
    L = 2 * m + 1
    for t in range(len(word)):
        lo = off + t - m
        if lo < 0 or t + m >= len(word):
            continue
        where.setdefault(full[lo:lo + L], []).append(t)
    witnesses = []
    ok = True
    for k, (i, b) in enumerate(pairs):
        best = None
        y = SkewPoint(b[:m], b[m:], X[i], Flag._trusted(F[i]))
        for t in where.get(tuple(b), ()):
            p = SkewPoint(full[max(0, off + t - m):off + t], word[t:t + m + 1], Xs[t], Flag._trusted(Fs[t]))
            dist = skew_distance(p, y)
            if best is None or dist < best[2]:
                best = (k, t, dist)
        if best is None or best[2] >= delta:
            ok = False
        if best is not None:
            witnesses.append(best)
    return witnesses, ok


def tour_and_go_home(
    ifs,
    delta,
    target: Ball,
    start,
    m=None,
    kmax=12,
    seed=0,
    block_cap=BLOCK_CAP,
    blocks_per_point=1,
    visit_radius=None,
    node_budget=NODE_BUDGET,
):
    """Word that tours a delta-mesh of the skew product and ends in target.

    For each census pair (y_i, b_i), with b_i = b_i^- b_i^+ and
    |b_i^-| = m, a go-home search steers the current state into the
    pulled-back ball where applying b_i^- lands within ``visit_radius``
    (default delta/2) of y_i; then b_i is appended.  A last go-home
    search reaches the target.  The report re-verifies density by replay.
    """
    x0, F0 = start
    m = depth_for(delta) if m is None else int(m)
    if 2.0 ** (-m) > delta + 1e-15:
        raise ValueError(f"depth {m} too small: 2^-m must be at most delta={delta}")
    visit_radius = delta / 2 if visit_radius is None else visit_radius
    x, frame = np.asarray(x0, dtype=float), F0.frame
    if delta > bundle_diameter(ifs):
        word, xe, fe = _go_home(ifs, target, x, frame, kmax, node_budget=node_budget)
        dist = float(target.distance(xe[None], fe[None])[0])
        return TourReport(word, delta, True, True, dist < target.radius, [], m, 1, 0, 0, visit_radius, dist)
    X, F, pairs, certified = tour_pairs(ifs, delta, m, seed, block_cap, blocks_per_point)
    word = []
    for i, b in pairs:
        ball = Ball(X[i], F[i], visit_radius)
        w, x, frame = _go_home(ifs, ball, x, frame, kmax, suffix=b[:m], node_budget=node_budget)
        word.extend(w)
        word.extend(b)
        x, frame = apply_word_batch(ifs, b, x[None], frame[None])
        x, frame = x[0], frame[0]
    w, x, frame = _go_home(ifs, target, x, frame, kmax, node_budget=node_budget)
    word.extend(w)
    word = tuple(word)
    witnesses, dense = verify_density(ifs, word, start, X, F, pairs, delta, m)
    Xs, Fs = run_word(ifs, word, x0, F0.frame)
    dist = float(target.distance(Xs[-1:], Fs[-1:])[0])
    nblocks = ifs.ell ** (2 * m + 1)
    return TourReport(
        word, delta, dense, certified, dist < target.radius, witnesses, m, len(X),
        min(nblocks, block_cap) if nblocks <= block_cap else len(pairs), len(pairs), visit_radius, dist,
    )


@dataclass
class GroupTour:
    """Tour from the centre of a ball plus a certified radius for the ball."""

    word: tuple
    rho: float
    requested_rho: float
    report: TourReport
    lipschitz: np.ndarray
    safety: float
    samples: int

    def to_dict(self, full_word=True):
        return {
            "rho": self.rho,
            "requested_rho": self.requested_rho,
            "safety_factor": self.safety,
            "samples": self.samples,
            "max_lipschitz": float(np.max(self.lipschitz)),
            "end_lipschitz": float(self.lipschitz[-1]),
            "tour": self.report.to_dict(full_word),
        }


def group_tour(ifs, delta, U: Ball, B: Ball, samples=8, seed=0, safety=2.0, **tour_kw):
    """Tour from the centre of B, with a radius rho <= B.radius certified for the whole ball.

    The centre is steered to within U.radius/2 of U's centre and visits
    the mesh at delta/4.  Along the word, Lip_t = safety * prod of
    per-step sampled expansions bounds the growth of the ball image, and
    rho is shrunk until Lip_t rho <= delta/4 at every t and the end image
    fits in U.  Every point of the certified ball then sees each census
    pair within delta/2 in state, so its segment is delta-dense too.
    """
    inner = Ball(U.base, U.frame, U.radius / 2)
    start = (B.base, Flag._trusted(B.frame))
    report = tour_and_go_home(ifs, delta, inner, start, visit_radius=delta / 4, seed=seed, **tour_kw)
    word = report.word
    rng = np.random.default_rng(seed)
    X, F = ball_samples(ifs, B, samples, rng)
    lip = np.empty(len(word) + 1)
    lip[0] = safety
    for t, s in enumerate(word):
        L = float(np.max(step_lipschitz(ifs, s, X, F)))
        lip[t + 1] = lip[t] * L
        X, F = apply_word_batch(ifs, (s,), X, F)
    if B.radius == 0:
        return GroupTour(word, 0.0, 0.0, report, lip, safety, samples)
    end_gap = U.radius - float(U.distance(X[:1], F[:1])[0])
    with np.errstate(divide="ignore"):
        rho = min(B.radius, (delta / 4) / np.max(lip), end_gap / lip[-1])
    if rho < B.radius:
        rho *= 0.999
    if rho < B.radius and not rho >= MIN_RADIUS:
        raise RadiusCollapse(f"certified radius {rho:.3e} fell below {MIN_RADIUS}")
    return GroupTour(word, float(rho), B.radius, report, lip, safety, samples)


# -- minimality criterion ---------------------------------------------------------


@dataclass
class CoverSpec:
    """Finite cover of the flag bundle by balls V_i with contracting words h_i."""

    elements: list
    words: list
    lebesgue: float

    def __post_init__(self):
        if len(self.elements) != len(self.words) or not self.elements:
            raise ValueError("a cover needs one word per ball and at least one ball")
        if not self.lebesgue > 0:
            raise ValueError("Lebesgue number must be positive")
        self.words = [tuple(int(s) for s in w) for w in self.words]

    def to_dict(self):
        return {
            "lebesgue": self.lebesgue,
            "elements": [dict(b.to_dict(), word=word_str(w)) for b, w in zip(self.elements, self.words)],
        }


@dataclass
class MinimalityVerdict:
    """Per-clause evidence for the minimality criterion on a mesh."""

    positive: bool
    clauses: dict
    alphas: list
    failing: list
    counterexample: dict | None
    horizon: int
    start_points: int
    target_points: int

    @property
    def kind(self):
        return "PositivelyMinimalEvidence" if self.positive else "Counterexample"

    def to_dict(self):
        return {
            "kind": self.kind,
            "positive": self.positive,
            "clauses": self.clauses,
            "alphas": self.alphas,
            "failing": self.failing,
            "counterexample": self.counterexample,
            "horizon": self.horizon,
            "start_points": self.start_points,
            "target_points": self.target_points,
        }


def contraction_factor(ifs, ball: Ball, w, probe_res=None, seed=0, extra=256):
    """Sampled max local expansion of h_w on h_w^-1(ball).

    Candidates are a mesh of the bundle plus points drawn in the ball
    itself; those whose image lies in the ball are kept.  Returns
    (alpha, number of samples); alpha is inf when no sample qualifies.
    """
    res = probe_res or max(ball.radius / 4, 0.01)
    X, F, _ = bundle_mesh(ifs, res, seed)
    Xb, Fb = ball_samples(ifs, ball, extra, np.random.default_rng(seed))
    X = np.concatenate([X, Xb])
    F = np.concatenate([F, Fb])
    Y, G = apply_word_batch(ifs, w, X, F)
    inside = np.flatnonzero(ball.contains(Y, G))
    if inside.size == 0:
        return math.inf, 0
    if ifs.mode == LINEAR and ifs.dim == 1:
        return 0.0, int(inside.size)
    alpha = max(local_expansion(ifs, w, X[i], F[i]) for i in inside)
    return float(alpha), int(inside.size)


def lebesgue_check(cover: CoverSpec, X, F):
    """Index of a mesh point whose delta-ball is in no V_i, or None."""
    slack = np.full(len(X), -np.inf)
    for ball in cover.elements:
        slack = np.maximum(slack, ball.radius - ball.distance(X, F))
    bad = np.flatnonzero(slack <= cover.lebesgue)
    return None if bad.size == 0 else int(bad[0])


def orbit_density(ifs, x, frame, TX, TF, delta, horizon, node_budget=NODE_BUDGET):
    """Minimal distance from each target to the orbit tree within the horizon."""
    best = np.full(len(TX), np.inf)

    def visit(X, F, level):
        for a in range(0, len(X), 2048):
            d = state_distance(X[a:a + 2048, None], F[a:a + 2048, None], TX[None], TF[None])
            np.minimum(best, d.min(axis=0), out=best)

    _search(ifs, x, frame, None, horizon, delta / 4, node_budget, always_prune=True, visit=visit)
    return best


def check_minimality_criterion(ifs, cover: CoverSpec, horizon, seed=0, node_budget=NODE_BUDGET):
    """Check both clauses of the minimality criterion on meshes.

    Clauses: ``lebesgue`` (every mesh point's delta-ball sits in some
    V_i), ``contraction`` (each h_i has sampled expansion < 1 on
    h_i^-1(V_i)), and ``density`` (from every start point of a
    delta/2-mesh, the orbit tree of depth ``horizon`` comes within delta
    of every target mesh point).  A density failure is only evidence of a
    short horizon, not a refutation; the verdict says which clause failed.
    """
    delta = cover.lebesgue
    TX, TF, _ = bundle_mesh(ifs, delta / 2, seed)
    clauses = {}
    counter = None
    bad = lebesgue_check(cover, TX, TF)
    clauses["lebesgue"] = bad is None
    if bad is not None:
        counter = {"clause": "lebesgue", "base": TX[bad].tolist(), "flag": TF[bad].tolist()}
    alphas = []
    for ball, w in zip(cover.elements, cover.words):
        alpha, _ = contraction_factor(ifs, ball, w, seed=seed)
        alphas.append(alpha)
    clauses["contraction"] = bool(all(a < 1 for a in alphas))
    if not clauses["contraction"] and counter is None:
        i = int(np.argmax(alphas))
        counter = {"clause": "contraction", "element": i, "word": word_str(cover.words[i]), "alpha": alphas[i]}
    density_ok = True
    for i in range(len(TX)):
        best = orbit_density(ifs, TX[i], TF[i], TX, TF, delta, horizon, node_budget)
        miss = np.flatnonzero(best >= delta)
        if miss.size:
            density_ok = False
            if counter is None:
                j = int(miss[0])
                counter = {
                    "clause": "density",
                    "start_base": TX[i].tolist(),
                    "start_flag": TF[i].tolist(),
                    "target_base": TX[j].tolist(),
                    "target_flag": TF[j].tolist(),
                    "distance": float(best[j]),
                    "reason": "horizon exhausted",
                }
            break
    clauses["density"] = density_ok
    failing = [k for k, v in clauses.items() if not v]
    alphas = [a if math.isfinite(a) else None for a in alphas]
    return MinimalityVerdict(not failing, clauses, alphas, failing, counter, horizon, len(TX), len(TX))


def default_cover(ifs, lebesgue, records, seed=0):
    """Cover by balls around attracting periodic points of the given records.

    Each record contributes its fixed state and its word.  The common
    radius is the mesh covering radius of the centres plus the Lebesgue
    number (plus a little), so the Lebesgue clause holds by construction.
    """
    recs = [r for r in records if r.attracting]
    if not recs:
        raise ValueError("no attracting periodic records to build a cover from")
    X, F, _ = bundle_mesh(ifs, lebesgue / 4, seed)
    cover_r = np.full(len(X), np.inf)
    for r in recs:
        cover_r = np.minimum(cover_r, state_distance(X, F, r.base, r.flag.frame))
    radius = float(np.max(cover_r)) + lebesgue / 4 + lebesgue * 1.01
    balls = [Ball(r.base, r.flag.frame, radius) for r in recs]
    return CoverSpec(balls, [r.word for r in recs], lebesgue)


__all__ = [
    "Ball",
    "CoverSpec",
    "GroupTour",
    "MinimalityVerdict",
    "TourReport",
    "bundle_jacobian",
    "bundle_mesh",
    "check_minimality_criterion",
    "contraction_factor",
    "default_cover",
    "go_home",
    "group_tour",
    "local_expansion",
    "tour_and_go_home",
]
