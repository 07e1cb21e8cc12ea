import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagifs.cocycle import lyapunov_vector_of_periodic
from flagifs.errors import NotReached
from flagifs.flags import Flag, derivative_from_triangular, qr_positive
from flagifs.ifs import IFS, GeneratorMap, flag_distance
from flagifs.minimality import (
    Ball,
    CoverSpec,
    ball_samples,
    bundle_jacobian,
    check_minimality_criterion,
    default_cover,
    depth_for,
    flag_mesh,
    go_home,
    group_tour,
    local_expansion,
    run_word,
    tour_and_go_home,
    verify_density,
)

from oracles import fd_flag_derivative, symbolic_distance


def circle_ifs():
    rot = GeneratorMap.torus([[1]], [0.3])
    pull = GeneratorMap.torus([[1]], None, [{"amplitude": -0.5 / (2 * math.pi), "freq": (1,), "phase": 0.0,
                                             "direction": (1.0,)}])
    return IFS([rot, pull])


def small_linear(ell):
    mats = [np.diag([0.6, 0.3]), [[0.8, -0.6], [0.6, 0.8]], np.diag([0.4, 1.5]), [[1.0, 0.5], [0.0, 1.0]]]
    return IFS([GeneratorMap.linear(m) for m in mats[:ell]])


def brute_go_home(ifs, target, x, frame, kmax):
    for k in range(kmax + 1):
        for w in itertools.product(range(ifs.ell), repeat=k):
            X, F = run_word(ifs, w, x, frame)
            if target.contains(X[-1:], F[-1:])[0]:
                return w
    return None


def test_circle_go_home():
    ifs = circle_ifs()
    target = Ball([0.25], [[1.0]], 0.05)
    start = (np.array([0.5]), Flag.canonical(1))
    w = go_home(ifs, target, start, 10)
    assert w == brute_go_home(ifs, target, start[0], start[1].frame, 10)
    X, F = run_word(ifs, w, start[0], start[1].frame)
    assert target.contains(X[-1:], F[-1:])[0]


def test_go_home_not_reached():
    ifs = IFS([GeneratorMap.linear(np.eye(2))])
    target = Ball([], Flag.from_angle(1.0).frame, 0.1)
    with pytest.raises(NotReached):
        go_home(ifs, target, (np.zeros(0), Flag.canonical(2)), 5)
    with pytest.raises(ValueError):
        go_home(ifs, target, (np.zeros(0), Flag.canonical(2)), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.floats(0, math.pi), st.floats(0, math.pi), st.floats(0.05, 0.5))
def test_go_home_matches_exhaustive_search(ell, a, b, r):
    ifs = small_linear(ell)
    kmax = 8 if ell <= 3 else 6
    target = Ball([], Flag.from_angle(a).frame, r)
    F0 = Flag.from_angle(b)
    expected = brute_go_home(ifs, target, np.zeros(0), F0.frame, kmax)
    if expected is None:
        with pytest.raises(NotReached):
            go_home(ifs, target, (np.zeros(0), F0), kmax)
    else:
        assert go_home(ifs, target, (np.zeros(0), F0), kmax) == expected


def test_depth_for():
    assert depth_for(1.0) == 0
    assert depth_for(0.5) == 1
    assert depth_for(0.3) == 2
    assert depth_for(0.25) == 2
    with pytest.raises(ValueError):
        depth_for(0)


def test_flag_mesh_d2_is_dense():
    frames, proven = flag_mesh(2, 0.1)
    assert proven
    rng = np.random.default_rng(0)
    for _ in range(500):
        F = Flag.random(2, rng).frame
        assert np.min(flag_distance(frames, F)) < 0.1


def test_flag_mesh_d3_sampled():
    frames, proven = flag_mesh(3, 0.8, seed=1)
    assert not proven
    rng = np.random.default_rng(2)
    probes = [Flag.random(3, rng).frame for _ in range(200)]
    hits = sum(np.min(flag_distance(frames, F)) < 0.8 for F in probes)
    assert hits >= 195


def test_ball_validates_and_samples():
    with pytest.raises(ValueError):
        Ball([], np.eye(2), -1.0)
    ifs = IFS([GeneratorMap.torus([[2, 1], [1, 1]])])
    B = Ball([0.5, 0.5], Flag.from_angle(0.3).frame, 0.05)
    X, F = ball_samples(ifs, B, 100, np.random.default_rng(3))
    assert len(X) == 101
    assert np.allclose(X[0], B.base) and np.allclose(F[0], B.frame)
    assert np.all(B.contains(X, F))


def test_bundle_jacobian_linear_matches_fd():
    ifs = small_linear(4)
    rng = np.random.default_rng(4)
    for _ in range(5):
        F = Flag.random(2, rng)
        w = tuple(rng.integers(0, 4, 3))
        L = np.eye(2)
        for s in w:
            L = ifs.generators[s].matrix @ L
        J = bundle_jacobian(ifs, w, np.zeros(0), F.frame)
        assert np.linalg.norm(J, 2) == pytest.approx(np.linalg.norm(fd_flag_derivative(L, F.frame), 2), rel=1e-6)


def test_bundle_jacobian_torus_singular_values():
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    ifs = IFS([GeneratorMap.torus(A, [0.1, 0.2])])
    F = Flag.from_angle(0.7)
    J = bundle_jacobian(ifs, (0,), [0.3, 0.4], F.frame)
    _, r = qr_positive(A @ F.frame)
    expected = np.sort(np.concatenate([np.linalg.svd(A, compute_uv=False),
                                       np.abs(np.diag(derivative_from_triangular(r)))]))
    assert np.allclose(np.sort(np.linalg.svd(J, compute_uv=False)), expected, rtol=1e-5)
    assert local_expansion(ifs, (0,), [0.3, 0.4], F.frame) == pytest.approx(expected[-1], rel=1e-5)


@pytest.fixture(scope="module")
def linear_tour(linear_d2):
    rec = lyapunov_vector_of_periodic(linear_d2, (0,))
    target = Ball(rec.base, rec.flag.frame, 0.1)
    start = (np.zeros(0), Flag.from_angle(1.0))
    return target, start, tour_and_go_home(linear_d2, 0.3, target, start, seed=0)


def test_tour_dense_and_lands(linear_tour):
    _, _, rep = linear_tour
    assert rep.dense and rep.endpoint_in_target
    assert rep.density_kind == "sampled"
    assert rep.depth == 2
    assert len(rep.witnesses) == rep.pairs
    assert all(dist < 0.3 for _, _, dist in rep.witnesses)


def test_tour_replay_oracle(linear_d2, linear_tour):
    from flagifs.minimality import tour_pairs

    target, start, rep = linear_tour
    X, F, pairs, _ = tour_pairs(linear_d2, rep.delta, rep.depth, seed=0)
    Xs, Fs = run_word(linear_d2, rep.word, start[0], start[1].frame)
    m = rep.depth
    w = rep.word
    for i, b in pairs:
        best = math.inf
        for t in range(m, len(w) - m):
            sym = symbolic_distance(w[t - m:t + m + 1], b, m)
            cols = [min(np.sum((Fs[t][:, c] - F[i][:, c]) ** 2), np.sum((Fs[t][:, c] + F[i][:, c]) ** 2))
                    for c in range(2)]
            best = min(best, max(sym, math.sqrt(sum(cols))))
        assert best < rep.delta
    # extra history in front of the word cannot break density
    X2, F2, pairs2, _ = tour_pairs(linear_d2, rep.delta, m, seed=0)
    _, ok = verify_density(linear_d2, rep.word, start, X2, F2, pairs2, rep.delta, m, past=(1, 2, 3))
    assert ok


def test_tour_larger_than_diameter_is_go_home(linear_d2):
    rec = lyapunov_vector_of_periodic(linear_d2, (0,))
    target = Ball(rec.base, rec.flag.frame, 0.1)
    rep = tour_and_go_home(linear_d2, 5.0, target, (np.zeros(0), Flag.from_angle(1.0)))
    assert rep.dense and rep.certified and rep.endpoint_in_target and rep.pairs == 0


def test_group_tour_radius_sampling_oracle(linear_d2):
    rec = lyapunov_vector_of_periodic(linear_d2, (0,))
    U = Ball(rec.base, rec.flag.frame, 0.1)
    B = Ball([], Flag.from_angle(1.0).frame, 0.2)
    gt = group_tour(linear_d2, 0.3, U, B, seed=1)
    assert 0 < gt.rho <= B.radius
    assert gt.report.dense and gt.report.endpoint_in_target
    Xc, Fc = run_word(linear_d2, gt.word, B.base, B.frame)
    rng = np.random.default_rng(99)
    X, F = ball_samples(linear_d2, Ball(B.base, B.frame, gt.rho), 200, rng)
    for x, f in zip(X, F):
        Xs, Fs = run_word(linear_d2, gt.word, x, f)
        assert np.max(flag_distance(Fs, Fc)) < 0.3 / 4
        assert U.contains(Xs[-1:], Fs[-1:])[0]


def test_minimality_positive_on_linear_d2(linear_d2):
    recs = [lyapunov_vector_of_periodic(linear_d2, (s,)) for s in (0, 3, 4, 5, 6, 7, 8, 9, 10)]
    cover = default_cover(linear_d2, 0.1, [r for r in recs if r.attracting])
    v = check_minimality_criterion(linear_d2, cover, 6)
    assert v.positive and v.kind == "PositivelyMinimalEvidence"
    assert all(a < 1 for a in v.alphas)


def test_minimality_counterexample_single_contraction():
    ifs = IFS([GeneratorMap.linear(np.diag([0.6, 0.3]))])
    rec = lyapunov_vector_of_periodic(ifs, (0,))
    cover = default_cover(ifs, 0.2, [rec])
    v = check_minimality_criterion(ifs, cover, 4)
    assert not v.positive
    assert "density" in v.failing
    assert v.counterexample["clause"] in ("contraction", "density")


def test_lebesgue_clause_failure():
    ifs = small_linear(2)
    cover = CoverSpec([Ball([], np.eye(2), 0.1)], [(0,)], 0.2)
    v = check_minimality_criterion(ifs, cover, 2)
    assert not v.clauses["lebesgue"]
    assert v.counterexample["clause"] == "lebesgue"
