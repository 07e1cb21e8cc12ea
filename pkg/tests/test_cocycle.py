import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagifs.cocycle import (
    FurstenbergVector,
    LyapunovVector,
    flag_cocycle_exponents,
    flag_cocycle_growth,
    furstenberg_estimate,
    in_cone,
    least_gap,
    lyapunov_vector_of_periodic,
    offdiag_bound_N,
    triangular_exponents,
)
from flagifs.errors import ExhaustedFuture, ModuliCollision, NotInCone
from flagifs.flags import Flag
from flagifs.ifs import IFS, GeneratorMap, SkewPoint, derivative_along


def diag_ifs(*diags):
    return IFS([GeneratorMap.linear(np.diag(d)) for d in diags])


def compound(A, k):
    """k-th exterior power of A in the lexicographic basis of k-subsets."""
    idx = list(itertools.combinations(range(A.shape[0]), k))
    return np.array([[np.linalg.det(A[np.ix_(r, c)]) for c in idx] for r in idx])


def test_single_generator_exact():
    a, b = 0.7, -0.4
    ifs = diag_ifs([math.exp(a), math.exp(b)])
    start = SkewPoint((), (), [], Flag.canonical(2))
    fv, end = furstenberg_estimate(ifs, itertools.repeat(0), start, 37)
    assert fv.values == pytest.approx((a, b), abs=1e-14)
    assert end.past == (0,) * 37


def test_random_start_attracted_to_stable_flag():
    a, b = 0.7, -0.4
    ifs = diag_ifs([math.exp(a), math.exp(b)])
    start = SkewPoint((), (), [], Flag.random(2, np.random.default_rng(0)))
    fv, _ = furstenberg_estimate(ifs, itertools.repeat(0), start, 10_000)
    assert np.allclose(fv.values, (a, b), atol=1e-2)


def test_estimate_matches_derivative_along():
    ifs = IFS([GeneratorMap.torus([[2, 1], [1, 1]], [0.1, 0.3]), GeneratorMap.torus([[1, 1], [0, 1]], [0.2, 0.0])])
    rng = np.random.default_rng(1)
    w = tuple(rng.integers(0, 2, 300))
    F = Flag.random(2, rng)
    start = SkewPoint((), w, [0.3, 0.6], F)
    fv, end = furstenberg_estimate(ifs, None, start, len(w))
    G, _, logd = derivative_along(ifs, w, start.base, F)
    assert np.allclose(fv.as_array(), logd / len(w), atol=1e-13)
    assert np.allclose(end.flag.frame, G.frame)
    assert end.future == ()


def test_estimate_errors():
    ifs = diag_ifs([2.0, 1.0])
    start = SkewPoint((), (0, 0), [], Flag.canonical(2))
    with pytest.raises(ExhaustedFuture):
        furstenberg_estimate(ifs, None, start, 3)
    with pytest.raises(ExhaustedFuture):
        furstenberg_estimate(ifs, [0], start, 2)
    with pytest.raises(ValueError):
        furstenberg_estimate(ifs, None, start, 0)


def test_running_averages_end_at_estimate():
    ifs = diag_ifs([2.0, 0.5], [0.5, 3.0])
    start = SkewPoint((), (), [], Flag.canonical(2))
    syms = np.random.default_rng(2).integers(0, 2, 500)
    fv, _, run = furstenberg_estimate(ifs, syms, start, 500, running=True)
    assert run.shape == (500, 2)
    assert np.allclose(run[-1], fv.as_array())


def test_vectors_validate():
    with pytest.raises(ValueError):
        LyapunovVector((0.1, 0.2))
    with pytest.raises(ValueError):
        FurstenbergVector((float("nan"), 0.0), 1)


def test_cone_and_gap():
    assert in_cone((-0.1, -0.5))
    assert not in_cone((0.0, -0.5))
    assert not in_cone((-0.5, -0.5))
    assert least_gap((-0.5108, -1.2040)) == pytest.approx(0.5108)
    assert least_gap((-1.0, -1.2)) == pytest.approx(0.2)


def test_flag_cocycle_exponents_order():
    assert flag_cocycle_exponents((0.0, 0.0, 0.0)) == [0.0, 0.0, 0.0]
    assert flag_cocycle_exponents((3.0, 2.0, 0.5)) == [-2.5, -1.0, -1.5]
    assert flag_cocycle_exponents((0.7, -0.4)) == pytest.approx([-1.1])


def test_periodic_record_diag():
    rec = lyapunov_vector_of_periodic(diag_ifs([0.6, 0.3]), (0,))
    assert rec.lam.values == pytest.approx((-0.5108256237659907, -1.2039728043259361), abs=1e-12)
    assert rec.gamma == pytest.approx(0.5108256237659907, abs=1e-12)
    assert rec.in_cone() and rec.attracting
    assert rec.log_rho_base is None
    assert rec.log_rho_flag == pytest.approx(math.log(0.5))


def test_periodic_record_torus_circle():
    g = GeneratorMap.torus([[1]], None, [{"amplitude": -0.8 / (2 * math.pi), "freq": (1,), "phase": 0.0,
                                          "direction": (1.0,)}])
    rec = lyapunov_vector_of_periodic(IFS([g]), (0,))
    assert rec.base == pytest.approx([0.0], abs=1e-12)
    assert rec.lam.values == pytest.approx((math.log(0.2),), abs=1e-9)
    assert rec.attracting


def test_periodic_record_cyclic_invariance():
    ifs = IFS([GeneratorMap.linear([[0.6, 0.2], [0.1, 0.3]]), GeneratorMap.linear([[0.5, -0.1], [0.3, 0.4]])])
    a = lyapunov_vector_of_periodic(ifs, (0, 1))
    b = lyapunov_vector_of_periodic(ifs, (1, 0))
    assert np.allclose(a.lam.values, b.lam.values, atol=1e-12)


def test_periodic_record_errors():
    with pytest.raises(ModuliCollision):
        lyapunov_vector_of_periodic(diag_ifs([0.5, 0.5]), (0,))
    with pytest.raises(NotInCone):
        lyapunov_vector_of_periodic(diag_ifs([2.0, 0.5]), (0,), require_cone=True)


def test_permutation_law_at_stable_flag():
    ifs = IFS([GeneratorMap.linear([[0.6, 0.2], [0.1, 0.3]]), GeneratorMap.linear([[0.5, -0.1], [0.3, 0.4]])])
    w = (0, 1, 1)
    rec = lyapunov_vector_of_periodic(ifs, w)
    start = SkewPoint((), (), [], rec.flag)
    fv, _ = furstenberg_estimate(ifs, itertools.cycle(w), start, 3 * 50)
    assert np.allclose(fv.values, rec.lam.values, atol=1e-8)
    # repetition of the word does not change the estimate
    fv1, _ = furstenberg_estimate(ifs, itertools.cycle(w), start, 3)
    assert np.allclose(fv.values, fv1.values, atol=1e-12)


def test_triangular_exponents_trivial():
    assert triangular_exponents([np.eye(3)] * 4) == [0.0, 0.0, 0.0]
    Rs = [np.diag([2.0, 1.0]), np.diag([0.5, 1.0])] * 10
    assert triangular_exponents(Rs) == pytest.approx([0.0, 0.0])


def test_triangular_exponents_against_exterior_powers():
    rng = np.random.default_rng(3)
    base = np.array([0.4, 0.1, -0.3])
    n = 500
    Rs = []
    for _ in range(n):
        R = np.triu(rng.uniform(-1, 1, (3, 3)), 1)
        R[np.diag_indices(3)] = np.exp(base + rng.uniform(-0.03, 0.03, 3)) * rng.choice([-1, 1], 3)
        Rs.append(R)
    lam = triangular_exponents(Rs)
    sums = []
    for k in (1, 2, 3):
        P = np.eye(math.comb(3, k))
        total = 0.0
        for R in Rs:
            P = compound(R, k) @ P
            s = np.linalg.norm(P, 2)
            total += math.log(s)
            P /= s
        sums.append(total / n)
    oracle = np.diff([0.0] + sums)
    assert np.allclose(lam, oracle, atol=0.05)


def test_exponent_difference_law_attracting_and_repelling():
    a, b = (0.3, -0.5), (0.1, -0.2)
    ifs = diag_ifs(np.exp(a), np.exp(b))
    syms = np.random.default_rng(4).integers(0, 2, 20_000)
    for frame in (np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])):
        start = SkewPoint((), (), [], Flag(frame))
        fv, _ = furstenberg_estimate(ifs, syms, start, len(syms))
        growth = flag_cocycle_growth(ifs, syms, start, len(syms))
        assert growth == pytest.approx(max(flag_cocycle_exponents(fv.values)), abs=0.05)


def test_offdiag_bound_values():
    # scan oracle with exact binomials, evaluated in log space
    def oracle(d, C, lam, eta):
        last = 0
        for n in range(1, 3000):
            lhs = math.log(d * d * C ** (2 * (d - 1)) * max(math.comb(n, k) for k in range(min(d - 1, n) + 1)))
            if lhs > eta * n:
                last = n
        return last + 1

    assert offdiag_bound_N(1, 2.0, 0.0, 0.5) == 1
    assert offdiag_bound_N(2, 2.0, 0.0, 0.5) == 11
    assert offdiag_bound_N(3, 2.0, -0.1, 0.2) == 63
    for args in [(2, 3.0, -1.0, 0.05), (4, 1.5, 0.3, 0.1), (3, 5.0, 0.0, 0.3)]:
        assert offdiag_bound_N(*args) == oracle(*args)
    with pytest.raises(ValueError):
        offdiag_bound_N(2, 1.0, 0.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.floats(1.1, 5.0), st.floats(0.05, 1.0), st.floats(0.01, 0.5))
def test_offdiag_bound_monotone(d, C, eta, extra):
    N = offdiag_bound_N(d, C, 0.0, eta)
    assert offdiag_bound_N(d, C, 0.0, eta + extra) <= N
    assert offdiag_bound_N(d, C + extra, 0.0, eta) >= N


def test_offdiag_bound_monte_carlo():
    d, C, lam, eta = 2, 2.0, 0.0, 0.5
    N = offdiag_bound_N(d, C, lam, eta)
    rng = np.random.default_rng(5)
    for _ in range(200):
        P = np.eye(d)
        for _ in range(N):
            R = np.triu(rng.choice([-C, C], (d, d)), 1)
            R[np.diag_indices(d)] = rng.uniform(1 / C, math.exp(lam), d) * rng.choice([-1, 1], d)
            P = R @ P
        assert np.linalg.norm(P, 2) <= math.exp((lam + eta) * N)
