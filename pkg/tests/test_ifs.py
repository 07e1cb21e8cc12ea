import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagifs.errors import ConfigError, DimensionMismatch, ExhaustedFuture
from flagifs.flags import Flag, flag_map, qr_of
from flagifs.ifs import (
    IFS,
    GeneratorMap,
    SkewPoint,
    check_word,
    derivative_along,
    eval_word,
    flag_distance,
    load_ifs,
    parse_word,
    skew_distance,
    skew_step,
    symbolic_distance,
    torus_distance,
    word_str,
)

CAT = [[2, 1], [1, 1]]
TERM = {"amplitude": 0.01, "freq": (1, 0), "phase": 0.25, "direction": (0.0, 1.0)}


def torus_ifs():
    return IFS([GeneratorMap.torus(CAT, [0.1, 0.2], [TERM]), GeneratorMap.torus([[1, 1], [0, 1]], [0.5, 0.0])])


def test_torus_jacobian_matches_finite_differences():
    g = torus_ifs().generators[0]
    rng = np.random.default_rng(0)
    h = 1e-6
    for x in rng.uniform(0.1, 0.9, (10, 2)):
        fd = np.stack([(g.apply(x + h * e) - g.apply(x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
        assert np.allclose(g.jacobian(x), fd, atol=1e-6)


def test_torus_apply_stays_in_unit_cube():
    g = torus_ifs().generators[0]
    X = np.random.default_rng(1).uniform(0, 1, (1000, 2))
    Y = g.apply(X)
    assert np.all((Y >= 0) & (Y < 1))


def test_torus_rejects_large_perturbation():
    with pytest.raises(ConfigError):
        GeneratorMap.torus(CAT, None, [dict(TERM, amplitude=0.5)])


def test_torus_rejects_non_integer_and_non_unimodular():
    with pytest.raises(ConfigError):
        GeneratorMap.torus([[1.5, 0], [0, 1]])
    with pytest.raises(ConfigError):
        GeneratorMap.torus([[2, 0], [0, 1]])


def test_linear_rejects_singular():
    with pytest.raises(ConfigError):
        GeneratorMap.linear([[1.0, 2.0], [2.0, 4.0]])


def test_derivative_bound_linear():
    ifs = IFS([GeneratorMap.linear(np.diag([0.6, 0.3])), GeneratorMap.linear(np.diag([2.0, 1.0]))])
    assert ifs.C == pytest.approx(np.log(1 / 0.3))


def test_mixed_generators_rejected():
    with pytest.raises(ConfigError):
        IFS([GeneratorMap.linear(np.eye(2)), GeneratorMap.torus(CAT)])
    with pytest.raises(ConfigError):
        IFS([])


def test_words_round_trip():
    assert word_str((0, 1, 2)) == "012"
    assert parse_word("012") == (0, 1, 2)
    assert word_str((3, 11)) == "3,11"
    assert parse_word("3,11") == (3, 11)
    with pytest.raises(ValueError):
        check_word(torus_ifs(), (0, 2))


def test_derivative_along_matches_product():
    ifs = torus_ifs()
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, 2)
    F = Flag.random(2, rng)
    w = (0, 1, 1, 0, 0)
    J = np.eye(2)
    y = x
    for s in w:
        J = ifs.generators[s].jacobian(y) @ J
        y = ifs.generators[s].apply(y)
    G, P, logd = derivative_along(ifs, w, x, F)
    G0, R0 = qr_of(J, F)
    assert np.allclose(G.frame, G0.frame, atol=1e-10)
    assert np.allclose(P, R0, rtol=1e-9)
    assert np.allclose(logd, np.log(np.diag(R0)), atol=1e-10)
    assert np.allclose(eval_word(ifs, w, x), y)


def test_skew_step_and_exhaustion():
    ifs = torus_ifs()
    p = SkewPoint((), (1, 0), [0.2, 0.3], Flag.canonical(2))
    q = skew_step(ifs, p)
    assert q.past == (1,) and q.future == (0,)
    assert np.allclose(q.flag.frame, flag_map(ifs.generators[1].jacobian(p.base), p.flag).frame)
    q = skew_step(ifs, skew_step(ifs, q, refill=lambda: 1), keep_depth=True)
    assert q.past == (0, 1) and q.future == ()
    with pytest.raises(ExhaustedFuture):
        skew_step(ifs, q)


def test_skew_point_validates_base():
    with pytest.raises(ValueError):
        SkewPoint((), (0,), [1.0, 0.0], Flag.canonical(2))


def test_symbolic_distance_first_mismatch():
    F = Flag.canonical(2)
    a = SkewPoint((0, 0, 0), (0, 0, 0, 0), [], F)
    b = SkewPoint((1, 0, 0), (0, 0, 0, 0), [], F)
    assert symbolic_distance(a, b) == 2.0**-3
    c = SkewPoint((0, 0, 0), (0, 1, 0, 0), [], F)
    assert symbolic_distance(a, c) == 0.5
    assert symbolic_distance(a, a) == 2.0**-4
    assert skew_distance(a, SkewPoint((0, 0, 0), (1, 0, 0, 0), [], F)) == 1.0


def test_skew_distance_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        skew_distance(SkewPoint((), (0,), [], Flag.canonical(2)), SkewPoint((), (0,), [], Flag.canonical(3)))


def test_torus_distance_wraps():
    assert torus_distance([0.95, 0.5], [0.05, 0.5]) == pytest.approx(0.1)
    assert torus_distance(np.zeros((3, 0)), np.zeros(0)).shape == (3,)


def test_flag_distance_ignores_column_signs():
    rng = np.random.default_rng(3)
    F = Flag.random(3, rng).frame
    assert flag_distance(F, F * np.array([1, -1, -1])) == pytest.approx(0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flag_distance_is_a_metric_sample(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (Flag.random(3, rng).frame for _ in range(3))
    assert flag_distance(A, B) == pytest.approx(flag_distance(B, A))
    assert flag_distance(A, C) <= flag_distance(A, B) + flag_distance(B, C) + 1e-12


TOML_OK = """
[ifs]
mode = "linear"
dim = 2

[[ifs.generators]]
matrix = [[0.5, 0.0], [0.0, 0.25]]
"""


def test_load_ifs_from_text_and_json():
    ifs = load_ifs(TOML_OK)
    assert ifs.mode == "linear" and ifs.ell == 1
    ifs = load_ifs('{"mode": "linear", "dim": 1, "generators": [{"matrix": [[2.0]]}]}')
    assert ifs.dim == 1


def test_config_error_reports_generator_line():
    text = TOML_OK + """
[[ifs.generators]]
matrix = [[1.0, 2.0], [2.0, 4.0]]
"""
    with pytest.raises(ConfigError) as e:
        load_ifs(text)
    assert e.value.where == "ifs.generators[1].matrix"
    assert e.value.line == 10


def test_config_error_reports_parse_line():
    with pytest.raises(ConfigError) as e:
        load_ifs("[ifs]\nmode = \n")
    assert e.value.line == 2


def test_config_error_bad_mode_and_shape():
    with pytest.raises(ConfigError) as e:
        load_ifs(TOML_OK.replace('"linear"', '"affine"'))
    assert e.value.where == "mode" and e.value.line == 3
    with pytest.raises(ConfigError) as e:
        load_ifs(TOML_OK.replace("[[0.5, 0.0], [0.0, 0.25]]", "[[0.5]]"))
    assert "2x2" in str(e.value)
