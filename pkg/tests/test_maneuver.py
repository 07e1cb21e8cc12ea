import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagifs.errors import NotManeuverable
from flagifs.flags import Flag
from flagifs.ifs import IFS, GeneratorMap
from flagifs.maneuver import (
    MARGIN,
    certify_maneuverability,
    de_bruijn_binary,
    entropy_block_coverage,
    prescribe_word,
    sign_index,
    sign_vectors,
    theta_coding,
    zero_exponent_orbit,
)

from oracles import mgs_qr


def test_sign_vectors_and_index():
    T = sign_vectors(3)
    assert T.shape == (8, 3)
    assert all(sign_index(t) == k for k, t in enumerate(T))


def test_linear_d2_certificate_frozen(linear_d2, linear_cert):
    assert linear_d2.C == pytest.approx(1.2039728043259361, abs=1e-12)
    assert linear_cert.c_raw == pytest.approx(0.4440781307386212, abs=1e-10)
    assert linear_cert.c == pytest.approx(linear_cert.c_raw * (1 - MARGIN), abs=1e-12)
    assert 0 < linear_cert.c <= linear_cert.C


def test_linear_d2_margin_oracle(linear_d2, linear_cert):
    # recompute c_raw on the same angle grid with Gram-Schmidt
    n = linear_cert.mesh.angle_res
    best_over_cells = math.inf
    for k in range(n):
        phi = k * math.pi / n
        F = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        logs = [np.log(np.diag(mgs_qr(g.matrix @ F)[1])) for g in linear_d2.generators]
        for t in sign_vectors(2):
            best_over_cells = min(best_over_cells, max(float(np.min(t * l)) for l in logs))
    assert linear_cert.c_raw == pytest.approx(best_over_cells, abs=1e-12)


def test_witnesses_realise_margin(linear_d2, linear_cert):
    mesh = linear_cert.mesh
    for cell in range(0, mesh.size, 37):
        _, jf = mesh.split(cell)
        for t in sign_vectors(2):
            s = linear_cert.witness(cell, t)
            r = mgs_qr(linear_d2.generators[s].matrix @ mesh.flags[jf])[1]
            assert np.min(t * np.log(np.diag(r))) >= linear_cert.c_raw - 1e-12


def test_rotations_not_maneuverable():
    rot = IFS([GeneratorMap.linear([[0.0, -1.0], [1.0, 0.0]]), GeneratorMap.linear([[0.6, -0.8], [0.8, 0.6]])])
    with pytest.raises(NotManeuverable) as e:
        certify_maneuverability(rot)
    assert e.value.signs is not None


def test_diagonal_family_not_maneuverable():
    e = math.e
    ifs = IFS([GeneratorMap.linear(np.diag(v)) for v in ([e, e], [1 / e, 1 / e], [e, 1 / e], [1 / e, e])])
    # at the diagonal flag both hyperbolic maps expand the line, so signs (-, +) fail
    with pytest.raises(NotManeuverable):
        certify_maneuverability(ifs)


def test_prescribe_prefix_bound(linear_d2, linear_cert):
    chi = np.array([0.2, -0.1])
    tr = prescribe_word(linear_d2, linear_cert, (np.zeros(0), Flag.canonical(2)), chi, 0.1)
    assert tr.q == math.ceil(linear_d2.C / 0.1)
    assert len(tr.word) == tr.q
    assert np.all(np.abs(tr.deviations) <= linear_cert.C)
    assert np.all(np.abs(tr.average - chi) < 0.1)
    # deviations are consistent with the stored log-diagonals
    n = np.arange(tr.q + 1)[:, None]
    cum = np.vstack([np.zeros(2), np.cumsum(tr.logdiag, axis=0)])
    assert np.allclose(tr.deviations, n * chi - cum, atol=1e-12)


def test_prescribe_rejects_out_of_range(linear_d2, linear_cert):
    start = (np.zeros(0), Flag.canonical(2))
    with pytest.raises(ValueError):
        prescribe_word(linear_d2, linear_cert, start, [linear_cert.c * 1.01, 0.0], 0.1)
    with pytest.raises(ValueError):
        prescribe_word(linear_d2, linear_cert, start, [0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        prescribe_word(linear_d2, linear_cert, start, [0.0], 0.1)


@settings(max_examples=25, deadline=None)
@given(u=st.floats(-1, 1), v=st.floats(-1, 1), eta=st.floats(0.02, 0.5), seed=st.integers(0, 2**32 - 1))
def test_prescribe_property(linear_d2, linear_cert, u, v, eta, seed):
    chi = np.array([u, v]) * linear_cert.c
    F = Flag.random(2, np.random.default_rng(seed))
    tr = prescribe_word(linear_d2, linear_cert, (np.zeros(0), F), chi, eta)
    assert np.max(np.abs(tr.deviations)) <= linear_cert.C + 1e-12
    assert np.all(np.abs(tr.average - chi) <= linear_cert.C / tr.q + 1e-12)


def test_zero_orbit_bounded(bimaneuver_d2):
    certs = [certify_maneuverability(bimaneuver_d2.half(k)) for k in (0, 1)]
    theta = de_bruijn_binary(6) * 40
    orbit = zero_exponent_orbit(bimaneuver_d2, certs, theta, (np.zeros(0), Flag.canonical(2)))
    assert orbit.max_running <= 2 * bimaneuver_d2.C
    assert np.array_equal(theta_coding(orbit.symbols, bimaneuver_d2.ell), theta)
    assert entropy_block_coverage([orbit.symbols], 6, bimaneuver_d2.ell).complete


def test_zero_orbit_needs_even_alphabet(linear_d2, linear_cert):
    with pytest.raises(ValueError):
        zero_exponent_orbit(linear_d2, [linear_cert, linear_cert], [0, 1], (np.zeros(0), Flag.canonical(2)))


@pytest.mark.parametrize("k", [1, 2, 5, 8])
def test_de_bruijn_contains_every_block_once(k):
    s = de_bruijn_binary(k)
    assert len(s) == 2**k
    blocks = {tuple((s + s)[i:i + k]) for i in range(2**k)}
    assert len(blocks) == 2**k


def test_block_coverage_counts():
    cov = entropy_block_coverage([[0, 0, 1, 1]], 2, 2)
    assert (cov.covered, cov.total, cov.missing) == (3, 4, ["10"])
    with pytest.raises(ValueError):
        entropy_block_coverage([[0]], 13, 2)
