import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_ml
from otfs_ras.ddcore import DDGrid, make_phase_rotation
from otfs_ras.detect import (
    BPSK,
    QAM16,
    CandidateCapExceeded,
    candidate_labels,
    demap_symbols,
    get_alphabet,
    labels_to_bits,
    map_bits,
    ml_detect,
    ml_detect_batch,
    mmse_detect,
    mmse_detect_batch,
    mmse_estimate_batch,
)


def _crand(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.mark.parametrize("alph", [BPSK, QAM16])
def test_unit_average_energy(alph):
    assert np.mean(np.abs(alph.points) ** 2) == pytest.approx(1.0)


def test_bpsk_convention():
    np.testing.assert_array_equal(map_bits(np.array([0, 1]), BPSK), [1.0, -1.0])


def test_alphabet_lookup():
    assert get_alphabet("16-qam") is QAM16
    assert get_alphabet("bpsk") is BPSK
    with pytest.raises(ValueError):
        get_alphabet("8PSK")


@pytest.mark.parametrize("alph", [BPSK, QAM16])
def test_bit_round_trip(alph):
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, (10_000, 4 * alph.bits_per_symbol))
    np.testing.assert_array_equal(demap_symbols(map_bits(bits, alph), alph), bits)


def test_map_bits_rejects_partial_symbols():
    with pytest.raises(ValueError):
        map_bits(np.zeros(3, int), QAM16)


def test_qam16_gray_adjacency():
    pts = QAM16.points * np.sqrt(10)
    labels = QAM16.labels
    dmin = 2.0
    pairs = 0
    for a, b in itertools.combinations(range(16), 2):
        if abs(abs(pts[a] - pts[b]) - dmin) < 1e-9:
            pairs += 1
            assert np.sum(labels[a] != labels[b]) == 1
    assert pairs == 24  # 4x4 grid: 12 horizontal + 12 vertical neighbours


def test_candidate_count():
    assert len(candidate_labels(BPSK, 4)) == 16
    assert len(np.unique(candidate_labels(QAM16, 2), axis=0)) == 256


def test_cap_exceeded():
    H = np.eye(6)
    with pytest.raises(CandidateCapExceeded):
        ml_detect(np.zeros(6), H, QAM16, cap=4096)
    with pytest.raises(CandidateCapExceeded):
        ml_detect_batch(np.zeros((1, 6)), H[None], QAM16, cap=4096)


@pytest.mark.parametrize("alph", [BPSK, QAM16])
def test_noiseless_recovery(alph):
    rng = np.random.default_rng(1)
    for _ in range(20):
        H = _crand(rng, (6, 3))
        lab = rng.integers(0, alph.size, 3)
        res = ml_detect(H @ alph.points[lab], H, alph)
        np.testing.assert_array_equal(res.symbols, alph.points[lab])
        assert res.bits.shape == (3 * alph.bits_per_symbol,)
        assert res.metric == pytest.approx(0.0, abs=1e-20)


def test_ml_matches_independent_detector_at_10db():
    rng = np.random.default_rng(2)
    n0 = 10 ** (-1.0)
    g = DDGrid(2, 2)
    phi = make_phase_rotation(g)
    errors_pkg = errors_ref = 0
    for _ in range(1000):
        H = _crand(rng, (4, 4))
        lab = rng.integers(0, 2, 4)
        y = H @ (phi * BPSK.points[lab]) + np.sqrt(n0) * _crand(rng, 4)
        got = ml_detect(y, H, BPSK, phase_rotation=phi)
        ref = brute_force_ml(y, H, BPSK.points, phi)
        np.testing.assert_array_equal(got.symbols, BPSK.points[ref])
        errors_pkg += int(np.sum(got.symbols != BPSK.points[lab]))
        errors_ref += int(np.sum(ref != lab))
    assert errors_pkg == errors_ref


@pytest.mark.parametrize("alph,n", [(BPSK, 4), (BPSK, 8), (QAM16, 2), (QAM16, 4)])
@pytest.mark.parametrize("rows", [1, 2])
def test_batch_methods_agree_with_brute_force(alph, n, rows):
    rng = np.random.default_rng(n * 7 + rows)
    B = 60
    m = rows * n
    H = _crand(rng, (B, m, n))
    lab = rng.integers(0, alph.size, (B, n))
    Y = np.einsum("bij,bj->bi", H, alph.points[lab]) + 0.6 * _crand(rng, (B, m))
    phi = np.exp(1j * np.arange(n))
    ex = ml_detect_batch(Y, H, alph, phi, method="exhaustive")
    sp = ml_detect_batch(Y, H, alph, phi, method="sphere")
    np.testing.assert_array_equal(ex, sp)
    for b in range(0, B, 12):
        np.testing.assert_array_equal(ex[b], brute_force_ml(Y[b], H[b], alph.points, phi))


def test_sphere_search_handles_wide_systems():
    rng = np.random.default_rng(4)
    H = _crand(rng, (40, 2, 4))
    Y = _crand(rng, (40, 2))
    np.testing.assert_array_equal(
        ml_detect_batch(Y, H, BPSK, method="sphere"),
        ml_detect_batch(Y, H, BPSK, method="exhaustive"),
    )


def test_unknown_method():
    with pytest.raises(ValueError):
        ml_detect_batch(np.zeros((1, 2)), np.eye(2)[None], BPSK, method="greedy")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_ml_invariant_to_common_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    H = _crand(rng, (4, 3))
    y = _crand(rng, 4)
    a = ml_detect(y, H, QAM16).symbols
    b = ml_detect(scale * y, scale * H, QAM16).symbols
    np.testing.assert_array_equal(a, b)


def test_rotated_noiseless_recovery():
    g = DDGrid(2, 2)
    phi = make_phase_rotation(g)
    rng = np.random.default_rng(6)
    H = _crand(rng, (4, 4))
    lab = rng.integers(0, 2, 4)
    y = H @ (phi * BPSK.points[lab])
    np.testing.assert_array_equal(ml_detect(y, H, BPSK, phase_rotation=phi).symbols, BPSK.points[lab])
    np.testing.assert_array_equal(mmse_detect(y, H, 1e-12, BPSK, phase_rotation=phi).symbols, BPSK.points[lab])


def test_mmse_sign_slicer():
    res = mmse_detect(np.array([0.3, -0.2]), np.eye(2), 1e-12, BPSK)
    np.testing.assert_array_equal(res.symbols, [1, -1])
    np.testing.assert_array_equal(res.bits, [0, 1])


def test_mmse_zero_forcing_limit():
    rng = np.random.default_rng(7)
    H = _crand(rng, (5, 5))
    y = _crand(rng, 5)
    zf = np.linalg.solve(H, y)
    np.testing.assert_allclose(mmse_estimate_batch(y[None], H[None], 1e-12)[0], zf, atol=1e-6)


def test_mmse_orthogonal_noiseless():
    rng = np.random.default_rng(8)
    Q, _ = np.linalg.qr(_crand(rng, (8, 8)))
    lab = rng.integers(0, 16, 8)
    y = Q @ QAM16.points[lab]
    np.testing.assert_array_equal(mmse_detect_batch(y[None], Q[None], 1e-12, QAM16)[0], lab)


def test_mmse_never_beats_ml():
    rng = np.random.default_rng(9)
    B, n = 20_000, 4
    n0 = 10 ** (-0.8)
    H = _crand(rng, (B, n, n))
    lab = rng.integers(0, 2, (B, n))
    Y = np.einsum("bij,bj->bi", H, BPSK.points[lab]) + np.sqrt(n0) * _crand(rng, (B, n))
    ml = ml_detect_batch(Y, H, BPSK)
    mm = mmse_detect_batch(Y, H, n0, BPSK)
    assert np.sum(ml != lab) <= np.sum(mm != lab)
    assert np.sum(ml != lab) > 0


def test_labels_to_bits_layout():
    np.testing.assert_array_equal(labels_to_bits(np.array([[5, 10]]), QAM16), [[0, 1, 0, 1, 1, 0, 1, 0]])
