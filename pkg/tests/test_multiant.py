import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otfs_ras.channel import DDChannel, DDPath, gen_integer_channel
from otfs_ras.ddcore import DDGrid
from otfs_ras.multiant import (
    MimoChannel,
    assemble_selected_system,
    build_permutation,
    gen_mimo_channel,
    reversal_indices,
    select_antennas,
    selection_metric,
    stacked_symbol_matrix,
    stc_assemble,
    stc_encode,
    stc_receive,
    stc_symbol_matrix,
    tap_selection_metric,
)


def _const(grid, taps, gains):
    return DDChannel(tuple(DDPath.from_bins(g, a, b, grid) for g, (a, b) in zip(gains, taps)))


def _rand(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


# -- selection ---------------------------------------------------------------


def test_tap_metric_direct_sum():
    g = DDGrid(2, 2)
    ch = _const(g, [(0, 0), (1, 1)], [0.8, 0.6j])
    mimo = MimoChannel(((ch,),), g)
    assert tap_selection_metric(mimo, 0) == pytest.approx(1.0)
    assert selection_metric(mimo, 0) == pytest.approx(4.0)


def test_zero_channel_metric():
    g = DDGrid(2, 2)
    mimo = MimoChannel(((_const(g, [(0, 0)], [0.0]),),), g)
    assert selection_metric(mimo, 0) == 0.0


@settings(max_examples=30, deadline=None)
@given(
    n_r=st.integers(1, 4),
    n_t=st.integers(1, 2),
    P=st.sampled_from([1, 2, 4]),
    seed=st.integers(0, 2**31),
)
def test_frobenius_metric_is_mn_times_tap_metric(n_r, n_t, P, seed):
    g = DDGrid(2, 2)
    mimo = gen_mimo_channel(n_r, n_t, P, g, np.random.default_rng(seed))
    for i in range(n_r):
        brute = sum(np.sum(np.abs(mimo.block(i, j)) ** 2) for j in range(n_t))
        assert selection_metric(mimo, i) == pytest.approx(brute, rel=1e-12)
        assert selection_metric(mimo, i) == pytest.approx(g.MN * tap_selection_metric(mimo, i), rel=1e-12)
    for n_s in range(1, n_r + 1):
        full = select_antennas(mimo, n_s).selected
        taps = select_antennas([tap_selection_metric(mimo, i) for i in range(n_r)], n_s).selected
        assert full == taps


def test_select_top_two():
    assert select_antennas([0.2, 0.9, 0.5], 2).selected == (1, 2)


def test_select_all_antennas():
    assert select_antennas([3.0, 1.0, 2.0], 3).selected == (0, 1, 2)


def test_select_ties_go_to_lower_index():
    assert select_antennas([1.0, 1.0, 1.0], 1).selected == (0,)


def test_select_rejects_bad_ns():
    with pytest.raises(ValueError):
        select_antennas([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        select_antennas([1.0, 2.0], 0)


def test_mimo_underdetermined_warning():
    g = DDGrid(2, 2)
    mimo = gen_mimo_channel(3, 2, 1, g, np.random.default_rng(0))
    with pytest.warns(UserWarning):
        select_antennas(mimo, 1, mode="mimo")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        select_antennas(mimo, 2, mode="mimo")


def test_selection_frequency_is_uniform():
    rng = np.random.default_rng(5)
    counts = np.zeros(4)
    for _ in range(100_000):
        gains = rng.standard_normal((4, 2)) ** 2 + rng.standard_normal((4, 2)) ** 2
        counts[select_antennas(gains.sum(axis=1), 1).selected[0]] += 1
    np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.01)


def test_selected_have_largest_metrics():
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = rng.exponential(size=5)
        sel = select_antennas(m, 2).selected
        rest = [i for i in range(5) if i not in sel]
        assert min(m[list(sel)]) >= max(m[rest])


# -- stacked systems ---------------------------------------------------------


def test_single_antenna_stack_is_the_block():
    g = DDGrid(2, 2)
    mimo = gen_mimo_channel(3, 1, 2, g, np.random.default_rng(0))
    H_bar, _ = assemble_selected_system(mimo, [1])
    np.testing.assert_array_equal(H_bar, mimo.block(1, 0))


def test_selecting_all_reproduces_full_stack():
    g = DDGrid(2, 2)
    mimo = gen_mimo_channel(2, 2, 2, g, np.random.default_rng(3))
    H_bar, _ = assemble_selected_system(mimo, select_antennas(mimo, 2))
    np.testing.assert_array_equal(H_bar, mimo.stacked())


@settings(max_examples=30, deadline=None)
@given(n_r=st.integers(1, 3), n_t=st.integers(1, 2), P=st.sampled_from([1, 2, 4]), seed=st.integers(0, 2**31))
def test_stacked_forms_agree_with_per_antenna_application(n_r, n_t, P, seed):
    g = DDGrid(2, 2)
    rng = np.random.default_rng(seed)
    mimo = gen_mimo_channel(n_r, n_t, P, g, rng)
    n_s = int(rng.integers(1, n_r + 1))
    sel = select_antennas(mimo, n_s)
    xs = np.array([_rand(rng, g.MN) for _ in range(n_t)])
    H_bar, H_tilde = assemble_selected_system(mimo, sel)
    y = H_bar @ xs.reshape(-1)
    brute = np.concatenate([sum(mimo.block(i, j) @ xs[j] for j in range(n_t)) for i in sel.selected])
    np.testing.assert_allclose(y, brute, atol=1e-12)
    alt = H_tilde @ stacked_symbol_matrix(xs, mimo)
    np.testing.assert_allclose(alt, y.reshape(n_s, g.MN), atol=1e-12)


# -- permutation and Alamouti ------------------------------------------------


def test_permutation_is_identity_for_two_by_two():
    np.testing.assert_array_equal(build_permutation(DDGrid(2, 2)), np.eye(4))


def test_permutation_reverses_three_points():
    P = build_permutation(DDGrid(3, 1))
    assert [int(np.argmax(P[r])) for r in range(3)] == [0, 2, 1]


@pytest.mark.parametrize("M", range(1, 17, 3))
@pytest.mark.parametrize("N", range(1, 17, 5))
def test_permutation_is_involution(M, N):
    g = DDGrid(M, N)
    P = build_permutation(g)
    np.testing.assert_array_equal(P @ P, np.eye(g.MN))
    np.testing.assert_array_equal(P.sum(axis=0), 1)
    x = np.arange(g.MN)
    np.testing.assert_array_equal(x[reversal_indices(g)], P @ x)


def test_stc_encode_with_zero_second_stream():
    g = DDGrid(2, 2)
    x1 = _rand(np.random.default_rng(0), 4)
    cw = stc_encode(x1, np.zeros(4), g)
    np.testing.assert_array_equal(cw.frames[1, 0], 0)
    np.testing.assert_allclose(cw.frames[1, 1], cw.perm @ np.conj(x1))


def test_stc_flat_channel_is_orthogonal():
    g = DDGrid(2, 2)
    ident = _const(g, [(0, 0)], [1.0])
    mimo = MimoChannel(((ident, ident),), g)
    H = stc_assemble(mimo, [0])
    np.testing.assert_allclose(H.conj().T @ H, 2 * np.eye(8), atol=1e-15)


def test_stc_requires_two_transmitters():
    g = DDGrid(2, 2)
    mimo = gen_mimo_channel(2, 1, 1, g, np.random.default_rng(0))
    with pytest.raises(ValueError):
        stc_assemble(mimo, [0])


@settings(max_examples=30, deadline=None)
@given(
    M=st.sampled_from([2, 3, 4]),
    N=st.sampled_from([2, 3]),
    n_r=st.integers(1, 3),
    P=st.sampled_from([1, 2]),
    seed=st.integers(0, 2**31),
)
def test_stacked_stc_matches_two_frame_simulation(M, N, n_r, P, seed):
    g = DDGrid(M, N)
    rng = np.random.default_rng(seed)
    taps = [(0, 0), (1, 1)][:P]
    mimo = gen_mimo_channel(n_r, 2, P, g, rng, taps=taps)
    sel = select_antennas(mimo, int(rng.integers(1, n_r + 1)))
    x1, x2 = _rand(rng, g.MN), _rand(rng, g.MN)
    cw = stc_encode(x1, x2, g)
    n_s = len(sel.selected)
    noise = np.array([[_rand(rng, g.MN) for _ in range(n_s)] for _ in range(2)])
    H = stc_assemble(mimo, sel)
    y_direct = stc_receive(mimo, sel, cw, noise)
    noise_stacked = np.concatenate(list(noise[0]) + [np.conj(cw.perm @ v) for v in noise[1]])
    np.testing.assert_allclose(H @ np.concatenate([x1, x2]) + noise_stacked, y_direct, atol=1e-12)
    # alternate form: [h_i1, h_i2] X_tilde = [y_i1^T, y_i2^T] without noise
    X = stc_symbol_matrix(x1, x2, mimo)
    clean = stc_receive(mimo, sel, cw)
    for s, i in enumerate(sel.selected):
        h = np.concatenate([mimo.links[i][0].effective_gains, mimo.links[i][1].effective_gains])
        y1 = clean[s * g.MN : (s + 1) * g.MN]
        y2 = cw.perm @ np.conj(clean[(n_s + s) * g.MN : (n_s + s + 1) * g.MN])
        np.testing.assert_allclose(h @ X, np.concatenate([y1, y2]), atol=1e-12)


def test_mimo_channel_validates_shape():
    g = DDGrid(2, 2)
    ch = gen_integer_channel(1, None, g, np.random.default_rng(0))
    with pytest.raises(ValueError):
        MimoChannel(((ch, ch), (ch,)), g)
    with pytest.raises(IndexError):
        selection_metric(MimoChannel(((ch,),), g), 2)


def test_fractional_mimo_selection_uses_full_matrix():
    g = DDGrid(4, 4)
    rng = np.random.default_rng(9)
    mimo = gen_mimo_channel(3, 1, 2, g, rng, fractional_nu_max=1875.0)
    with pytest.raises(ValueError):
        tap_selection_metric(mimo, 0)
    m = [selection_metric(mimo, i) for i in range(3)]
    assert select_antennas(mimo, 1).selected == (int(np.argmax(m)),)
