import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import delay_coef_closed, doppler_coef_closed, fractional_relation_direct, unvec, vec
from otfs_ras.channel import (
    PRESETS,
    DDChannel,
    DDPath,
    build_fractional_channel_matrix,
    delay_kernel,
    doppler_kernel,
    exponential_pdp,
    gen_fractional_channel,
    gen_integer_channel,
    max_doppler,
    resolve_taps,
    split_offset,
)
from otfs_ras.ddcore import DDGrid, build_channel_matrix, build_symbol_matrix

offsets = st.floats(-0.49, 0.5).filter(lambda v: abs(v) > 1e-3)


def test_presets_match_profiles():
    g = DDGrid(2, 2)
    assert resolve_taps(1, None, g) == ((1, 1),)
    assert resolve_taps(4, None, g) == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert resolve_taps(2, None, DDGrid(4, 4)) == PRESETS["p2-m4"]
    assert resolve_taps(2, "p2-m2", g) == ((0, 0), (1, 1))


@pytest.mark.parametrize(
    "P,taps",
    [(2, [(0, 0), (2, 0)]), (3, None), (2, "nope"), (2, [(0, 0)])],
)
def test_resolve_taps_errors(P, taps):
    with pytest.raises(ValueError):
        resolve_taps(P, taps, DDGrid(2, 2))


def test_integer_gains_second_moment():
    g = DDGrid(2, 2)
    rng = np.random.default_rng(11)
    total = np.array([np.sum(np.abs(gen_integer_channel(2, None, g, rng).gains) ** 2) for _ in range(100_000)])
    assert abs(total.mean() - 1.0) < 0.02


def test_integer_channel_taps_are_integer():
    g = DDGrid(2, 2)
    ch = gen_integer_channel(4, None, g, np.random.default_rng(0))
    assert ch.is_integer and ch.P == 4 and ch.taps == PRESETS["p4"]


def test_path_from_bins_relations():
    g = DDGrid(4, 8)
    p = DDPath.from_bins(1.0, 2, 3, g, frac_a=0.25, frac_b=-0.125)
    assert p.delay == pytest.approx((2 + 0.25) / (4 * g.delta_f))
    assert p.doppler == pytest.approx((3 - 0.125) / (8 * g.T))
    with pytest.raises(ValueError):
        DDPath.from_bins(1.0, 0, 0, g, frac_a=0.75)


@settings(max_examples=60)
@given(st.floats(-50, 50))
def test_split_offset_range(x):
    n, r = split_offset(x)
    assert -0.5 < r <= 0.5
    assert n + r == pytest.approx(x)


def test_fractional_paths_respect_physical_relations():
    g = DDGrid(4, 4)
    nu = max_doppler(5.9e9, 500.0)
    rng = np.random.default_rng(4)
    for _ in range(200):
        ch = gen_fractional_channel(4, nu, g, rng)
        for p in ch.paths:
            assert p.delay == pytest.approx((p.alpha + p.frac_a) * g.delay_resolution)
            assert p.doppler == pytest.approx((p.beta + p.frac_b) * g.doppler_resolution)
            assert 0 <= p.delay <= (g.M - 1) * g.delay_resolution
            assert -0.5 < p.frac_a <= 0.5 and -0.5 < p.frac_b <= 0.5


def test_fractional_doppler_support():
    g = DDGrid(4, 4)
    nu = 1875.0
    rng = np.random.default_rng(8)
    dopplers = np.array([p.doppler for _ in range(25_000) for p in gen_fractional_channel(4, nu, g, rng).paths])
    assert np.all(np.abs(dopplers) <= nu)
    assert dopplers.max() > 0.999 * nu


def test_doppler_at_zero_angle_equals_nu_max():
    g = DDGrid(4, 4)
    nu = 1000.0
    p = DDPath.from_physical(1.0, 0.0, nu * np.cos(0.0), g)
    beta, b = split_offset(nu * g.N * g.T)
    assert (p.beta, p.frac_b) == (beta, pytest.approx(b))


def test_delays_on_grid_have_no_fraction():
    g = DDGrid(4, 4)
    for a in range(4):
        assert DDPath.from_physical(1.0, a * g.delay_resolution, 0.0, g).frac_a == 0.0


def test_fractional_rejects_bad_nu():
    with pytest.raises(ValueError):
        gen_fractional_channel(2, 0.0, DDGrid(2, 2), np.random.default_rng(0))


def test_exponential_pdp_normalized_and_decreasing():
    p = exponential_pdp(4)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) < 0)


# -- kernels -----------------------------------------------------------------


@pytest.mark.parametrize("M", [1, 2, 4, 7])
def test_kernels_collapse_to_delta_at_zero_offset(M):
    e = np.zeros(M)
    e[0] = 1
    np.testing.assert_allclose(delay_kernel(0.0, M), e, atol=1e-12)
    np.testing.assert_allclose(doppler_kernel(0.0, M), e, atol=1e-12)


@settings(max_examples=50)
@given(a=offsets, M=st.integers(1, 16))
def test_kernels_match_closed_form(a, M):
    q = np.arange(M)
    np.testing.assert_allclose(delay_kernel(a, M), delay_coef_closed(q, a, M), atol=1e-12)
    np.testing.assert_allclose(doppler_kernel(a, M), doppler_coef_closed(q, a, M), atol=1e-12)


def test_half_bin_delay_spreads_every_delay():
    g = DDGrid(2, 2)
    ch = DDChannel((DDPath.from_bins(1.0, 0, 0, g, frac_a=0.5),))
    assert np.all(np.abs(delay_kernel(0.5, 2)) > 1e-3)
    H = build_fractional_channel_matrix(ch, g)
    for row in range(g.MN):
        k = row % g.N
        cols = [k + g.N * l for l in range(g.M)]
        assert np.all(np.abs(H[row, cols]) > 1e-3)


def test_integer_limit_matches_integer_builder():
    g = DDGrid(4, 4)
    rng = np.random.default_rng(21)
    for P in (1, 2, 4):
        for _ in range(20):
            taps = [tuple(t) for t in rng.permutation([(a, b) for a in range(4) for b in range(4)])[:P]]
            ch = gen_integer_channel(P, taps, g, rng)
            diff = build_fractional_channel_matrix(ch, g) - build_channel_matrix(ch, g)
            assert np.max(np.abs(diff)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(
    M=st.integers(1, 4),
    N=st.integers(1, 4),
    P=st.integers(1, 3),
    seed=st.integers(0, 2**31),
)
def test_fractional_matrix_matches_direct_spreading_sum(M, N, P, seed):
    rng = np.random.default_rng(seed)
    g = DDGrid(M, N)
    paths = []
    for _ in range(P):
        a = rng.uniform(-0.49, 0.5)
        b = rng.uniform(-0.49, 0.5)
        paths.append(DDPath.from_bins(rng.standard_normal() + 1j * rng.standard_normal(), rng.integers(M), rng.integers(N), g, a, b))
    ch = DDChannel(tuple(paths))
    x = rng.standard_normal(g.MN) + 1j * rng.standard_normal(g.MN)
    H = build_fractional_channel_matrix(ch, g)
    oracle = fractional_relation_direct(
        unvec(x, N, M), [(p.effective_gain, p.alpha, p.beta, p.frac_a, p.frac_b) for p in paths]
    )
    np.testing.assert_allclose(H @ x, vec(oracle), atol=1e-12)
    np.testing.assert_allclose(ch.effective_gains @ build_symbol_matrix(x, ch, g), H @ x, atol=1e-12)


def test_fractional_energy_conservation():
    g = DDGrid(4, 4)
    rng = np.random.default_rng(2)
    energy = []
    gains = []
    for _ in range(1000):
        ch = gen_fractional_channel(4, 1875.0, g, rng)
        H = build_fractional_channel_matrix(ch, g)
        energy.append(np.mean(np.sum(np.abs(H) ** 2, axis=1)))
        gains.append(np.sum(np.abs(ch.gains) ** 2))
    assert np.mean(energy) == pytest.approx(1.0, abs=0.1)
    assert np.mean(energy) == pytest.approx(np.mean(gains), rel=0.25)


def test_channel_is_immutable():
    ch = gen_integer_channel(1, None, DDGrid(2, 2), np.random.default_rng(0))
    with pytest.raises(AttributeError):
        ch.paths = ()
