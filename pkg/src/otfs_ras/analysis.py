"""Rank certification, pairwise error probability bounds and diversity orders.

Everything here works on codeword *differences*.  The symbol matrices are
linear in the transmit vector (real-linear for STC, which conjugates), so
the difference matrix of two codewords is the symbol matrix of their
difference, and the set of distinct differences of ``A^n`` is ``(A-A)^n``.
Scanning that set instead of all ordered pairs gives the same minimum rank
and, with per-difference pair counts, the same bound sums.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy import stats

from .channel import PRESETS, cn, resolve_taps
from .config import SystemConfig
from .ddcore import DDGrid, make_phase_rotation, shift_indices
from .detect import Alphabet, get_alphabet
from .multiant import reversal_indices, top_indices

RANK_TOL = 1e-9
DEFAULT_SCAN_CAP = 2**16
DEFAULT_DIFF_CAP = 2**20
DEFAULT_MULTI_INDEX_CAP = 12


class EnumerationCapExceeded(ValueError):
    pass


class UnsupportedConfig(ValueError):
    """Configuration has no diversity prediction."""


@dataclass(frozen=True)
class PairSpectrum:
    """Nonzero eigenvalues (descending) of ``D D^H`` for a codeword difference ``D``."""

    rank: int
    eigenvalues: np.ndarray
    K: int

    @property
    def full_rank(self) -> bool:
        return self.rank == self.K


def pair_spectrum(Xi: np.ndarray, Xj: np.ndarray) -> PairSpectrum:
    Xi = np.asarray(Xi)
    Xj = np.asarray(Xj)
    if Xi.shape != Xj.shape:
        raise ValueError(f"shape mismatch {Xi.shape} vs {Xj.shape}")
    s = np.linalg.svd(Xi - Xj, compute_uv=False)
    r = _numerical_rank(s[None])[0]
    return PairSpectrum(int(r), s[:r] ** 2, Xi.shape[0])


def _numerical_rank(s: np.ndarray) -> np.ndarray:
    """Rank from descending singular values, shape ``(..., k)``."""
    smax = s[..., :1]
    return np.sum((s > RANK_TOL * smax) & (smax > 0), axis=-1)


# ---------------------------------------------------------------- differences


def alphabet_differences(alphabet: Alphabet) -> tuple[np.ndarray, np.ndarray]:
    """Distinct values of ``a - b`` over ordered point pairs, and how many pairs give each."""
    d = (alphabet.points[:, None] - alphabet.points[None, :]).reshape(-1)
    key = np.round(d.real, 9) + 1j * np.round(d.imag, 9)
    vals, counts = np.unique(key, return_counts=True)
    return vals, counts


def _difference_chunks(alphabet: Alphabet, n: int, cap: int, chunk: int = 8192):
    """Yield ``(d, count)`` over all nonzero difference vectors in ``(A-A)^n``."""
    vals, counts = alphabet_differences(alphabet)
    total = len(vals) ** n
    if total > cap:
        raise EnumerationCapExceeded(f"{total} distinct differences exceed the cap of {cap}")
    zero = int(np.argmin(np.abs(vals)))
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(flat, (len(vals),) * n), axis=1)
        keep = ~np.all(digits == zero, axis=1)
        digits = digits[keep]
        if len(digits):
            yield vals[digits], np.prod(counts[digits].astype(float), axis=1)


def difference_matrices(
    d: np.ndarray,
    grid: DDGrid,
    taps,
    mode: str = "simo",
    phase_rotation: bool = False,
    n_t: int = 1,
    phase_scale: float = 1.0,
) -> np.ndarray:
    """Symbol matrices of a batch of difference vectors ``d`` (``(C, n_sym)``).

    simo: ``P x MN``; mimo: ``n_t P x MN``; stc: ``2P x 2MN``.  Integer taps only.
    """
    MN = grid.MN
    idx = np.stack([shift_indices(a, b, grid) for a, b in taps])
    if phase_rotation:
        phi = make_phase_rotation(grid, phase_scale)
        d = d * np.tile(phi, d.shape[-1] // MN)
    segs = [d[..., j * MN : (j + 1) * MN] for j in range(d.shape[-1] // MN)]
    if mode == "simo":
        return segs[0][..., idx]
    if mode == "mimo":
        if len(segs) != n_t:
            raise ValueError(f"expected {n_t * MN} symbols, got {d.shape[-1]}")
        return np.concatenate([s[..., idx] for s in segs], axis=-2)
    if mode == "stc":
        if len(segs) != 2:
            raise ValueError(f"stc needs {2 * MN} symbols, got {d.shape[-1]}")
        rev = reversal_indices(grid)
        d1, d2 = segs
        f2_1 = -np.conj(d2[..., rev])
        f2_2 = np.conj(d1[..., rev])
        top = np.concatenate([d1[..., idx], f2_1[..., idx]], axis=-1)
        bot = np.concatenate([d2[..., idx], f2_2[..., idx]], axis=-1)
        return np.concatenate([top, bot], axis=-2)
    raise ValueError(f"unknown mode {mode!r}")


def _mode_args(cfg: SystemConfig) -> dict:
    return dict(
        grid=cfg.grid,
        taps=cfg.tap_layout,
        mode=cfg.mode,
        phase_rotation=cfg.phase_rotation,
        n_t=cfg.n_t,
    )


@dataclass(frozen=True)
class RankScanResult:
    min_rank: int
    K: int
    pair: tuple[np.ndarray, np.ndarray]
    n_differences: int
    rank_counts: dict


def _pair_for_difference(d: np.ndarray, alphabet: Alphabet) -> tuple[np.ndarray, np.ndarray]:
    """Two codewords whose difference is ``d``."""
    pts = alphabet.points
    xi = np.empty(len(d), dtype=complex)
    xj = np.empty(len(d), dtype=complex)
    for k, v in enumerate(d):
        a, b = np.unravel_index(np.argmin(np.abs(pts[:, None] - pts[None, :] - v)), (len(pts),) * 2)
        xi[k], xj[k] = pts[a], pts[b]
    return xi, xj


def min_rank_scan(
    grid: DDGrid,
    taps,
    alphabet: Alphabet | str,
    mode: str = "simo",
    phase_rotation: bool = False,
    n_t: int | None = None,
    cap: int = DEFAULT_SCAN_CAP,
    diff_cap: int = DEFAULT_DIFF_CAP,
) -> RankScanResult:
    """Exact minimum rank of ``X_i - X_j`` over all distinct codeword pairs.

    ``taps`` is a list of ``(alpha, beta)`` or a preset name.  The codeword
    set ``A^n`` must hold at most ``cap`` vectors.
    """
    if isinstance(alphabet, str):
        alphabet = get_alphabet(alphabet)
    n_t = {"simo": 1, "stc": 2}.get(mode, n_t or 2)
    if isinstance(taps, str):
        taps = PRESETS.get(taps, taps)
    taps = resolve_taps(len(taps), taps, grid)
    n = n_t * grid.MN
    if float(alphabet.size) ** n > cap:
        raise EnumerationCapExceeded(f"{alphabet.size}^{n} codewords exceed the cap of {cap}")
    best, best_d, K, seen = None, None, None, 0
    hist: dict[int, int] = {}
    for d, _ in _difference_chunks(alphabet, n, diff_cap):
        X = difference_matrices(d, grid, taps, mode, phase_rotation, n_t)
        K = X.shape[-2]
        ranks = _numerical_rank(np.linalg.svd(X, compute_uv=False))
        seen += len(d)
        for r, c in zip(*np.unique(ranks, return_counts=True)):
            hist[int(r)] = hist.get(int(r), 0) + int(c)
        k = int(np.argmin(ranks))
        if best is None or ranks[k] < best:
            best, best_d = int(ranks[k]), d[k]
    return RankScanResult(best, K, _pair_for_difference(best_d, alphabet), seen, dict(sorted(hist.items())))


def scan_config(cfg: SystemConfig, cap: int = DEFAULT_SCAN_CAP) -> RankScanResult:
    return min_rank_scan(cfg.grid, cfg.tap_layout, cfg.constellation, cfg.mode, cfg.phase_rotation, cfg.n_t, cap)


# ---------------------------------------------------------------- PEP bounds


@lru_cache(maxsize=64)
def multiplicity_tally(K: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicity vectors of all index sequences in ``{1..K}^n``.

    Returns ``(m, count)``: ``m[t]`` is a length-``K`` multiplicity vector
    and ``count[t]`` the number of sequences sharing it.  Sequences are
    grouped by multiset, so the tally has ``C(n+K-1, n)`` rows instead of
    ``K^n``.
    """
    if n == 0:
        return np.zeros((1, K), dtype=np.int64), np.ones(1)
    rows = [np.bincount(c, minlength=K) for c in itertools.combinations_with_replacement(range(K), n)]
    m = np.array(rows, dtype=np.int64)
    fact = np.array([math.factorial(i) for i in range(n + 1)], dtype=float)
    count = math.factorial(n) / np.prod(fact[m], axis=1)
    return m, count


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise EnumerationCapExceeded(f"multi-index length {n} exceeds the cap of {cap}")


def literal_rho(P: int, n_s: int, n_t: int) -> float:
    """Channel-density scale ``(sqrt(P))^(n_s n_t P)`` as written in the derivation.

    The default bounds use ``rho=1`` instead; see the project notes.
    """
    return math.sqrt(P) ** (n_s * n_t * P)


def bound_prefactor(K: int, n_r: int, n_s: int, rho: float = 1.0) -> float:
    return rho * math.factorial(n_r) / (
        math.factorial(n_r - n_s) * math.factorial(n_s - 1) * math.factorial(K) ** (n_r - n_s)
    )


def full_rank_sum(eigenvalues: np.ndarray, n: int) -> np.ndarray:
    """``sum_{(i_1..i_n) in {1..K}^n} prod_j m_j! / prod_j lambda_j^{m_j}``.

    ``eigenvalues`` may carry leading batch axes; the last axis has length ``K``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    m, count = multiplicity_tally(lam.shape[-1], n)
    fact = np.array([math.factorial(i) for i in range(n + 1)], dtype=float)
    weight = count * np.prod(fact[m], axis=1)
    return np.exp(-np.log(lam) @ m.T) @ weight


def psi0(K: int, r: int, n: int) -> float:
    """Sum over sequences in ``{r+1..K}^n`` of ``prod_{j>r} m_j!``."""
    if n == 0:
        return 1.0
    if r >= K:
        return 0.0
    m, count = multiplicity_tally(K - r, n)
    fact = np.array([math.factorial(i) for i in range(n + 1)], dtype=float)
    return float(count @ np.prod(fact[m], axis=1))


def _validate(n_r: int, n_s: int) -> None:
    if not 1 <= n_s <= n_r:
        raise ValueError(f"need 1 <= n_s <= n_r, got n_s={n_s}, n_r={n_r}")


def pep_bound_full_rank(
    spectrum: PairSpectrum,
    gamma,
    n_r: int,
    n_s: int,
    P: int,
    rho: float = 1.0,
    cap: int = DEFAULT_MULTI_INDEX_CAP,
):
    """High-SNR PEP bound for a full-rank difference; decays as ``gamma^(-K n_r)``."""
    _validate(n_r, n_s)
    K = spectrum.K
    lam = np.asarray(spectrum.eigenvalues, dtype=float)
    if spectrum.rank != K or len(lam) != K:
        raise ValueError("full-rank bound needs rank == K")
    if np.any(lam <= 0):
        raise ValueError("full-rank bound got a zero eigenvalue")
    n = K * (n_r - n_s)
    _check_cap(n, cap)
    g = np.asarray(gamma, dtype=float)
    return (
        bound_prefactor(K, n_r, n_s, rho)
        * np.prod(lam) ** (-n_s)
        * full_rank_sum(lam, n)
        * (g / (4 * P)) ** (-K * n_r)
    )


def pep_bound_rank_deficient(
    spectrum: PairSpectrum,
    gamma,
    n_r: int,
    n_s: int,
    P: int,
    rho: float = 1.0,
    cap: int = DEFAULT_MULTI_INDEX_CAP,
):
    """High-SNR PEP bound for a rank-``r`` difference (``r < K``); decays as ``gamma^(-r n_s)``."""
    _validate(n_r, n_s)
    K, r = spectrum.K, spectrum.rank
    if not 0 < r < K:
        raise ValueError(f"rank-deficient bound needs 0 < r < K, got r={r}, K={K}")
    n = K * (n_r - n_s)
    _check_cap(n, cap)
    lam = np.asarray(spectrum.eigenvalues, dtype=float)[:r]
    g = np.asarray(gamma, dtype=float)
    return (
        bound_prefactor(K, n_r, n_s, rho)
        * np.prod(lam) ** (-n_s)
        * psi0(K, r, n)
        * (g / (4 * P)) ** (-r * n_s)
    )


@dataclass(frozen=True)
class DifferenceSpectra:
    """Spectra of every distinct nonzero codeword difference of a configuration."""

    counts: np.ndarray  # ordered codeword pairs per difference
    ranks: np.ndarray
    eigenvalues: np.ndarray  # (C, K), descending, zero-padded
    differences: np.ndarray
    K: int


def difference_spectra(cfg: SystemConfig, cap: int = DEFAULT_SCAN_CAP) -> DifferenceSpectra:
    if cfg.channel != "integer":
        raise ValueError("bounds are only available for the integer-tap channel model")
    alph = cfg.constellation
    if float(alph.size) ** cfg.n_sym > cap:
        raise EnumerationCapExceeded(f"{alph.size}^{cfg.n_sym} codewords exceed the cap of {cap}")
    parts = []
    for d, count in _difference_chunks(alph, cfg.n_sym, DEFAULT_DIFF_CAP):
        X = difference_matrices(d, **_mode_args(cfg))
        s = np.linalg.svd(X, compute_uv=False)
        parts.append((d, count, _numerical_rank(s), s))
    d, count, rank, s = (np.concatenate(p) for p in zip(*parts))
    K = X.shape[-2]
    lam = np.where(np.arange(s.shape[-1]) < rank[:, None], s**2, 0.0)[:, :K]
    if lam.shape[-1] < K:
        lam = np.pad(lam, ((0, 0), (0, K - lam.shape[-1])))
    return DifferenceSpectra(count, rank, lam, d, K)


def pair_pep(spectra: DifferenceSpectra, gamma, cfg: SystemConfig, rho: float = 1.0, cap=DEFAULT_MULTI_INDEX_CAP):
    """PEP bound for every difference, shape ``(C, len(gamma))``.

    Full-rank differences use the full-rank form; the rest the
    rank-deficient form.
    """
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    K, n_r, n_s = spectra.K, cfg.n_r, cfg.n_s
    _validate(n_r, n_s)
    n = K * (n_r - n_s)
    _check_cap(n, cap)
    pre = bound_prefactor(K, n_r, n_s, rho)
    x = g / (4 * cfg.P)
    out = np.empty((len(spectra.ranks), len(g)))
    full = spectra.ranks == K
    if np.any(full):
        lam = spectra.eigenvalues[full]
        coef = pre * np.prod(lam, axis=1) ** (-n_s) * full_rank_sum(lam, n)
        out[full] = coef[:, None] * x ** (-K * n_r)
    for r in np.unique(spectra.ranks[~full]):
        sel = spectra.ranks == r
        lam = spectra.eigenvalues[sel, :r]
        coef = pre * np.prod(lam, axis=1) ** (-n_s) * psi0(K, int(r), n)
        out[sel] = coef[:, None] * x ** (-int(r) * n_s)
    return out


def _ber_normalizer(cfg: SystemConfig) -> float:
    alph = cfg.constellation
    L = float(alph.size) ** cfg.n_sym
    return 1.0 / (L * cfg.n_sym * math.log2(alph.size))


def union_bound_ber(cfg: SystemConfig, gamma, rho: float = 1.0, spectra: DifferenceSpectra | None = None):
    """Union upper bound on BER at linear SNR ``gamma`` (scalar or array)."""
    spectra = spectra or difference_spectra(cfg)
    pep = pair_pep(spectra, gamma, cfg, rho)
    out = _ber_normalizer(cfg) * (spectra.counts @ pep)
    return out if np.ndim(gamma) else float(out[0])


def lower_bound_ber(cfg: SystemConfig, gamma, rho: float = 1.0, spectra: DifferenceSpectra | None = None):
    """Same sum restricted to rank-one differences."""
    spectra = spectra or difference_spectra(cfg)
    pep = pair_pep(spectra, gamma, cfg, rho)
    w = np.where(spectra.ranks == 1, spectra.counts, 0.0)
    out = _ber_normalizer(cfg) * (w @ pep)
    return out if np.ndim(gamma) else float(out[0])


def bound_report_rows(cfg: SystemConfig, snr_db, rho: float = 1.0) -> Iterator[dict]:
    """One row per distinct codeword difference: id, pair count, rank, eigenvalues, PEP per SNR."""
    spectra = difference_spectra(cfg)
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    pep = pair_pep(spectra, 10 ** (snr_db / 10), cfg, rho)
    for i in range(len(spectra.ranks)):
        r = int(spectra.ranks[i])
        row = {
            "pair_id": i,
            "pairs": int(spectra.counts[i]),
            "rank": r,
            "eigenvalues": " ".join(f"{v:.6g}" for v in spectra.eigenvalues[i, :r]),
        }
        row.update({f"pep_{s:g}dB": f"{p:.6e}" for s, p in zip(snr_db, pep[i])})
        yield row


def write_bound_report(path, cfg: SystemConfig, snr_db, rho: float = 1.0) -> None:
    rows = list(bound_report_rows(cfg, snr_db, rho))
    with open(path, "x", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------- diversity


@dataclass(frozen=True)
class DiversityPrediction:
    mode: str
    n_t: int
    n_r: int
    n_s: int
    P: int
    phase_rotation: bool
    order: int


def diversity_prediction(cfg: SystemConfig) -> DiversityPrediction:
    mode, n_t, n_r, n_s, P, pr = cfg.mode, cfg.n_t, cfg.n_r, cfg.n_s, cfg.P, cfg.phase_rotation
    if cfg.channel != "integer" and P > 1:
        raise UnsupportedConfig("no diversity prediction for fractional channels with P > 1")
    if mode == "simo" and n_t == 1:
        order = n_r if P == 1 else (n_r * P if pr else n_s)
    elif mode == "mimo" and n_t >= 2:
        if n_s < n_t:
            raise UnsupportedConfig(f"MIMO prediction needs n_s >= n_t, got n_s={n_s}, n_t={n_t}")
        order = n_s * P if pr else n_s
    elif mode == "stc" and n_t == 2:
        order = 2 * n_r if P == 1 else (2 * n_r * P if pr else 2 * n_s)
    else:
        raise UnsupportedConfig(f"no diversity prediction for mode={mode!r} with n_t={n_t}")
    return DiversityPrediction(mode, n_t, n_r, n_s, P, pr, order)


def predicted_diversity(cfg: SystemConfig) -> int:
    return diversity_prediction(cfg).order


def diversity_from_rank(r: int, K: int, n_r: int, n_s: int) -> int:
    """Diversity implied by the minimum rank: ``n_r K`` if full rank, else ``n_s r``."""
    return n_r * K if r == K else n_s * r


# ---------------------------------------------------------------- selection law


@dataclass(frozen=True)
class OrderStatisticCheck:
    ks_distance: float
    p_value: float
    selection_frequency: np.ndarray
    selected_is_max: bool


def selected_norm_cdf(u, n_r: int, n_t: int, P: int) -> np.ndarray:
    """CDF of the largest of ``n_r`` i.i.d. per-antenna squared norms.

    A single antenna's norm is a sum of ``n_t P`` exponentials of mean
    ``1/P``, with CDF ``1 - exp(-Pu) sum_{k<n_tP} (Pu)^k / k!``.
    """
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    K = n_t * P
    k = np.arange(K)
    terms = np.exp(-P * u[..., None]) * (P * u[..., None]) ** k / np.array([math.factorial(i) for i in k])
    return (1.0 - terms.sum(axis=-1)) ** n_r


def order_statistic_density_check(
    n_r: int,
    n_s: int,
    n_t: int,
    P: int,
    samples: int,
    rng: np.random.Generator | int | None = None,
) -> OrderStatisticCheck:
    """KS distance between the selected antenna's squared norm and its analytic law."""
    if n_s != 1:
        raise ValueError("the analytic law is implemented for n_s=1")
    rng = np.random.default_rng(rng)
    h = cn(rng, (samples, n_r, n_t * P), 1.0 / P)
    metric = np.sum(np.abs(h) ** 2, axis=-1)
    sel = top_indices(metric, 1)[:, 0]
    chosen = metric[np.arange(samples), sel]
    res = stats.kstest(chosen, lambda u: selected_norm_cdf(u, n_r, n_t, P))
    freq = np.bincount(sel, minlength=n_r) / samples
    return OrderStatisticCheck(
        float(res.statistic), float(res.pvalue), freq, bool(np.all(chosen[:, None] >= metric))
    )
