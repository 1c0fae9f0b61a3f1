"""Monte Carlo BER engine with deterministic parallel execution.

Random streams are keyed by ``(seed, snr index, worker, round)``, so a
curve is a pure function of the job, the seed and the worker count.  Each
SNR point runs in rounds: every worker simulates a batch of frames, error
counts are summed, and the point stops once it has ``min_errors`` bit
errors or ``max_frames`` frames.  Batches double every round up to
``max_batch``.  With ``stop_ber`` set, the sweep ends after the first
point whose BER falls below it; that point stops early once its 99%
upper confidence limit is under ``stop_ber``, and skipped points report
zero frames.

A "frame" is one codeword: a single OTFS frame for SIMO/MIMO, a pair of
OTFS frames for Alamouti STC.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .analysis import difference_spectra, lower_bound_ber, union_bound_ber
from .channel import DDPath, cn, exponential_pdp, spreading_matrices, split_offset
from .config import SystemConfig
from .ddcore import make_phase_rotation, shift_matrix
from .detect import ml_detect_batch, mmse_detect_batch
from .multiant import _stack_blocks, reversal_indices, stc_blocks, top_indices

# complex entries per simulation sub-batch (bounds peak memory)
_SUB_BATCH_ENTRIES = 1 << 22


@dataclass(frozen=True)
class SimJob:
    config: SystemConfig
    snr_db: tuple[float, ...]
    min_errors: int = 500
    max_frames: int = 10**7
    seed: int = 0
    workers: int = 1
    batch: int = 256
    max_batch: int = 1 << 16
    #: End the sweep at the first point whose BER falls below this.  That
    #: point itself is cut short once its upper confidence limit drops
    #: under ``stop_ber`` (it lies outside any slope window ending there).
    stop_ber: float | None = None

    def __post_init__(self):
        snr = tuple(float(s) for s in self.snr_db)
        object.__setattr__(self, "snr_db", snr)
        if not snr:
            raise ValueError("SNR grid is empty")
        if any(b <= a for a, b in zip(snr, snr[1:])):
            raise ValueError("SNR grid must be strictly increasing")
        if self.max_frames < 1:
            raise ValueError("max_frames must be at least 1")
        if self.min_errors < 1:
            raise ValueError("min_errors must be at least 1")
        if self.workers < 1 or self.batch < 1:
            raise ValueError("workers and batch must be positive")


def wilson_interval(errors, trials, confidence: float = 0.95, design_effect=1.0):
    """Wilson score interval, vectorized over arrays of counts.

    ``design_effect`` (variance inflation from correlated trials) shrinks
    both counts to their effective sizes before the interval is formed.
    """
    deff = np.maximum(np.asarray(design_effect, dtype=float), 1.0)
    errors = np.asarray(errors, dtype=float) / deff
    trials = np.asarray(trials, dtype=float) / deff
    z = stats.norm.ppf(0.5 + confidence / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = errors / trials
        denom = 1 + z**2 / trials
        centre = (p + z**2 / (2 * trials)) / denom
        half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    lo = np.where(trials > 0, np.clip(centre - half, 0, 1), 0.0)
    hi = np.where(trials > 0, np.clip(centre + half, 0, 1), 1.0)
    return lo, hi


@dataclass(frozen=True)
class BerCurve:
    snr_db: np.ndarray
    frames: np.ndarray
    bit_errors: np.ndarray
    bits_per_frame: int
    config: SystemConfig | None = field(default=None, compare=False)
    #: per-point sum over frames of (bit errors in the frame)^2
    sq_errors: np.ndarray | None = None

    @property
    def bits(self) -> np.ndarray:
        return self.frames * self.bits_per_frame

    @property
    def ber(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.frames > 0, self.bit_errors / np.maximum(self.bits, 1), np.nan)

    @property
    def design_effect(self) -> np.ndarray:
        """Variance inflation of the bit-error count caused by errors arriving in bursts.

        Bits of one frame fail together (a wrong codeword usually flips
        several), so the count is overdispersed relative to a binomial.
        With rare error frames the inflation is ``sum e_f^2 / sum e_f``.
        """
        if self.sq_errors is None:
            return np.ones(len(self.snr_db))
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(self.bit_errors > 0, self.sq_errors / np.maximum(self.bit_errors, 1), 1.0)
        return np.maximum(d, 1.0)

    def confidence_interval(self, confidence: float = 0.95, clustered: bool = True):
        deff = self.design_effect if clustered else 1.0
        return wilson_interval(self.bit_errors, self.bits, confidence, deff)

    def slope(self, window_db=None, ber_window=None) -> float:
        return estimate_slope(self, window_db, ber_window)

    def __eq__(self, other):
        return (
            isinstance(other, BerCurve)
            and self.bits_per_frame == other.bits_per_frame
            and np.array_equal(self.snr_db, other.snr_db)
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.bit_errors, other.bit_errors)
            and (self.sq_errors is None) == (other.sq_errors is None)
            and (self.sq_errors is None or np.array_equal(self.sq_errors, other.sq_errors))
        )


def estimate_slope(curve: BerCurve, window_db=None, ber_window=None) -> float:
    """Diversity estimate: least-squares slope of log10 BER vs SNR (dB), times -10.

    Points are restricted to ``window_db = (lo, hi)`` in SNR and/or
    ``ber_window = (lo, hi)`` in BER, and must have BER > 0.
    """
    snr = np.asarray(curve.snr_db, dtype=float)
    ber = np.asarray(curve.ber, dtype=float)
    keep = np.isfinite(ber) & (ber > 0)
    if window_db is not None:
        keep &= (snr >= window_db[0]) & (snr <= window_db[1])
    if ber_window is not None:
        keep &= (ber >= ber_window[0]) & (ber <= ber_window[1])
    if keep.sum() < 2:
        raise ValueError(f"need at least 2 points with BER > 0 in the window, got {int(keep.sum())}")
    slope = np.polyfit(snr[keep], np.log10(ber[keep]), 1)[0]
    return float(-10.0 * slope)


# ---------------------------------------------------------------- frame simulation


@dataclass(frozen=True)
class _Static:
    shifts: np.ndarray  # (P, MN, MN)
    tap_phase: np.ndarray  # (P,)
    phi: np.ndarray | None
    rev: np.ndarray


@lru_cache(maxsize=32)
def _static(cfg: SystemConfig) -> _Static:
    grid = cfg.grid
    phi = make_phase_rotation(grid) if cfg.phase_rotation else None
    rev = reversal_indices(grid)
    if cfg.channel != "integer":
        return _Static(np.empty((0,)), np.empty((0,)), phi, rev)
    taps = cfg.tap_layout
    shifts = np.stack([shift_matrix(a, b, grid) for a, b in taps])
    phase = np.array([DDPath.from_bins(1.0, a, b, grid).effective_gain for a, b in taps])
    return _Static(shifts, phase, phi, rev)


def _selected_blocks(cfg: SystemConfig, st: _Static, B: int, rng: np.random.Generator):
    """Channel blocks ``(B, n_s, n_t, MN, MN)`` of the selected receive antennas.

    Integer taps each fill ``MN`` entries of a block, so the Frobenius
    selection metric is ``MN`` times the tap energy and blocks are only
    built for the winners.
    """
    shape = (B, cfg.n_r, cfg.n_t)
    grid = cfg.grid
    if cfg.channel == "integer":
        h = cn(rng, shape + (cfg.P,), 1.0 / cfg.P) * st.tap_phase
        metric = grid.MN * np.sum(np.abs(h) ** 2, axis=(-1, -2))
        sel = top_indices(metric, cfg.n_s)
        h = np.take_along_axis(h, sel[:, :, None, None], axis=1)
        return np.einsum("...p,pij->...ij", h, st.shifts)
    P = cfg.P
    theta = rng.uniform(-np.pi, np.pi, shape + (P,))
    doppler = cfg.nu_max * np.cos(theta)
    delay = np.sort(rng.uniform(0.0, (grid.M - 1) * grid.delay_resolution, shape + (P,)), axis=-1)
    gain = cn(rng, shape + (P,), exponential_pdp(P))
    split = np.vectorize(split_offset, otypes=[int, float])
    alpha, a = split(delay / grid.delay_resolution)
    beta, b = split(doppler / grid.doppler_resolution)
    K = spreading_matrices(alpha, beta, a, b, grid)
    heff = gain * np.exp(-2j * np.pi * doppler * delay)
    blocks = np.einsum("...p,...pij->...ij", heff, K)
    metric = np.sum(np.abs(blocks) ** 2, axis=(-1, -2, -3))
    sel = top_indices(metric, cfg.n_s)
    return np.take_along_axis(blocks, sel[:, :, None, None, None], axis=1)


def _detect(cfg: SystemConfig, y, A, N0, phi):
    alph = cfg.constellation
    if cfg.detector == "ml":
        return ml_detect_batch(y, A, alph, phase_rotation=phi)
    return mmse_detect_batch(y, A, N0, alph, phase_rotation=phi)


def simulate_frames(cfg: SystemConfig, snr_db: float, n_frames: int, rng: np.random.Generator):
    """Bit errors over ``n_frames`` independent codewords at one SNR.

    Returns ``(bit_errors, sum of squared per-frame bit errors)``.
    """
    st = _static(cfg)
    alph = cfg.constellation
    MN = cfg.grid.MN
    N0 = 0.0 if math.isinf(snr_db) else 10 ** (-snr_db / 10)
    per_frame = cfg.n_r * cfg.n_t * MN * MN * max(1, cfg.P if cfg.channel != "integer" else 1)
    sub = max(1, _SUB_BATCH_ENTRIES // per_frame)
    errors = sq = 0
    for start in range(0, n_frames, sub):
        B = min(sub, n_frames - start)
        bits = rng.integers(0, 2, (B, cfg.bits_per_codeword), dtype=np.int8)
        labels = bits.reshape(B, cfg.n_sym, -1) @ (1 << np.arange(alph.bits_per_symbol - 1, -1, -1))
        x = alph.points[labels]
        xt = x if st.phi is None else x * np.tile(st.phi, cfg.n_sym // MN)
        blocks = _selected_blocks(cfg, st, B, rng)
        if cfg.mode == "stc":
            x1, x2 = xt[:, :MN], xt[:, MN:]
            f2 = np.stack([-np.conj(x2[:, st.rev]), np.conj(x1[:, st.rev])], axis=1)
            y1 = np.einsum("bsjmn,bjn->bsm", blocks, np.stack([x1, x2], axis=1))
            y2 = np.einsum("bsjmn,bjn->bsm", blocks, f2)
            y1 = y1 + cn(rng, y1.shape, N0)
            y2 = y2 + cn(rng, y2.shape, N0)
            y = np.concatenate([y1, np.conj(y2[..., st.rev])], axis=1).reshape(B, -1)
            A = stc_blocks(blocks)
        else:
            A = _stack_blocks(blocks)
            y = np.einsum("bij,bj->bi", A, xt)
            y = y + cn(rng, y.shape, N0)
        detected = _detect(cfg, y, A, N0, st.phi)
        bits_hat = alph.labels[detected].reshape(B, -1)
        per = np.count_nonzero(bits_hat != bits, axis=1)
        errors += int(per.sum())
        sq += int(np.dot(per, per))
    return errors, sq


def _stream(seed: int, snr_idx: int, worker: int, rnd: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(snr_idx, worker, rnd))
    return np.random.Generator(np.random.Philox(ss))


def _worker_task(args) -> tuple[int, int]:
    cfg, snr_db, n_frames, seed, key = args
    return simulate_frames(cfg, snr_db, n_frames, _stream(seed, *key))


def _split(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (i < r) for i in range(parts)]


def _below(errors: int, sq: int, bits: int, level: float) -> bool:
    """True once the clustered 99% upper limit of the BER is under ``level``."""
    deff = sq / errors if errors else 1.0
    return bool(wilson_interval(errors, bits, 0.99, deff)[1] < level)


def run_ber(job: SimJob, progress=None) -> BerCurve:
    """Simulate every SNR point of ``job``.

    ``progress``, if given, is called as ``progress(snr_db, frames, errors)``
    after each finished point.
    """
    cfg = job.config
    frames_out = np.zeros(len(job.snr_db), dtype=np.int64)
    errors_out = np.zeros(len(job.snr_db), dtype=np.int64)
    sq_out = np.zeros(len(job.snr_db), dtype=np.int64)
    pool = ProcessPoolExecutor(job.workers) if job.workers > 1 else None
    try:
        for i, snr in enumerate(job.snr_db):
            frames = errors = sq = rnd = 0
            while errors < job.min_errors and frames < job.max_frames:
                per_worker = min(job.batch << min(rnd, 30), job.max_batch)
                total = min(per_worker * job.workers, job.max_frames - frames)
                tasks = [
                    (cfg, snr, n, job.seed, (i, w, rnd))
                    for w, n in enumerate(_split(total, job.workers))
                    if n > 0
                ]
                results = pool.map(_worker_task, tasks) if pool else map(_worker_task, tasks)
                for e, s2 in results:
                    errors += e
                    sq += s2
                frames += total
                rnd += 1
                if job.stop_ber is not None and _below(errors, sq, frames * cfg.bits_per_codeword, job.stop_ber):
                    break
            frames_out[i], errors_out[i], sq_out[i] = frames, errors, sq
            if progress is not None:
                progress(snr, frames, errors)
            if job.stop_ber is not None and errors / (frames * cfg.bits_per_codeword) < job.stop_ber:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return BerCurve(np.array(job.snr_db), frames_out, errors_out, cfg.bits_per_codeword, cfg, sq_out)


# ---------------------------------------------------------------- bound comparison


@dataclass(frozen=True)
class BoundComparison:
    snr_db: np.ndarray
    lower: np.ndarray
    simulated: np.ndarray
    upper: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    checked: np.ndarray  # points with enough errors to judge
    violations: np.ndarray
    top_ratio: float  # upper / simulated at the highest SNR with errors

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.violations))


def compare_with_bounds(
    curve: BerCurve,
    config: SystemConfig | None = None,
    confidence: float = 0.99,
    min_errors: int = 300,
    rho: float = 1.0,
) -> BoundComparison:
    """Lower bound, simulation and union bound per SNR, with sandwich violations.

    A point is a violation only if it has at least ``min_errors`` errors and
    its whole Wilson interval (widened for bursty frame errors) lies outside
    ``[lower, upper]``.
    """
    cfg = config or curve.config
    if cfg is None:
        raise ValueError("a configuration is needed to evaluate bounds")
    spectra = difference_spectra(cfg)
    gamma = 10 ** (np.asarray(curve.snr_db) / 10)
    upper = union_bound_ber(cfg, gamma, rho, spectra)
    lower = lower_bound_ber(cfg, gamma, rho, spectra)
    sim = curve.ber
    lo, hi = curve.confidence_interval(confidence)
    checked = curve.bit_errors >= min_errors
    violations = checked & ((hi < lower) | (lo > upper))
    nz = np.flatnonzero(curve.bit_errors > 0)
    top = float(upper[nz[-1]] / sim[nz[-1]]) if len(nz) else float("nan")
    return BoundComparison(np.asarray(curve.snr_db), lower, sim, upper, lo, hi, checked, violations, top)
