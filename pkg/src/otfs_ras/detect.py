"""Modulation alphabets, bit mapping, and ML / MMSE detection.

Every detector works on a linear model ``y = H x + v`` in which ``x`` holds
``n`` alphabet symbols.  When phase rotation is active the rotation is
applied to candidate vectors (equivalently, to the columns of ``H``);
the received vector itself is never rotated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _sphere

DEFAULT_CANDIDATE_CAP = 2**20

# Above this many candidates the batch ML path switches to depth-first search.
_EXHAUSTIVE_LIMIT = 64


class CandidateCapExceeded(ValueError):
    """Exhaustive enumeration would exceed the candidate cap; use MMSE instead."""


@dataclass(frozen=True, eq=False)
class Alphabet:
    """Unit-energy constellation.

    ``points[label]`` is the symbol for integer ``label``; the label's binary
    expansion (most significant bit first) is the bit pattern it carries.
    """

    name: str
    points: np.ndarray
    bits_per_symbol: int

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.points.imag == 0))

    @property
    def labels(self) -> np.ndarray:
        """``(size, bits_per_symbol)`` array of bit patterns."""
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (np.arange(self.size)[:, None] >> shifts) & 1

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.name == other.name

    def __hash__(self):
        return hash(self.name)


def _gray_pam(bits: int) -> np.ndarray:
    """Amplitudes of a Gray-coded PAM, indexed by label."""
    n = 1 << bits
    gray = np.arange(n) ^ (np.arange(n) >> 1)
    amp = np.empty(n)
    amp[gray] = 2 * np.arange(n) - (n - 1)
    return amp


def _make_qam16() -> Alphabet:
    pam = _gray_pam(2)
    labels = np.arange(16)
    pts = (pam[labels >> 2] + 1j * pam[labels & 3]) / np.sqrt(10.0)
    return Alphabet("16QAM", pts, 4)


BPSK = Alphabet("BPSK", np.array([1.0 + 0j, -1.0 + 0j]), 1)
QAM16 = _make_qam16()
ALPHABETS = {"BPSK": BPSK, "16QAM": QAM16}


def get_alphabet(name: str) -> Alphabet:
    key = name.upper().replace("-", "")
    try:
        return ALPHABETS[key]
    except KeyError:
        raise ValueError(f"unknown alphabet {name!r}; choose from {sorted(ALPHABETS)}") from None


def map_bits(bits: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Map a bit array (last axis a multiple of ``bits_per_symbol``) to symbols."""
    return alphabet.points[bits_to_labels(bits, alphabet)]


def bits_to_labels(bits: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    k = alphabet.bits_per_symbol
    if bits.shape[-1] % k:
        raise ValueError(f"bit count must be a multiple of {k}")
    groups = bits.reshape(bits.shape[:-1] + (bits.shape[-1] // k, k))
    weights = 1 << np.arange(k - 1, -1, -1)
    return groups @ weights


def labels_to_bits(labels: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    labels = np.asarray(labels)
    bits = alphabet.labels[labels]
    return bits.reshape(labels.shape[:-1] + (-1,))


def slice_symbols(z: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Label of the nearest constellation point for every entry of ``z``."""
    z = np.asarray(z)
    return np.argmin(np.abs(z[..., None] - alphabet.points) ** 2, axis=-1)


def demap_symbols(symbols: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Hard-decision bits of (possibly noisy) symbols."""
    return labels_to_bits(slice_symbols(symbols, alphabet), alphabet)


@dataclass(frozen=True)
class DetectionResult:
    symbols: np.ndarray
    bits: np.ndarray
    metric: float


def _effective(H: np.ndarray, phase_rotation: np.ndarray | None) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if phase_rotation is None:
        return H
    reps, rem = divmod(H.shape[-1], len(phase_rotation))
    if rem:
        raise ValueError("channel width is not a multiple of the rotation length")
    return H * np.tile(phase_rotation, reps)


def _check_cap(alphabet: Alphabet, n_sym: int, cap: int) -> None:
    if float(alphabet.size) ** n_sym > cap:
        raise CandidateCapExceeded(
            f"{alphabet.size}^{n_sym} candidates exceed the cap of {cap}; use MMSE detection"
        )


@lru_cache(maxsize=16)
def candidate_labels(alphabet: Alphabet, n_sym: int) -> np.ndarray:
    """All ``size**n_sym`` label vectors in lexicographic order."""
    grids = np.meshgrid(*([np.arange(alphabet.size)] * n_sym), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def ml_detect(
    y: np.ndarray,
    H: np.ndarray,
    alphabet: Alphabet,
    n_sym: int | None = None,
    phase_rotation: np.ndarray | None = None,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> DetectionResult:
    """Exhaustive maximum-likelihood detection of one received vector.

    Returns the candidate ``x`` minimizing ``||y - H Phi x||^2`` over every
    vector in ``alphabet**n_sym``.
    """
    y = np.asarray(y, dtype=complex)
    A = _effective(H, phase_rotation)
    n_sym = A.shape[1] if n_sym is None else n_sym
    if n_sym != A.shape[1]:
        raise ValueError(f"channel has {A.shape[1]} columns but n_sym={n_sym}")
    _check_cap(alphabet, n_sym, cap)
    cands = candidate_labels(alphabet, n_sym)
    best_metric, best = np.inf, None
    chunk = max(1, (1 << 22) // max(1, A.shape[0]))
    for start in range(0, len(cands), chunk):
        x = alphabet.points[cands[start : start + chunk]]
        metric = np.sum(np.abs(y[:, None] - A @ x.T) ** 2, axis=0)
        k = int(np.argmin(metric))
        if metric[k] < best_metric:
            best_metric, best = float(metric[k]), cands[start + k]
    sym = alphabet.points[best]
    return DetectionResult(sym, labels_to_bits(best[None], alphabet)[0], best_metric)


def _real_system(A: np.ndarray, y: np.ndarray, alphabet: Alphabet):
    """Real-valued equivalent model and the per-dimension level set."""
    if alphabet.is_real:
        Ar = np.concatenate([A.real, A.imag], axis=-2)
        levels = np.unique(alphabet.points.real)
    else:
        top = np.concatenate([A.real, -A.imag], axis=-1)
        bot = np.concatenate([A.imag, A.real], axis=-1)
        Ar = np.concatenate([top, bot], axis=-2)
        levels = np.unique(alphabet.points.real)
        if not np.allclose(np.unique(alphabet.points.imag), levels):
            raise ValueError("depth-first ML search needs a square QAM alphabet")
    yr = np.concatenate([y.real, y.imag], axis=-1)
    return Ar, yr, levels


def _level_to_label(alphabet: Alphabet, levels: np.ndarray) -> np.ndarray:
    """Table from per-dimension level indices to alphabet labels."""
    re = np.argmin(np.abs(alphabet.points.real[:, None] - levels), axis=1)
    if alphabet.is_real:
        table = np.empty(len(levels), dtype=np.int64)
        table[re] = np.arange(alphabet.size)
        return table
    im = np.argmin(np.abs(alphabet.points.imag[:, None] - levels), axis=1)
    table = np.empty((len(levels), len(levels)), dtype=np.int64)
    table[re, im] = np.arange(alphabet.size)
    return table


def ml_detect_batch(
    Y: np.ndarray,
    H: np.ndarray,
    alphabet: Alphabet,
    phase_rotation: np.ndarray | None = None,
    method: str = "auto",
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> np.ndarray:
    """ML labels for a batch of frames, ``Y`` of shape ``(B, m)`` and ``H`` of ``(B, m, n)``.

    ``method="exhaustive"`` scores every candidate; ``"sphere"`` runs the
    depth-first search, which returns the same minimizer far faster for
    large candidate sets.  ``"auto"`` picks by candidate count.
    """
    Y = np.asarray(Y, dtype=complex)
    A = _effective(H, phase_rotation)
    B, m, n = A.shape
    _check_cap(alphabet, n, cap)
    if method == "auto":
        method = "exhaustive" if alphabet.size**n <= _EXHAUSTIVE_LIMIT else "sphere"
    if method == "exhaustive":
        cands = candidate_labels(alphabet, n)
        X = alphabet.points[cands].T  # (n, C)
        out = np.empty((B, n), dtype=np.int64)
        step = max(1, (1 << 22) // (m * X.shape[1]))
        for s in range(0, B, step):
            AX = A[s : s + step] @ X
            metric = np.sum(np.abs(Y[s : s + step, :, None] - AX) ** 2, axis=1)
            out[s : s + step] = cands[np.argmin(metric, axis=1)]
        return out
    if method != "sphere":
        raise ValueError(f"unknown ML method {method!r}")
    Ar, yr, levels = _real_system(A, Y, alphabet)
    lev = np.empty((B, Ar.shape[-1]), dtype=np.int64)
    _sphere.ml_search_batch(np.ascontiguousarray(Ar), np.ascontiguousarray(yr), levels, lev)
    table = _level_to_label(alphabet, levels)
    if alphabet.is_real:
        return table[lev]
    return table[lev[:, :n], lev[:, n:]]


def mmse_detect(
    y: np.ndarray,
    H: np.ndarray,
    noise_var: float,
    alphabet: Alphabet,
    phase_rotation: np.ndarray | None = None,
) -> DetectionResult:
    """Linear MMSE estimate followed by per-symbol slicing.

    ``x_hat = (H^H H + noise_var I)^-1 H^H y``; with phase rotation the
    estimate of the rotated vector is de-rotated before slicing.
    """
    labels = mmse_detect_batch(np.asarray(y)[None], np.asarray(H)[None], noise_var, alphabet, phase_rotation)[0]
    sym = alphabet.points[labels]
    A = _effective(H, phase_rotation)
    metric = float(np.sum(np.abs(np.asarray(y) - A @ sym) ** 2))
    return DetectionResult(sym, labels_to_bits(labels[None], alphabet)[0], metric)


def mmse_estimate_batch(Y: np.ndarray, H: np.ndarray, noise_var: float) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    Hh = np.conj(np.swapaxes(H, -1, -2))
    G = Hh @ H + noise_var * np.eye(H.shape[-1])
    return np.linalg.solve(G, (Hh @ np.asarray(Y, dtype=complex)[..., None]))[..., 0]


def mmse_detect_batch(Y, H, noise_var, alphabet: Alphabet, phase_rotation=None) -> np.ndarray:
    x = mmse_estimate_batch(Y, H, noise_var)
    if phase_rotation is not None:
        reps = x.shape[-1] // len(phase_rotation)
        x = x * np.conj(np.tile(phase_rotation, reps))
    return slice_symbols(x, alphabet)
