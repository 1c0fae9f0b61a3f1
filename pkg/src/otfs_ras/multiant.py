"""Multi-antenna stacking, receive antenna selection and Alamouti STC-OTFS."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import (
    DDChannel,
    build_fractional_channel_matrix,
    gen_fractional_channel,
    gen_integer_channel,
)
from .ddcore import DDGrid, build_channel_matrix, build_symbol_matrix


@dataclass(frozen=True)
class MimoChannel:
    """Independent delay-Doppler channels for every (receive, transmit) pair.

    ``links[i][j]`` is the channel from transmit antenna ``j`` to receive
    antenna ``i``.
    """

    links: tuple[tuple[DDChannel, ...], ...]
    grid: DDGrid

    def __post_init__(self):
        links = tuple(tuple(row) for row in self.links)
        if not links or len({len(r) for r in links}) != 1 or not links[0]:
            raise ValueError("links must form a non-empty n_r x n_t grid")
        object.__setattr__(self, "links", links)

    @property
    def n_r(self) -> int:
        return len(self.links)

    @property
    def n_t(self) -> int:
        return len(self.links[0])

    @property
    def is_integer(self) -> bool:
        return all(ch.is_integer for row in self.links for ch in row)

    def block(self, i: int, j: int) -> np.ndarray:
        ch = self.links[i][j]
        if ch.is_integer:
            return build_channel_matrix(ch, self.grid)
        return build_fractional_channel_matrix(ch, self.grid)

    @property
    def blocks(self) -> np.ndarray:
        """All blocks as an ``(n_r, n_t, MN, MN)`` array."""
        return np.array([[self.block(i, j) for j in range(self.n_t)] for i in range(self.n_r)])

    def stacked(self) -> np.ndarray:
        """Full ``n_r*MN x n_t*MN`` channel without selection."""
        return _stack_blocks(self.blocks)


def gen_mimo_channel(
    n_r: int,
    n_t: int,
    P: int,
    grid: DDGrid,
    rng: np.random.Generator,
    taps=None,
    fractional_nu_max: float | None = None,
) -> MimoChannel:
    """Draw every link independently from the same channel law."""
    def draw():
        if fractional_nu_max is None:
            return gen_integer_channel(P, taps, grid, rng)
        return gen_fractional_channel(P, fractional_nu_max, grid, rng)

    return MimoChannel(tuple(tuple(draw() for _ in range(n_t)) for _ in range(n_r)), grid)


def _stack_blocks(blocks: np.ndarray) -> np.ndarray:
    """``(..., a, b, MN, MN)`` block array to ``(..., a*MN, b*MN)`` matrices."""
    *lead, a, b, m, n = blocks.shape
    return np.swapaxes(blocks, -3, -2).reshape(*lead, a * m, b * n)


@dataclass(frozen=True)
class SelectionResult:
    """Chosen receive antennas (ascending original indices) and all scores."""

    selected: tuple[int, ...]
    metrics: np.ndarray


def selection_metric(mimo: MimoChannel, i: int) -> float:
    """Squared Frobenius norm ``sum_j ||H_ij||^2`` of receive antenna ``i``."""
    if not 0 <= i < mimo.n_r:
        raise IndexError(f"receive antenna {i} out of range")
    return float(sum(np.sum(np.abs(mimo.block(i, j)) ** 2) for j in range(mimo.n_t)))


def tap_selection_metric(mimo: MimoChannel, i: int) -> float:
    """Sum of squared magnitudes of the unique taps of antenna ``i``.

    For integer-tap channels this is the Frobenius metric divided by ``MN``
    (each tap fills ``MN`` entries), so both rank antennas identically.
    """
    if not mimo.is_integer:
        raise ValueError("the tap-form metric is only defined for integer taps")
    return float(sum(np.sum(np.abs(ch.gains) ** 2) for ch in mimo.links[i]))


def top_indices(metrics: np.ndarray, n_s: int) -> np.ndarray:
    """Indices of the ``n_s`` largest entries along the last axis, ascending.

    Ties go to the lower index.
    """
    order = np.argsort(-metrics, axis=-1, kind="stable")[..., :n_s]
    return np.sort(order, axis=-1)


def select_antennas(source, n_s: int, mode: str | None = None) -> SelectionResult:
    """Pick the ``n_s`` receive antennas with the largest selection metrics.

    Parameters
    ----------
    source : MimoChannel or array_like
        A channel realization, or precomputed per-antenna metrics.
    n_s : int
        Number of antennas to keep.
    mode : str, optional
        With ``"mimo"``, warn when ``n_s`` is below the number of transmit
        antennas (spatial multiplexing is then under-determined).
    """
    if isinstance(source, MimoChannel):
        metrics = np.array([selection_metric(source, i) for i in range(source.n_r)])
        if mode == "mimo" and n_s < source.n_t:
            warnings.warn(f"n_s={n_s} < n_t={source.n_t}: MIMO detection is under-determined", stacklevel=2)
    else:
        metrics = np.asarray(source, dtype=float)
    n_r = metrics.shape[-1]
    if not 1 <= n_s <= n_r:
        raise ValueError(f"need 1 <= n_s <= n_r, got n_s={n_s}, n_r={n_r}")
    return SelectionResult(tuple(int(i) for i in top_indices(metrics, n_s)), metrics)


def _shared_channel(mimo: MimoChannel, j: int) -> DDChannel:
    """Channel used to build transmit antenna ``j``'s symbol matrix.

    The alternate form needs every receive antenna to see the same tap
    positions from a given transmit antenna; only the gains may differ.
    """
    ref = mimo.links[0][j]
    for row in mimo.links[1:]:
        ch = row[j]
        same = len(ch.paths) == len(ref.paths) and all(
            (p.alpha, p.beta, p.frac_a, p.frac_b) == (q.alpha, q.beta, q.frac_a, q.frac_b)
            for p, q in zip(ch.paths, ref.paths)
        )
        if not same:
            raise ValueError("alternate form needs identical tap positions on all receive antennas")
    return ref


def assemble_selected_system(mimo: MimoChannel, sel: SelectionResult | Sequence[int]):
    """Stacked channel of the selected antennas and its alternate tap form.

    Returns
    -------
    H_bar : ndarray, shape (n_s*MN, n_t*MN)
        Block matrix of the selected antennas.
    H_tilde : ndarray, shape (n_s, n_t*P)
        Row ``i`` concatenates the effective tap gains of selected antenna
        ``i`` for each transmit antenna in turn.
    """
    idx = sel.selected if isinstance(sel, SelectionResult) else tuple(sel)
    blocks = np.array([[mimo.block(i, j) for j in range(mimo.n_t)] for i in idx])
    H_bar = _stack_blocks(blocks)
    H_tilde = np.array(
        [np.concatenate([mimo.links[i][j].effective_gains for j in range(mimo.n_t)]) for i in idx]
    )
    return H_bar, H_tilde


def stacked_symbol_matrix(xs: np.ndarray, mimo: MimoChannel) -> np.ndarray:
    """``n_t*P x MN`` matrix stacking each transmit antenna's symbol matrix."""
    xs = np.asarray(xs)
    if xs.shape[0] != mimo.n_t:
        raise ValueError(f"expected {mimo.n_t} transmit vectors, got {xs.shape[0]}")
    return np.concatenate(
        [build_symbol_matrix(xs[j], _shared_channel(mimo, j), mimo.grid) for j in range(mimo.n_t)]
    )


def reversal_matrix(n: int) -> np.ndarray:
    """Index-reversal permutation: row 0 keeps entry 0, row r takes entry n-r."""
    R = np.zeros((n, n))
    R[np.arange(n), (-np.arange(n)) % n] = 1.0
    return R


def build_permutation(grid: DDGrid) -> np.ndarray:
    """``P = P'_M kron P'_N``; maps ``x[k+Nl]`` to ``x[(-k)_N + N(-l)_M]``."""
    return np.kron(reversal_matrix(grid.M), reversal_matrix(grid.N))


def reversal_indices(grid: DDGrid) -> np.ndarray:
    """Gather indices of :func:`build_permutation` (``(P x)[i] = x[idx[i]]``)."""
    return np.argmax(build_permutation(grid), axis=1)


@dataclass(frozen=True)
class StcCodeword:
    """Two-frame Alamouti codeword.

    ``frames[t, j]`` is the length-``MN`` vector sent from transmit antenna
    ``j`` during frame ``t``.
    """

    frames: np.ndarray
    perm: np.ndarray


def stc_encode(x1: np.ndarray, x2: np.ndarray, grid: DDGrid) -> StcCodeword:
    """Frame 1 sends ``(x1, x2)``; frame 2 sends ``(-P x2*, P x1*)``."""
    P = build_permutation(grid)
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    frames = np.array([[x1, x2], [-P @ np.conj(x2), P @ np.conj(x1)]])
    return StcCodeword(frames, P)


def stc_blocks(blocks: np.ndarray) -> np.ndarray:
    """Alamouti stacked matrix from selected blocks of shape ``(..., n_s, 2, MN, MN)``.

    The first ``n_s`` block rows are ``[H_i1, H_i2]`` (frame 1); the next
    ``n_s`` rows are ``[H_i2^H, -H_i1^H]``, which act on the permuted and
    conjugated second-frame observations.
    """
    if blocks.shape[-3] != 2:
        raise ValueError("Alamouti STC needs exactly two transmit antennas")
    H1 = blocks[..., 0, :, :]
    H2 = blocks[..., 1, :, :]
    H1h = np.conj(np.swapaxes(H1, -1, -2))
    H2h = np.conj(np.swapaxes(H2, -1, -2))
    lower = np.stack([H2h, -H1h], axis=-3)
    return _stack_blocks(np.concatenate([blocks, lower], axis=-4))


def stc_assemble(mimo: MimoChannel, sel: SelectionResult | Sequence[int], grid: DDGrid | None = None) -> np.ndarray:
    """``2*n_s*MN x 2*MN`` stacked Alamouti system for the selected antennas."""
    if mimo.n_t != 2:
        raise ValueError(f"Alamouti STC needs n_t == 2, got {mimo.n_t}")
    idx = sel.selected if isinstance(sel, SelectionResult) else tuple(sel)
    blocks = np.array([[mimo.block(i, j) for j in range(2)] for i in idx])
    return stc_blocks(blocks)


def stc_receive(mimo: MimoChannel, sel, codeword: StcCodeword, noise=None) -> np.ndarray:
    """Simulate both frames and form the stacked observation.

    Returns ``[y_11 .. y_ns1, (P y_12)* .. (P y_ns2)*]`` for the selected
    antennas.  ``noise`` (optional) has shape ``(2, n_s, MN)``.
    """
    idx = sel.selected if isinstance(sel, SelectionResult) else tuple(sel)
    out1, out2 = [], []
    for s, i in enumerate(idx):
        y = [sum(mimo.block(i, j) @ codeword.frames[t, j] for j in range(2)) for t in range(2)]
        if noise is not None:
            y = [y[t] + noise[t, s] for t in range(2)]
        out1.append(y[0])
        out2.append(np.conj(codeword.perm @ y[1]))
    return np.concatenate(out1 + out2)


def stc_symbol_matrix(x1: np.ndarray, x2: np.ndarray, mimo: MimoChannel) -> np.ndarray:
    """``2P x 2MN`` alternate-form codeword matrix.

    Columns ``0..MN-1`` come from frame 1, the rest from the frame-2
    transmit vectors ``-P x2*`` and ``P x1*``.
    """
    cw = stc_encode(x1, x2, mimo.grid)
    ch = [_shared_channel(mimo, j) for j in range(2)]
    top = np.concatenate([build_symbol_matrix(cw.frames[t, 0], ch[0], mimo.grid) for t in range(2)], axis=1)
    bot = np.concatenate([build_symbol_matrix(cw.frames[t, 1], ch[1], mimo.grid) for t in range(2)], axis=1)
    return np.concatenate([top, bot])
