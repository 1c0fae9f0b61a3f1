"""Delay-Doppler grid bookkeeping and the discrete OTFS relations.

Vectors on the grid follow a single convention everywhere in the package:
the symbol at Doppler index ``k`` and delay index ``l`` sits at flat index
``k + N*l``.  A two-dimensional grid array is stored with shape ``(N, M)``
(Doppler along axis 0, delay along axis 1), so vectorization is a
column-major flatten.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .channel import DDChannel


@dataclass(frozen=True)
class DDGrid:
    """Critically sampled delay-Doppler grid.

    Parameters
    ----------
    M : int
        Number of delay bins.
    N : int
        Number of Doppler bins.
    delta_f : float
        Subcarrier spacing in Hz.
    T : float, optional
        Symbol time in seconds.  Defaults to ``1/delta_f``; any other value
        is rejected.
    """

    M: int
    N: int
    delta_f: float = 3.75e3
    T: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 1 or self.N < 1:
            raise ValueError(f"grid dimensions must be positive integers, got M={self.M}, N={self.N}")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")
        if self.T is None:
            object.__setattr__(self, "T", 1.0 / self.delta_f)
        elif not np.isclose(self.T * self.delta_f, 1.0, rtol=1e-12, atol=0.0):
            raise ValueError("T * delta_f must equal 1 (critically sampled lattice)")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def delay_resolution(self) -> float:
        """Delay bin width ``1/(M*delta_f)`` in seconds."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self) -> float:
        """Doppler bin width ``1/(N*T)`` in Hz."""
        return 1.0 / (self.N * self.T)


def _check_grid_shape(a: np.ndarray, grid: DDGrid) -> np.ndarray:
    a = np.asarray(a)
    if a.shape[-2:] != (grid.N, grid.M):
        raise ValueError(f"expected trailing shape (N, M)=({grid.N}, {grid.M}), got {a.shape}")
    return a


def isfft(dd: np.ndarray, grid: DDGrid) -> np.ndarray:
    """Map an ``(N, M)`` delay-Doppler grid to the time-frequency grid.

    ``X[n, m] = 1/sqrt(MN) * sum_k sum_l x[k, l] exp(j2pi(nk/N - ml/M))``
    with rectangular windowing.  Leading batch axes are allowed.
    """
    dd = _check_grid_shape(dd, grid)
    return np.fft.ifft(np.fft.fft(dd, axis=-1, norm="ortho"), axis=-2, norm="ortho")


def sfft(tf: np.ndarray, grid: DDGrid) -> np.ndarray:
    """Inverse of :func:`isfft`: time-frequency grid back to delay-Doppler."""
    tf = _check_grid_shape(tf, grid)
    return np.fft.ifft(np.fft.fft(tf, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def vec_index(k, l, grid: DDGrid):
    """Flat index ``k + N*l`` of Doppler bin ``k`` and delay bin ``l``."""
    k = np.asarray(k)
    l = np.asarray(l)
    if np.any((k < 0) | (k >= grid.N)) or np.any((l < 0) | (l >= grid.M)):
        raise IndexError("Doppler index must lie in [0, N) and delay index in [0, M)")
    idx = k + grid.N * l
    return int(idx) if idx.ndim == 0 else idx


def devec_index(idx, grid: DDGrid):
    """Inverse of :func:`vec_index`; returns ``(k, l)``."""
    idx = np.asarray(idx)
    if np.any((idx < 0) | (idx >= grid.MN)):
        raise IndexError("flat index out of range")
    k, l = idx % grid.N, idx // grid.N
    if idx.ndim == 0:
        return int(k), int(l)
    return k, l


def vectorize(dd: np.ndarray, grid: DDGrid) -> np.ndarray:
    """Flatten an ``(N, M)`` grid (or a batch of them) into length-``MN`` vectors."""
    dd = _check_grid_shape(dd, grid)
    return np.swapaxes(dd, -1, -2).reshape(dd.shape[:-2] + (grid.MN,))


def devectorize(x: np.ndarray, grid: DDGrid) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    x = np.asarray(x)
    if x.shape[-1] != grid.MN:
        raise ValueError(f"expected trailing length {grid.MN}, got {x.shape}")
    return np.swapaxes(x.reshape(x.shape[:-1] + (grid.M, grid.N)), -1, -2)


def shift_indices(alpha: int, beta: int, grid: DDGrid) -> np.ndarray:
    """Source index of every output bin for a cyclic shift by (alpha, beta).

    Entry ``k + N*l`` is ``(k - beta)_N + N*(l - alpha)_M``.
    """
    k = np.arange(grid.N)[:, None]
    l = np.arange(grid.M)[None, :]
    src = (k - beta) % grid.N + grid.N * ((l - alpha) % grid.M)
    return src.T.reshape(-1)


def shift_matrix(alpha: int, beta: int, grid: DDGrid) -> np.ndarray:
    """Permutation matrix ``S`` with ``(S x)[k+Nl] = x[(k-beta)_N + N(l-alpha)_M]``."""
    S = np.zeros((grid.MN, grid.MN))
    S[np.arange(grid.MN), shift_indices(alpha, beta, grid)] = 1.0
    return S


def _require_distinct_taps(channel: "DDChannel", grid: DDGrid) -> None:
    seen = set()
    for p in channel.paths:
        key = (p.alpha % grid.M, p.beta % grid.N)
        if key in seen:
            raise ValueError(f"duplicate delay-Doppler tap (alpha, beta)={key}")
        seen.add(key)


def build_channel_matrix(channel: "DDChannel", grid: DDGrid) -> np.ndarray:
    """Dense ``MN x MN`` effective channel for an integer-tap channel.

    Row ``k+Nl`` holds ``h_i exp(-j2pi nu_i tau_i)`` at column
    ``(k-beta_i)_N + N(l-alpha_i)_M`` for every path ``i``.
    """
    if not channel.is_integer:
        raise ValueError("build_channel_matrix needs integer taps; use build_fractional_channel_matrix")
    _require_distinct_taps(channel, grid)
    H = np.zeros((grid.MN, grid.MN), dtype=complex)
    rows = np.arange(grid.MN)
    for p, g in zip(channel.paths, channel.effective_gains):
        H[rows, shift_indices(p.alpha, p.beta, grid)] += g
    return H


def build_symbol_matrix(x: np.ndarray, channel: "DDChannel", grid: DDGrid) -> np.ndarray:
    """``P x MN`` symbol matrix ``X`` such that ``h' @ X == (H @ x)^T``.

    Row ``p`` is the transmit vector as seen through path ``p`` with unit
    gain.  For integer taps that is ``x`` at the cyclically shifted indices;
    for fractional taps the row carries the path's spreading kernel as well.
    """
    x = np.asarray(x)
    if x.shape[-1] != grid.MN:
        raise ValueError(f"transmit vector must have length {grid.MN}, got {x.shape}")
    if channel.is_integer:
        idx = np.stack([shift_indices(p.alpha, p.beta, grid) for p in channel.paths])
        return x[..., idx]
    from .channel import path_kernel

    rows = [path_kernel(p, grid) @ x[..., None] for p in channel.paths]
    return np.stack([r[..., 0] for r in rows], axis=-2)


def make_phase_rotation(grid: DDGrid, scale: float = 1.0) -> np.ndarray:
    """Diagonal of the phase rotation matrix, ``phi_i = exp(j * scale * i)``.

    With ``scale=1`` the exponents ``a_i = i`` are distinct algebraic reals,
    so every ``phi_i`` with ``i > 0`` is transcendental.
    """
    return np.exp(1j * scale * np.arange(grid.MN))


def apply_phase_rotation(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Rotate each length-``MN`` segment of ``x`` by ``phi`` elementwise.

    ``x`` may hold several stacked transmit vectors along its last axis
    (length a multiple of ``MN``); each segment gets the same rotation.
    """
    x = np.asarray(x)
    reps, rem = divmod(x.shape[-1], phi.shape[0])
    if rem:
        raise ValueError("vector length is not a multiple of the rotation length")
    return x * np.tile(phi, reps)
