"""Random delay-Doppler channel realizations.

Two channel laws are provided.  The integer model puts every path exactly on
a grid bin with i.i.d. ``CN(0, 1/P)`` gains.  The fractional model draws
Jakes Dopplers and uniform delays, splits them into integer bins plus
fractional offsets, and spreads every path over the whole grid through
Dirichlet-type kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ddcore import DDGrid

SPEED_OF_LIGHT = 299_792_458.0

#: Tap layouts ``(alpha, beta)`` of the fixed simulation profiles, keyed by name.
#: ``p2-m2`` is the two-path profile used with N=2 (M=2 or 4);
#: ``p2-m4`` is the two-path profile used with M=N=4.
PRESETS: dict[str, tuple[tuple[int, int], ...]] = {
    "p1": ((1, 1),),
    "p2-m2": ((0, 0), (1, 1)),
    "p2-m4": ((1, 1), (2, 2)),
    "p4": ((0, 0), (0, 1), (1, 0), (1, 1)),
}


def max_doppler(carrier_hz: float, speed_kmh: float) -> float:
    """Maximum Doppler shift in Hz for a carrier and a speed in km/h."""
    return speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def split_offset(x: float) -> tuple[int, float]:
    """Split ``x`` into nearest integer and remainder in ``(-1/2, 1/2]``."""
    n = math.ceil(x - 0.5)
    return int(n), float(x - n)


@dataclass(frozen=True)
class DDPath:
    """One propagation path.

    ``delay == (alpha + frac_a) / (M*delta_f)`` and
    ``doppler == (beta + frac_b) / (N*T)`` for the grid the path was built on.
    """

    gain: complex
    delay: float
    doppler: float
    alpha: int
    beta: int
    frac_a: float = 0.0
    frac_b: float = 0.0

    @classmethod
    def from_bins(cls, gain, alpha, beta, grid: DDGrid, frac_a=0.0, frac_b=0.0) -> "DDPath":
        if not (-0.5 < frac_a <= 0.5 and -0.5 < frac_b <= 0.5):
            raise ValueError("fractional offsets must lie in (-1/2, 1/2]")
        return cls(
            gain=complex(gain),
            delay=(alpha + frac_a) * grid.delay_resolution,
            doppler=(beta + frac_b) * grid.doppler_resolution,
            alpha=int(alpha),
            beta=int(beta),
            frac_a=float(frac_a),
            frac_b=float(frac_b),
        )

    @classmethod
    def from_physical(cls, gain, delay, doppler, grid: DDGrid) -> "DDPath":
        alpha, a = split_offset(delay / grid.delay_resolution)
        beta, b = split_offset(doppler / grid.doppler_resolution)
        return cls(complex(gain), float(delay), float(doppler), alpha, beta, a, b)

    @property
    def is_integer(self) -> bool:
        return self.frac_a == 0.0 and self.frac_b == 0.0

    @property
    def effective_gain(self) -> complex:
        """``h * exp(-j2pi nu tau)``, the gain seen in the discrete relation."""
        return self.gain * np.exp(-2j * np.pi * self.doppler * self.delay)


@dataclass(frozen=True)
class DDChannel:
    """Immutable multipath realization.  One instance serves both frames of an
    Alamouti codeword (the channel is quasi-static over the codeword)."""

    paths: tuple[DDPath, ...]

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def P(self) -> int:
        return len(self.paths)

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def effective_gains(self) -> np.ndarray:
        return np.array([p.effective_gain for p in self.paths], dtype=complex)

    @property
    def taps(self) -> tuple[tuple[int, int], ...]:
        return tuple((p.alpha, p.beta) for p in self.paths)

    @property
    def is_integer(self) -> bool:
        return all(p.is_integer for p in self.paths)


def resolve_taps(P: int, taps: str | Sequence[tuple[int, int]] | None, grid: DDGrid):
    """Turn a preset name, explicit tap list or ``None`` into a tap tuple.

    ``None`` selects the profile matching ``P`` and the grid size.
    """
    if taps is None:
        if P == 1:
            taps = "p1"
        elif P == 2:
            taps = "p2-m4" if (grid.M, grid.N) == (4, 4) else "p2-m2"
        elif P == 4:
            taps = "p4"
        else:
            raise ValueError(f"no preset DD profile for P={P}; pass taps explicitly")
    if isinstance(taps, str):
        try:
            taps = PRESETS[taps]
        except KeyError:
            raise ValueError(f"unknown DD profile preset {taps!r}; choose from {sorted(PRESETS)}") from None
    taps = tuple((int(a), int(b)) for a, b in taps)
    if len(taps) != P:
        raise ValueError(f"profile has {len(taps)} taps but P={P}")
    folded = {(a % grid.M, b % grid.N) for a, b in taps}
    if len(folded) != len(taps):
        raise ValueError("delay-Doppler taps must occupy distinct bins")
    return taps


def cn(rng: np.random.Generator, shape, var: float | np.ndarray = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with variance ``var``."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z * np.sqrt(np.asarray(var) / 2.0)


def gen_integer_channel(P: int, taps, grid: DDGrid, rng: np.random.Generator) -> DDChannel:
    """Uniform scattering profile: i.i.d. ``CN(0, 1/P)`` gains on fixed taps."""
    taps = resolve_taps(P, taps, grid)
    gains = cn(rng, P, 1.0 / P)
    return DDChannel(tuple(DDPath.from_bins(g, a, b, grid) for g, (a, b) in zip(gains, taps)))


def exponential_pdp(P: int, decay: float = 1.0) -> np.ndarray:
    """Path powers ``p_i ~ exp(-decay * i / P)`` normalized to unit sum."""
    p = np.exp(-decay * np.arange(P) / P)
    return p / p.sum()


def gen_fractional_channel(
    P: int,
    nu_max: float,
    grid: DDGrid,
    rng: np.random.Generator,
    pdp_decay: float = 1.0,
) -> DDChannel:
    """Jakes Doppler, uniform delay over ``[0, (M-1)T_s]``, exponential PDP.

    Paths are sorted by delay before the power profile is applied, so the
    earliest path is the strongest on average.
    """
    if nu_max <= 0:
        raise ValueError("nu_max must be positive")
    theta = rng.uniform(-np.pi, np.pi, P)
    doppler = nu_max * np.cos(theta)
    delay = np.sort(rng.uniform(0.0, (grid.M - 1) * grid.delay_resolution, P))
    gains = cn(rng, P, exponential_pdp(P, pdp_decay))
    return DDChannel(
        tuple(DDPath.from_physical(g, t, v, grid) for g, t, v in zip(gains, delay, doppler))
    )


def delay_kernel(frac_a, M: int) -> np.ndarray:
    """Delay spreading coefficients for ``q = 0..M-1``.

    ``(exp(j2pi(-q-a)) - 1) / (M exp(j2pi(-q-a)/M) - M)``, evaluated as the
    equivalent geometric sum ``(1/M) sum_m exp(j2pi m(-q-a)/M)`` so the
    removable singularity at integer ``q + a`` needs no special case.
    Broadcasts over a leading array of offsets.
    """
    frac_a = np.asarray(frac_a, dtype=float)[..., None, None]
    q = np.arange(M)[:, None]
    m = np.arange(M)[None, :]
    return np.exp(2j * np.pi * m * (-q - frac_a) / M).mean(axis=-1)


def doppler_kernel(frac_b, N: int) -> np.ndarray:
    """Doppler spreading coefficients for ``q' = 0..N-1`` (conjugate sign convention)."""
    frac_b = np.asarray(frac_b, dtype=float)[..., None, None]
    q = np.arange(N)[:, None]
    n = np.arange(N)[None, :]
    return np.exp(-2j * np.pi * n * (-q - frac_b) / N).mean(axis=-1)


def _circulant_spread(coef: np.ndarray, shift, size: int) -> np.ndarray:
    """``C[..., r, (r - shift + q) % size] = coef[..., q]``."""
    shift = np.asarray(shift)
    r = np.arange(size)[:, None]
    q = np.arange(size)[None, :]
    cols = (r - shift[..., None, None] + q) % size
    out = np.zeros(coef.shape[:-1] + (size, size), dtype=complex)
    np.put_along_axis(out, cols, np.broadcast_to(coef[..., None, :], cols.shape), axis=-1)
    return out


def spreading_matrices(alpha, beta, frac_a, frac_b, grid: DDGrid) -> np.ndarray:
    """Unit-gain ``MN x MN`` spreading matrices, broadcast over leading axes.

    The delay part acts on the delay index and the Doppler part on the
    Doppler index; with ``k + N*l`` ordering the joint matrix is their
    Kronecker product (delay factor outer).
    """
    CM = _circulant_spread(delay_kernel(frac_a, grid.M), alpha, grid.M)
    CN = _circulant_spread(doppler_kernel(frac_b, grid.N), beta, grid.N)
    K = CM[..., :, None, :, None] * CN[..., None, :, None, :]
    return K.reshape(K.shape[:-4] + (grid.MN, grid.MN))


def path_kernel(path: DDPath, grid: DDGrid) -> np.ndarray:
    """Spreading matrix of a single path with unit gain."""
    return spreading_matrices(path.alpha, path.beta, path.frac_a, path.frac_b, grid)


def build_fractional_channel_matrix(channel: DDChannel, grid: DDGrid) -> np.ndarray:
    """Dense effective channel including fractional delay/Doppler spreading.

    No truncation of the spreading sums is applied.  Integer channels give
    the same matrix as :func:`~otfs_ras.ddcore.build_channel_matrix`.
    """
    p = channel.paths
    K = spreading_matrices(
        np.array([x.alpha for x in p]),
        np.array([x.beta for x in p]),
        np.array([x.frac_a for x in p]),
        np.array([x.frac_b for x in p]),
        grid,
    )
    return np.einsum("p,pij->ij", channel.effective_gains, K)
