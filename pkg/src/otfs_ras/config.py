"""System configuration shared by the analysis, simulation and CLI layers."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .channel import max_doppler, resolve_taps
from .ddcore import DDGrid
from .detect import Alphabet, get_alphabet

MODES = ("simo", "mimo", "stc")
DETECTORS = ("ml", "mmse")
CHANNEL_MODELS = ("integer", "fractional")

#: 4 GHz carrier at 506.2 km/h
DEFAULT_NU_MAX = round(max_doppler(4e9, 506.2), 1)


@dataclass(frozen=True)
class SystemConfig:
    """One multi-antenna OTFS link with receive antenna selection.

    ``taps`` is a preset name (see :data:`otfs_ras.channel.PRESETS`) or
    ``None`` for the default profile of ``P`` and the grid.  ``nu_max`` is
    only used by the fractional channel model.
    """

    mode: str = "simo"
    M: int = 2
    N: int = 2
    P: int = 1
    n_t: int = 1
    n_r: int = 1
    n_s: int = 1
    alphabet: str = "BPSK"
    phase_rotation: bool = False
    detector: str = "ml"
    channel: str = "integer"
    taps: Optional[str] = None
    nu_max: float = DEFAULT_NU_MAX
    delta_f: float = 3.75e3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.detector not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}, got {self.detector!r}")
        if self.channel not in CHANNEL_MODELS:
            raise ValueError(f"channel must be one of {CHANNEL_MODELS}, got {self.channel!r}")
        if self.mode == "simo" and self.n_t != 1:
            raise ValueError("simo mode needs n_t=1")
        if self.mode == "stc" and self.n_t != 2:
            raise ValueError("stc mode needs n_t=2 (Alamouti)")
        if self.mode == "mimo" and self.n_t < 1:
            raise ValueError("mimo mode needs n_t >= 1")
        if not 1 <= self.n_s <= self.n_r:
            raise ValueError(f"need 1 <= n_s <= n_r, got n_s={self.n_s}, n_r={self.n_r}")
        if self.P < 1:
            raise ValueError("P must be at least 1")
        get_alphabet(self.alphabet)
        if self.channel == "integer":
            resolve_taps(self.P, self.taps, self.grid)

    @property
    def grid(self) -> DDGrid:
        return DDGrid(self.M, self.N, self.delta_f)

    @property
    def constellation(self) -> Alphabet:
        return get_alphabet(self.alphabet)

    @property
    def n_sym(self) -> int:
        """Information symbols per codeword (two frames for STC)."""
        return self.n_t * self.M * self.N

    @property
    def bits_per_codeword(self) -> int:
        return self.n_sym * self.constellation.bits_per_symbol

    @property
    def tap_layout(self) -> tuple[tuple[int, int], ...]:
        return resolve_taps(self.P, self.taps, self.grid)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce_field(name: str, value):
    """Convert a textual value to the type of ``SystemConfig.<name>``."""
    types = {f.name: f.type for f in fields(SystemConfig)}
    if name not in types:
        raise KeyError(name)
    if not isinstance(value, str):
        return value
    kind = types[name]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        return _parse_bool(value)
    if kind == "Optional[str]":
        return None if value.strip().lower() in ("", "none") else value.strip()
    return value.strip()
