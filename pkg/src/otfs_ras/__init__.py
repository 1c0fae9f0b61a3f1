"""OTFS with receive antenna selection: channels, detection, bounds and BER simulation."""

from .ddcore import DDGrid, isfft, sfft, vectorize, devectorize, make_phase_rotation
from .channel import DDChannel, DDPath, gen_integer_channel, gen_fractional_channel
from .multiant import MimoChannel, gen_mimo_channel, select_antennas
from .detect import BPSK, QAM16, Alphabet, ml_detect, mmse_detect

__version__ = "0.1.0"

__all__ = [
    "DDGrid", "isfft", "sfft", "vectorize", "devectorize", "make_phase_rotation",
    "DDChannel", "DDPath", "gen_integer_channel", "gen_fractional_channel",
    "MimoChannel", "gen_mimo_channel", "select_antennas",
    "BPSK", "QAM16", "Alphabet", "ml_detect", "mmse_detect",
]
