"""OFDM grid bookkeeping.

Everything downstream hangs off OfdmConfig: sub-channel spacing is tied
to the symbol time (spacing = 1/symbol_time), and sub-channels are indexed
k = -K/2 .. K/2-1 around the carrier.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .validation import check_positive, check_subchannels

__all__ = ["OfdmConfig", "default_used_subchannels", "SPEED_OF_LIGHT"]


def default_used_subchannels():
    """Data sub-channels of an 802.11ac 80 MHz channel: +-2..+-122 (242 total)."""
    k = np.arange(-122, 123)
    return k[np.abs(k) >= 2]


@dataclass(frozen=True, eq=False)
class OfdmConfig:
    """Static OFDM channel geometry.

    n_subchannels : total sub-channel count K (even)
    symbol_time   : OFDM symbol duration in seconds (sets the spacing 1/T)
    cp_time       : cyclic-prefix duration in seconds
    carrier_freq  : carrier frequency in Hz
    packet_interval : spacing between CFR estimates in seconds
    used_subchannels : strictly increasing indices of measured sub-channels
    """

    n_subchannels: int = 256
    symbol_time: float = 3.2e-6
    cp_time: float = 0.8e-6
    carrier_freq: float = 5.21e9
    packet_interval: float = 6e-3
    used_subchannels: np.ndarray = field(default_factory=default_used_subchannels)

    def __post_init__(self):
        if self.n_subchannels < 2 or self.n_subchannels % 2 != 0:
            raise ValueError("n_subchannels must be an even integer >= 2")
        check_positive(self.symbol_time, "symbol_time")
        check_positive(self.carrier_freq, "carrier_freq")
        check_positive(self.packet_interval, "packet_interval")
        if self.cp_time < 0 or not np.isfinite(self.cp_time):
            raise ValueError("cp_time must be non-negative and finite")
        used = check_subchannels(
            self.used_subchannels, self.n_subchannels, "used_subchannels"
        )
        object.__setattr__(self, "used_subchannels", used)

    @property
    def subchannel_spacing(self):
        return 1.0 / self.symbol_time

    @property
    def n_used(self):
        return int(self.used_subchannels.size)

    def all_subchannels(self):
        half = self.n_subchannels // 2
        return np.arange(-half, half)

    def subchannel_frequencies(self, subchannels=None):
        """Absolute frequency of each sub-channel: carrier + k/T."""
        k = self.used_subchannels if subchannels is None else np.asarray(subchannels)
        return self.carrier_freq + k / self.symbol_time
