"""Waveform-level round trip used as an independent check on the CFR model.

Instead of evaluating the closed-form frequency response, this synthesizes
the time-domain OFDM symbol, passes it through each delay path at complex
baseband (the carrier rotation per path handled analytically), demodulates
by correlating against each sub-carrier over one symbol, and divides out
the transmitted symbols. On ideal paths the result must reproduce the
closed-form CFR to numerical precision.

The cyclic prefix never has to be materialized: the synthesized symbol is
periodic in T, so evaluating it at t - tau for tau <= cp_time is exactly
what the receiver would see inside its integration window.
"""

import numpy as np

from .simulate import path_delay

__all__ = ["waveform_roundtrip"]


def waveform_roundtrip(paths, ofdm, symbols, n=0, oversample=4):
    """Recover the CFR of `paths` at packet n from a simulated transmission.

    symbols : complex modulation symbols, one per used sub-channel, all nonzero
    oversample : time-grid density relative to n_subchannels; the grid must
        resolve every mixing product (m - k spans twice the sub-channel range),
        which oversample >= 4 guarantees, making the trapezoid rule exact for
        the periodic integrand.

    Returns the recovered complex CFR over ofdm.used_subchannels.
    """
    a = np.asarray(symbols, dtype=np.complex128)
    k = ofdm.used_subchannels
    if a.shape != (k.size,):
        raise ValueError(f"symbols must have shape ({k.size},), got {a.shape}")
    if np.any(a == 0):
        raise ValueError("symbols must be nonzero on every used sub-channel")
    if oversample < 4:
        raise ValueError("oversample must be >= 4 to keep the quadrature exact")

    T = ofdm.symbol_time
    m_grid = oversample * ofdm.n_subchannels
    t = np.linspace(0.0, T, m_grid + 1)

    received = np.zeros(t.size, dtype=np.complex128)
    for path in paths:
        tau = path_delay(path, n, ofdm)
        if tau > ofdm.cp_time:
            raise ValueError(
                f"path delay {tau:.3e} s exceeds the cyclic prefix "
                f"{ofdm.cp_time:.3e} s; the round trip would alias"
            )
        # baseband symbol evaluated at the delayed times; the carrier
        # contributes a constant rotation after downconversion
        shifted = np.exp(2j * np.pi * np.outer(t - tau, k) / T) @ a
        received += path.amplitude * np.exp(-2j * np.pi * ofdm.carrier_freq * tau) * shifted

    weights = np.full(t.size, T / m_grid)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    demod = np.exp(-2j * np.pi * np.outer(k, t) / T) @ (weights * received)
    return demod / (a * T)
