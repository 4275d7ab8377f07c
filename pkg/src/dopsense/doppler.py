"""Doppler spectra from slow-time CFR windows.

A window of N consecutive sanitized packets per sub-channel row is tapered,
zero-padded to n_bins points and Fourier transformed along slow time; the
per-bin powers are summed over sub-channels:

    d(u) = sum_k | DFT_n[ H_k(n) w(n) ] (u) |^2

Bin u maps to radial velocity u * c / (carrier * packet_interval * n_bins).
Power vectors are turned into classifier traces by dB-scaling against the
per-vector peak with a noise floor `threshold_db` below it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonContiguousWindowError
from .ofdm import SPEED_OF_LIGHT
from .validation import check_complex_matrix

try:
    from sklearn.base import BaseEstimator, TransformerMixin
except ImportError:  # pragma: no cover
    BaseEstimator = object

    class TransformerMixin:
        def fit_transform(self, X, y=None, **kw):
            return self.fit(X, y, **kw).transform(X)


__all__ = [
    "DopplerParams",
    "DopplerVector",
    "DopplerTrace",
    "doppler_bins",
    "bin_to_velocity",
    "velocity_axis",
    "window_matrix",
    "doppler_vector",
    "sliding_doppler",
    "threshold_and_scale",
    "iter_traces",
    "TraceBuilder",
    "DopplerExtractor",
]


@dataclass(frozen=True)
class DopplerParams:
    """Doppler extraction knobs.

    window_size  : packets per analysis window (N)
    n_bins       : DFT length after zero padding (N_D >= N)
    trace_length : Doppler vectors stacked into one classifier trace (N_w)
    threshold_db : floor depth below the per-vector peak
    window       : slow-time taper, "hann" or "rect"
    stride       : packets between consecutive window starts
    """

    window_size: int = 31
    n_bins: int = 100
    trace_length: int = 340
    threshold_db: float = 12.0
    window: str = "hann"
    stride: int = 1

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.n_bins < self.window_size:
            raise ValueError("n_bins must be >= window_size (zero padding only)")
        if self.trace_length < 1:
            raise ValueError("trace_length must be >= 1")
        if self.threshold_db < 0:
            raise ValueError("threshold_db must be >= 0")
        if self.window not in ("hann", "rect"):
            raise ValueError("window must be 'hann' or 'rect'")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def taper(self):
        if self.window == "hann":
            return np.hanning(self.window_size)
        return np.ones(self.window_size)


@dataclass(frozen=True)
class DopplerVector:
    """Linear per-bin power for one window start."""

    powers: np.ndarray
    start_packet: int = 0
    antenna_index: int = 0


@dataclass(frozen=True)
class DopplerTrace:
    """Stack of consecutive Doppler vectors, rows ordered by time."""

    matrix: np.ndarray
    start_packet: int = 0
    antenna_index: int = 0
    scale: str = "db"


def doppler_bins(params):
    """Bin indices u after fftshift: -n_bins/2 .. n_bins/2 - 1."""
    half = params.n_bins // 2
    return np.arange(-half, params.n_bins - half)


def bin_to_velocity(u, params, ofdm):
    """Radial velocity (m/s) represented by bin u."""
    u_arr = np.asarray(u, dtype=np.float64)
    half = params.n_bins // 2
    if np.any(u_arr < -half) or np.any(u_arr >= params.n_bins - half):
        raise ValueError(f"bin index outside [-{half}, {params.n_bins - half - 1}]")
    scale = SPEED_OF_LIGHT / (ofdm.carrier_freq * ofdm.packet_interval * params.n_bins)
    out = u_arr * scale
    return out if np.ndim(u) else float(out)


def velocity_axis(params, ofdm):
    return bin_to_velocity(doppler_bins(params), params, ofdm)


def window_matrix(packets, params):
    """Stack N consecutive same-antenna packets into a (n_rows, N) matrix."""
    packets = list(packets)
    if len(packets) != params.window_size:
        raise ValueError(
            f"expected {params.window_size} packets, got {len(packets)}"
        )
    antennas = {p.antenna_index for p in packets}
    if len(antennas) != 1:
        raise NonContiguousWindowError("window mixes antennas")
    indices = [p.packet_index for p in packets]
    if indices != list(range(indices[0], indices[0] + len(indices))):
        raise NonContiguousWindowError(
            f"window packets are not consecutive: {indices}"
        )
    lengths = {p.values.size for p in packets}
    if len(lengths) != 1:
        raise ValueError("packets disagree in sub-channel count")
    return np.stack([np.asarray(p.values, dtype=np.complex128) for p in packets], axis=1)


def doppler_vector(window, params):
    """Linear power spectrum d(u) of one (n_rows, N) window matrix."""
    window = check_complex_matrix(window, "window")
    if window.shape[1] != params.window_size:
        raise ValueError(
            f"window has {window.shape[1]} packets, expected {params.window_size}"
        )
    tapered = window * params.taper()[None, :]
    spectrum = np.fft.fftshift(np.fft.fft(tapered, n=params.n_bins, axis=1), axes=1)
    return (spectrum.real**2 + spectrum.imag**2).sum(axis=0)


def sliding_doppler(cfr, params, chunk=256):
    """Doppler vectors of every window of a (n_packets, n_rows) CFR matrix.

    Returns (n_windows, n_bins) linear powers; window i starts at packet
    i * stride. Memory stays bounded by processing `chunk` windows at a time.
    """
    cfr = check_complex_matrix(cfr, "cfr")
    n_packets = cfr.shape[0]
    if n_packets < params.window_size:
        raise ValueError("not enough packets for a single window")
    starts = np.arange(0, n_packets - params.window_size + 1, params.stride)
    taper = params.taper()
    out = np.empty((starts.size, params.n_bins))
    windows = np.lib.stride_tricks.sliding_window_view(
        cfr, params.window_size, axis=0
    )  # (n_starts_all, n_rows, N) view
    for lo in range(0, starts.size, chunk):
        hi = min(lo + chunk, starts.size)
        block = windows[starts[lo:hi]] * taper
        spectrum = np.fft.fftshift(np.fft.fft(block, n=params.n_bins, axis=2), axes=2)
        out[lo:hi] = (spectrum.real**2 + spectrum.imag**2).sum(axis=1)
    return out


def threshold_and_scale(powers, params):
    """dB-scale against the vector peak, flooring threshold_db below it.

    All-zero input yields an all-floor vector rather than an error.
    """
    d = np.asarray(powers, dtype=np.float64)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("powers must be finite and non-negative")
    peak = d.max()
    floor = -float(params.threshold_db)
    if peak <= 0.0:
        return np.full(d.shape, floor)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(d / peak)
    return np.maximum(db, floor)


class TraceBuilder:
    """Incremental trace assembly from a stream of Doppler vectors.

    push() returns a DopplerTrace whenever the last trace_length vectors are
    complete and the configured trace stride has elapsed, else None.
    """

    def __init__(self, params, trace_stride=1, scale="db"):
        if trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")
        if scale not in ("db", "linear"):
            raise ValueError("scale must be 'db' or 'linear'")
        self.params = params
        self.trace_stride = int(trace_stride)
        self.scale = scale
        self._rows = []
        self._starts = []
        self._since_emit = None
        self._antenna = None

    def push(self, vector):
        if self._antenna is None:
            self._antenna = vector.antenna_index
        elif vector.antenna_index != self._antenna:
            raise NonContiguousWindowError("trace mixes antennas")
        row = (
            threshold_and_scale(vector.powers, self.params)
            if self.scale == "db"
            else np.asarray(vector.powers, dtype=np.float64)
        )
        self._rows.append(row)
        self._starts.append(vector.start_packet)
        n_w = self.params.trace_length
        if len(self._rows) > n_w:
            self._rows.pop(0)
            self._starts.pop(0)
        if len(self._rows) < n_w:
            return None
        if self._since_emit is None or self._since_emit >= self.trace_stride:
            self._since_emit = 1
            return DopplerTrace(
                matrix=np.stack(self._rows),
                start_packet=self._starts[0],
                antenna_index=self._antenna,
                scale=self.scale,
            )
        self._since_emit += 1
        return None


def iter_traces(vectors, params, trace_stride=1, scale="db"):
    """Generator form of TraceBuilder over an iterable of DopplerVector."""
    builder = TraceBuilder(params, trace_stride=trace_stride, scale=scale)
    for vector in vectors:
        trace = builder.push(vector)
        if trace is not None:
            yield trace


class DopplerExtractor(TransformerMixin, BaseEstimator):
    """Estimator wrapper: CFR packet matrix in, Doppler vectors out.

    transform() maps (n_packets, n_rows) complex to (n_windows, n_bins)
    linear power; traces() stacks them into (n_traces, trace_length, n_bins)
    dB matrices ready for the classifier.
    """

    def __init__(
        self,
        window_size=31,
        n_bins=100,
        trace_length=340,
        threshold_db=12.0,
        window="hann",
        stride=1,
        trace_stride=1,
    ):
        self.window_size = window_size
        self.n_bins = n_bins
        self.trace_length = trace_length
        self.threshold_db = threshold_db
        self.window = window
        self.stride = stride
        self.trace_stride = trace_stride

    def _params(self):
        return DopplerParams(
            window_size=self.window_size,
            n_bins=self.n_bins,
            trace_length=self.trace_length,
            threshold_db=self.threshold_db,
            window=self.window,
            stride=self.stride,
        )

    def fit(self, X=None, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X):
        if not hasattr(self, "params_"):
            raise RuntimeError("DopplerExtractor must be fitted before transform")
        return sliding_doppler(X, self.params_)

    def traces(self, X):
        """All complete dB traces of one packet matrix."""
        powers = self.transform(X)
        params = self.params_
        n_w = params.trace_length
        if powers.shape[0] < n_w:
            return np.empty((0, n_w, params.n_bins))
        db = np.stack([threshold_and_scale(row, params) for row in powers])
        starts = np.arange(0, db.shape[0] - n_w + 1, self.trace_stride)
        return np.stack([db[s : s + n_w] for s in starts])
