"""Synthetic activity corpus: labelled Doppler traces for classifier training.

Every example is generated from a fresh random scenario of one of five
motion families and reduced to a single dB-scaled Doppler trace. The
families are separated by their radial-speed bands and their velocity-sign
flip period, so a trained model has genuine structure to latch onto while
the corpus stays cheap enough to synthesize inside a test run.
"""

import numpy as np

from .doppler import DopplerParams, sliding_doppler, threshold_and_scale
from .ofdm import OfdmConfig, default_used_subchannels
from .simulate import PathSpec, Scenario, simulate_array

__all__ = [
    "ACTIVITY_CLASSES",
    "scenario_for_class",
    "trace_from_scenario",
    "make_activity_dataset",
]

# class label -> (speed band in m/s, sign flip period in windows, movers)
ACTIVITY_CLASSES = ("empty", "walk_slow", "walk_fast", "wave", "two_movers")

_SPEED_BANDS = {
    "walk_slow": (0.45, 0.7),
    "walk_fast": (1.4, 2.0),
    "wave": (0.9, 1.2),
}


def _alternating_schedule(rng, speed, n_packets, period):
    """Speed schedule flipping sign every `period` packets; bounds displacement."""
    n_entries = max(1, -(-n_packets // period))
    signs = float(rng.choice((-1.0, 1.0))) * (-1.0) ** np.arange(n_entries)
    return tuple(signs * speed), period


def _static_paths(rng):
    paths = [PathSpec.static(1.0, float(rng.uniform(4.0, 9.0)))]
    for _ in range(int(rng.integers(1, 3))):
        paths.append(
            PathSpec.static(float(rng.uniform(0.2, 0.5)), float(rng.uniform(6.0, 18.0)))
        )
    return paths


def _mover(rng, band, n_packets, period, amplitude_band=(0.4, 0.7)):
    speed = float(rng.uniform(*band))
    schedule, step = _alternating_schedule(rng, speed, n_packets, period)
    return PathSpec(
        amplitude=float(rng.uniform(*amplitude_band)),
        initial_length=float(rng.uniform(5.0, 12.0)),
        motion_angle_cos=float(rng.uniform(0.9, 1.0)),
        velocity_schedule=schedule,
        schedule_packets=step,
    )


def scenario_for_class(name, rng, ofdm, n_packets, window_size=31):
    """Random scenario whose Doppler signature matches the named family."""
    paths = _static_paths(rng)
    if name == "empty":
        pass
    elif name in ("walk_slow", "walk_fast"):
        paths.append(
            _mover(rng, _SPEED_BANDS[name], n_packets, period=3 * window_size)
        )
    elif name == "wave":
        paths.append(_mover(rng, _SPEED_BANDS[name], n_packets, period=window_size))
    elif name == "two_movers":
        for band in (_SPEED_BANDS["walk_slow"], _SPEED_BANDS["walk_fast"]):
            paths.append(
                _mover(
                    rng, band, n_packets,
                    period=3 * window_size,
                    amplitude_band=(0.4, 0.55),
                )
            )
    else:
        raise ValueError(f"unknown activity class {name!r}")
    return Scenario(
        ofdm=ofdm,
        paths=tuple(paths),
        n_antennas=1,
        n_packets=n_packets,
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def trace_from_scenario(scenario, params, rng=None, noise_std=0.0, antenna=0):
    """Offset-free CFR -> one dB trace of shape (trace_length, n_bins)."""
    cfr = simulate_array(scenario, include_offsets=False)[antenna].astype(np.complex128)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 needs an rng")
        scale = noise_std * np.abs(cfr).mean() / np.sqrt(2.0)
        cfr = cfr + scale * (
            rng.standard_normal(cfr.shape) + 1j * rng.standard_normal(cfr.shape)
        )
    powers = sliding_doppler(cfr, params)
    if powers.shape[0] < params.trace_length:
        raise ValueError(
            f"scenario too short: {powers.shape[0]} windows < trace_length"
        )
    rows = powers[: params.trace_length]
    return np.stack([threshold_and_scale(row, params) for row in rows]).astype(
        np.float32
    )


def make_activity_dataset(
    n_per_class=20,
    classes=None,
    params=None,
    subchannel_step=16,
    noise_std=0.02,
    seed=0,
    shuffle=True,
):
    """Labelled trace corpus (X, y, class_names).

    X has shape (n_per_class * n_classes, trace_length, n_bins) in dB,
    y holds integer labels into class_names. Sub-channels are thinned by
    `subchannel_step` since the Doppler signature is shared across them;
    that keeps generation fast without changing the spectra.
    """
    if classes is None:
        classes = ACTIVITY_CLASSES
    if params is None:
        params = DopplerParams()
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    used = default_used_subchannels()[:: max(1, int(subchannel_step))]
    ofdm = OfdmConfig(used_subchannels=tuple(int(k) for k in used))
    n_packets = params.trace_length + params.window_size - 1

    rng = np.random.default_rng(seed)
    X = np.empty(
        (n_per_class * len(classes), params.trace_length, params.n_bins),
        dtype=np.float32,
    )
    y = np.empty(n_per_class * len(classes), dtype=np.int64)
    row = 0
    for label, name in enumerate(classes):
        for _ in range(n_per_class):
            scenario = scenario_for_class(
                name, rng, ofdm, n_packets, window_size=params.window_size
            )
            X[row] = trace_from_scenario(
                scenario, params, rng=rng, noise_std=noise_std
            )
            y[row] = label
            row += 1
    if shuffle:
        order = rng.permutation(X.shape[0])
        X, y = X[order], y[order]
    return X, y, list(classes)
