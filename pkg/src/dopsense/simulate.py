"""Multi-path CFR synthesis with hardware phase offsets.

The channel frequency response seen on sub-channel k at packet n is

    H_k(n) = sum_p A_p exp(-j 2 pi (f_c + k/T) tau_p(n))

with per-path delays tau_p(n) = (l_p + delta_p(n)) / c driven by radial
motion, delta_p(n) = -v_p cos(alpha_p) n T_c for constant speed. Receiver
imperfections multiply every sub-channel by a unit-modulus phasor

    exp(j phi_k),  phi_k = -2 pi k (tau_sfo + tau_pdd)/T + phi_cfo
                           + phi_ppo + phi_pa

where the timing terms are shared by all antennas and phi_ppo/phi_pa are
antenna specific.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .ofdm import SPEED_OF_LIGHT, OfdmConfig
from .validation import check_positive

__all__ = [
    "PathSpec",
    "OffsetSpec",
    "Scenario",
    "CfrPacket",
    "path_delay",
    "multipath_cfr",
    "cfr_clean",
    "offset_phases",
    "apply_offsets",
    "realize_cfo_phases",
    "simulate",
    "simulate_array",
]


@dataclass(frozen=True)
class PathSpec:
    """One propagation path.

    amplitude        : attenuation A_p >= 0 (constant over a stream)
    initial_length   : path length at packet 0 in metres
    velocity         : scatterer speed in m/s (ignored when a schedule is set)
    motion_angle_cos : cos of the angle between motion and the path, in [-1, 1]
    is_static        : marks a fixed reflector; forces zero motion
    velocity_schedule: optional per-step speeds; the active speed changes
                       every schedule_packets packets and the last entry
                       holds afterwards
    """

    amplitude: float
    initial_length: float
    velocity: float = 0.0
    motion_angle_cos: float = 1.0
    is_static: bool = False
    velocity_schedule: tuple = None
    schedule_packets: int = 31

    def __post_init__(self):
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ValueError("amplitude must be finite and >= 0")
        check_positive(self.initial_length, "initial_length")
        if abs(self.motion_angle_cos) > 1:
            raise ValueError("motion_angle_cos must lie in [-1, 1]")
        if self.velocity_schedule is not None:
            sched = tuple(float(v) for v in self.velocity_schedule)
            if len(sched) == 0:
                raise ValueError("velocity_schedule must not be empty")
            object.__setattr__(self, "velocity_schedule", sched)
            if self.schedule_packets < 1:
                raise ValueError("schedule_packets must be >= 1")
        if self.is_static:
            # a static reflector cannot carry motion parameters
            object.__setattr__(self, "velocity", 0.0)
            object.__setattr__(self, "velocity_schedule", None)

    @classmethod
    def static(cls, amplitude, initial_length):
        return cls(amplitude=amplitude, initial_length=initial_length, is_static=True)

    def displacement(self, n, packet_interval):
        """Accumulated radial length change delta(n) in metres (0 at n=0)."""
        n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n_arr < 0):
            raise ValueError("packet index must be >= 0")
        if self.is_static or (self.velocity_schedule is None and self.velocity == 0.0):
            out = np.zeros(n_arr.shape, dtype=np.float64)
        elif self.velocity_schedule is None:
            out = -self.velocity * self.motion_angle_cos * packet_interval * n_arr
        else:
            n_max = int(n_arr.max())
            steps = np.minimum(
                np.arange(n_max, dtype=np.int64) // self.schedule_packets,
                len(self.velocity_schedule) - 1,
            )
            speeds = np.asarray(self.velocity_schedule)[steps]
            # walked length up to (not including) packet m
            walked = np.concatenate(([0.0], np.cumsum(speeds) * packet_interval))
            out = -self.motion_angle_cos * walked[n_arr]
        return out if np.ndim(n) else float(out[0])


@dataclass(frozen=True)
class OffsetSpec:
    """Hardware phase-offset model for one receiver.

    tau_sfo / tau_pdd : timing offsets in seconds, constant over a stream
    cfo_mode          : "constant" or "walk" (Gaussian random walk per packet)
    cfo_phase         : CFO phase in radians (walk start when cfo_mode="walk")
    cfo_step          : walk step standard deviation in radians
    ppo               : per-antenna PLL phase in radians (scalar broadcasts)
    pa_multiples      : per-antenna phase ambiguity as integer multiples of pi
    """

    tau_sfo: float = 0.0
    tau_pdd: float = 0.0
    cfo_mode: str = "constant"
    cfo_phase: float = 0.0
    cfo_step: float = 0.1
    ppo: tuple = 0.0
    pa_multiples: tuple = 0

    def __post_init__(self):
        for name in ("tau_sfo", "tau_pdd"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0")
        if self.cfo_mode not in ("constant", "walk"):
            raise ValueError("cfo_mode must be 'constant' or 'walk'")
        if self.cfo_step < 0:
            raise ValueError("cfo_step must be >= 0")
        if np.ndim(self.ppo) > 0:
            object.__setattr__(self, "ppo", tuple(float(p) for p in self.ppo))
        if np.ndim(self.pa_multiples) > 0:
            multiples = tuple(int(m) for m in self.pa_multiples)
            if any(m != float(orig) for m, orig in zip(multiples, self.pa_multiples)):
                raise ValueError("pa_multiples must be integers")
            object.__setattr__(self, "pa_multiples", multiples)
        elif int(self.pa_multiples) != self.pa_multiples:
            raise ValueError("pa_multiples must be integers")

    @staticmethod
    def _per_antenna(value, antenna):
        if np.ndim(value) == 0:
            return value
        if antenna >= len(value):
            raise ValueError(
                f"antenna index {antenna} outside per-antenna offset list"
            )
        return value[antenna]

    def ppo_for(self, antenna):
        return float(self._per_antenna(self.ppo, antenna))

    def pa_for(self, antenna):
        """Phase ambiguity in radians (an integer multiple of pi)."""
        return float(self._per_antenna(self.pa_multiples, antenna)) * np.pi

    @classmethod
    def random(cls, rng, n_antennas=1, tau_max=100e-9, cfo_mode="walk", cfo_step=0.1):
        """Draw a random but physically plausible offset set."""
        return cls(
            tau_sfo=float(rng.uniform(0.0, tau_max)),
            tau_pdd=float(rng.uniform(0.0, tau_max)),
            cfo_mode=cfo_mode,
            cfo_phase=float(rng.uniform(-np.pi, np.pi)),
            cfo_step=cfo_step,
            ppo=tuple(rng.uniform(-np.pi, np.pi, size=n_antennas)),
            pa_multiples=tuple(int(m) for m in rng.integers(0, 2, size=n_antennas)),
        )


@dataclass(frozen=True)
class Scenario:
    """A reproducible simulation setup: geometry, paths, offsets, stream size."""

    ofdm: OfdmConfig
    paths: tuple
    offsets: OffsetSpec = field(default_factory=OffsetSpec)
    n_antennas: int = 4
    n_packets: int = 1
    seed: int = 0

    def __post_init__(self):
        paths = tuple(self.paths)
        if not paths:
            raise ValueError("scenario needs at least one path")
        object.__setattr__(self, "paths", paths)
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.n_packets < 1:
            raise ValueError("n_packets must be >= 1")
        amplitudes = [p.amplitude for p in paths]
        static_amplitudes = [p.amplitude for p in paths if p.is_static]
        # the sanitizer's reference-path step assumes the strongest
        # contribution comes from a fixed reflector
        if not static_amplitudes or max(static_amplitudes) < max(amplitudes):
            raise ValueError(
                "scenario must contain a static path carrying the maximum amplitude"
            )
        for value in (self.offsets.ppo, self.offsets.pa_multiples):
            if np.ndim(value) > 0 and len(value) < self.n_antennas:
                raise ValueError(
                    "per-antenna offset lists must cover every antenna"
                )


@dataclass(frozen=True)
class CfrPacket:
    """One CFR estimate: complex values over the configured sub-channel set."""

    packet_index: int
    antenna_index: int
    values: np.ndarray

    def __post_init__(self):
        if self.packet_index < 0 or self.antenna_index < 0:
            raise ValueError("packet and antenna indices must be >= 0")


def path_delay(path, n, ofdm):
    """Propagation delay of one path at packet n, in seconds."""
    return (path.initial_length + path.displacement(n, ofdm.packet_interval)) / SPEED_OF_LIGHT


def multipath_cfr(paths, ofdm, n, subchannels=None, dtype=np.complex128):
    """Evaluate the multi-path CFR model directly.

    Returns an array of shape (len(n), len(subchannels)) for array n, or a
    vector for scalar n. This low-level evaluator accepts any path list;
    scenario-level constraints are enforced by Scenario itself.
    """
    if subchannels is None:
        subchannels = ofdm.used_subchannels
    k = np.asarray(subchannels, dtype=np.float64)
    freqs = ofdm.carrier_freq + k / ofdm.symbol_time
    n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
    out = np.zeros((n_arr.size, k.size), dtype=np.complex128)
    for path in paths:
        tau = np.asarray(path_delay(path, n_arr, ofdm), dtype=np.float64)
        out += path.amplitude * np.exp(-2j * np.pi * np.outer(tau, freqs))
    out = out.astype(dtype, copy=False)
    return out if np.ndim(n) else out[0]


def cfr_clean(scenario, n, antenna=0):
    """Offset-free CFR packet for one (packet, antenna) slot."""
    if not 0 <= antenna < scenario.n_antennas:
        raise ValueError("antenna index outside scenario")
    if not 0 <= n < scenario.n_packets:
        raise ValueError("packet index outside scenario")
    values = multipath_cfr(scenario.paths, scenario.ofdm, int(n), dtype=np.complex64)
    return CfrPacket(packet_index=int(n), antenna_index=int(antenna), values=values)


def offset_phases(offsets, ofdm, antenna=0, cfo_phase=None, subchannels=None):
    """Per-sub-channel offset phase phi_k (radians, reduced mod 2 pi)."""
    if subchannels is None:
        subchannels = ofdm.used_subchannels
    k = np.asarray(subchannels, dtype=np.float64)
    if cfo_phase is None:
        cfo_phase = offsets.cfo_phase
    phases = (
        -2.0 * np.pi * k * (offsets.tau_sfo + offsets.tau_pdd) / ofdm.symbol_time
        + cfo_phase
        + offsets.ppo_for(antenna)
        + offsets.pa_for(antenna)
    )
    return np.mod(phases, 2.0 * np.pi)


def apply_offsets(packet, offsets, ofdm, cfo_phase=None):
    """Multiply a packet by its hardware phase offsets (amplitudes untouched)."""
    phases = offset_phases(
        offsets, ofdm, antenna=packet.antenna_index, cfo_phase=cfo_phase
    )
    if phases.size != packet.values.size:
        raise ValueError("packet length does not match configured sub-channels")
    rotated = packet.values * np.exp(1j * phases).astype(packet.values.dtype)
    return replace(packet, values=rotated.astype(packet.values.dtype, copy=False))


def realize_cfo_phases(offsets, n_packets, rng=None):
    """CFO phase per packet: constant, or a Gaussian random walk."""
    if offsets.cfo_mode == "constant" or offsets.cfo_step == 0.0:
        return np.full(n_packets, offsets.cfo_phase, dtype=np.float64)
    if rng is None:
        raise ValueError("cfo_mode='walk' needs an rng to realize the walk")
    steps = rng.normal(0.0, offsets.cfo_step, size=n_packets)
    steps[0] = 0.0
    return offsets.cfo_phase + np.cumsum(steps)


def _clean_matrix(scenario, n0, n1):
    """Offset-free CFR for packets n0..n1-1, shape (n1-n0, n_used), complex128."""
    n = np.arange(n0, n1, dtype=np.int64)
    return multipath_cfr(scenario.paths, scenario.ofdm, n)


def simulate(scenario, include_offsets=True, chunk=1024):
    """Yield CfrPackets ordered by (packet, antenna), deterministically per seed.

    Offset phases follow the scenario's OffsetSpec; the CFO walk is drawn
    from the scenario seed and shared across antennas.
    """
    ofdm = scenario.ofdm
    rng = np.random.default_rng(scenario.seed)
    cfo = realize_cfo_phases(scenario.offsets, scenario.n_packets, rng)
    if include_offsets:
        base = np.stack(
            [
                offset_phases(scenario.offsets, ofdm, antenna=a, cfo_phase=0.0)
                for a in range(scenario.n_antennas)
            ]
        )
    for n0 in range(0, scenario.n_packets, chunk):
        n1 = min(n0 + chunk, scenario.n_packets)
        clean = _clean_matrix(scenario, n0, n1)
        for n in range(n0, n1):
            row = clean[n - n0]
            for a in range(scenario.n_antennas):
                if include_offsets:
                    values = row * np.exp(1j * (base[a] + cfo[n]))
                else:
                    values = row
                yield CfrPacket(
                    packet_index=n,
                    antenna_index=a,
                    values=values.astype(np.complex64),
                )


def simulate_array(scenario, include_offsets=True):
    """Dense variant of simulate(): complex64 array (n_antennas, n_packets, n_used)."""
    out = np.empty(
        (scenario.n_antennas, scenario.n_packets, scenario.ofdm.n_used),
        dtype=np.complex64,
    )
    for packet in simulate(scenario, include_offsets=include_offsets):
        out[packet.antenna_index, packet.packet_index] = packet.values
    return out
