"""One flat configuration object covering the whole processing chain.

PipelineConfig collects every tunable of the simulate -> sanitize ->
Doppler -> classify chain in a single dataclass so a run is reproducible
from one text file. The text form is line-oriented `key = value` with `#`
comments, one key per field.
"""

import dataclasses
from dataclasses import dataclass

from .doppler import DopplerParams
from .errors import DataFormatError
from .ofdm import OfdmConfig, default_used_subchannels
from .sanitize import build_delay_dictionary

__all__ = ["PipelineConfig", "load_config", "save_config"]


@dataclass(frozen=True)
class PipelineConfig:
    # OFDM grid
    n_subchannels: int = 256
    symbol_time: float = 3.2e-6
    cp_time: float = 0.8e-6
    carrier_freq: float = 5.21e9
    packet_interval: float = 6e-3
    subchannel_step: int = 1
    # phase sanitization
    n_atoms: int = 100
    max_delay: float = 8e-7
    lambda_l1: float = 0.1
    solver_tol: float = 1e-6
    solver_max_iter: int = 10000
    dust_tol: float = 1e-4
    # Doppler extraction
    window_size: int = 31
    n_bins: int = 100
    trace_length: int = 340
    threshold_db: float = 12.0
    window: str = "hann"
    vector_stride: int = 1
    trace_stride: int = 31
    # classifier
    n_classes: int = 5
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    # capture geometry
    n_antennas: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.subchannel_step < 1:
            raise ValueError("subchannel_step must be >= 1")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        # constructing the derived objects surfaces any remaining bad values
        self.ofdm()
        self.doppler_params()

    def ofdm(self):
        return OfdmConfig(
            n_subchannels=self.n_subchannels,
            symbol_time=self.symbol_time,
            cp_time=self.cp_time,
            carrier_freq=self.carrier_freq,
            packet_interval=self.packet_interval,
            used_subchannels=default_used_subchannels()[:: self.subchannel_step],
        )

    def doppler_params(self):
        return DopplerParams(
            window_size=self.window_size,
            n_bins=self.n_bins,
            trace_length=self.trace_length,
            threshold_db=self.threshold_db,
            window=self.window,
            stride=self.vector_stride,
        )

    def dictionary(self, ofdm=None):
        return build_delay_dictionary(
            ofdm if ofdm is not None else self.ofdm(),
            n_atoms=self.n_atoms,
            max_delay=self.max_delay,
        )

    @property
    def packets_per_trace(self):
        """Packets consumed by one full trace of overlapping windows."""
        return self.trace_length + self.window_size - 1

    @property
    def trace_duration(self):
        """Time in seconds spanned by the window start times of one trace."""
        return self.trace_length * self.packet_interval

    def to_text(self):
        lines = ["# processing chain configuration"]
        for spec in dataclasses.fields(self):
            lines.append(f"{spec.name} = {getattr(self, spec.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, path="<config>"):
        types = {spec.name: spec.type for spec in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise DataFormatError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise DataFormatError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                if types[key] is int:
                    values[key] = int(value)
                elif types[key] is float:
                    values[key] = float(value)
                else:
                    values[key] = value
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{lineno}: cannot parse {key} = {value!r}"
                ) from exc
        try:
            return cls(**values)
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc


def load_config(path):
    with open(path, "r", encoding="utf-8") as handle:
        return PipelineConfig.from_text(handle.read(), path=str(path))


def save_config(path, config):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(config.to_text())
