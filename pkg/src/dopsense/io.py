"""File formats: CFR captures, scenario text, trace exports, dataset bundles.

CFR capture layout (binary, little-endian, extension .dcfr):

    offset  field            type
    0       magic            4 bytes, b"DCFR"
    4       version          u16 (currently 1)
    6       n_subchannels    u16 (total grid size K)
    8       n_used           u16
    10      n_antennas       u16
    12      n_records        u32
    16      symbol_time      f64 (seconds)
    24      packet_interval  f64 (seconds)
    32      carrier_freq     f64 (Hz)
    40      used list        n_used * i16 (strictly increasing indices)
    ...     records          n_records * {packet u32, antenna u16,
                              interleaved re/im f32 * n_used}

Values are stored as float32 pairs, so complex64 packets round-trip
bit-identically. Records normally appear ordered by (packet, antenna) but
readers must not rely on it.
"""

import re
import struct
import zipfile
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataFormatError
from .ofdm import OfdmConfig, default_used_subchannels
from .simulate import CfrPacket, OffsetSpec, PathSpec, Scenario

__all__ = [
    "CfrCapture",
    "write_cfr_file",
    "read_cfr_file",
    "ingest",
    "apply_sign_fix",
    "parse_scenario_text",
    "load_scenario",
    "save_dataset",
    "load_dataset",
    "save_trace_csv",
    "load_trace_csv",
    "save_trace_png",
]

CFR_MAGIC = b"DCFR"
CFR_VERSION = 1
_HEADER = struct.Struct("<4sHHHHIddd")

DATASET_FORMAT = "dopsense-dataset-v1"

# sub-channels whose stored sign is flipped by one widespread capture chain
SIGN_FIX_RANGE = (-63, 122)


def _record_dtype(n_used):
    return np.dtype(
        [("n", "<u4"), ("ant", "<u2"), ("iq", "<f4", (2 * n_used,))]
    )


@dataclass(frozen=True)
class CfrCapture:
    """A decoded capture: grid geometry plus every stored packet."""

    ofdm: OfdmConfig
    n_antennas: int
    packets: tuple

    def antenna_stream(self, antenna):
        """Packets of one antenna, ordered by packet index."""
        if not 0 <= antenna < self.n_antennas:
            raise ValueError("antenna index outside capture")
        rows = [p for p in self.packets if p.antenna_index == antenna]
        rows.sort(key=lambda p: p.packet_index)
        return rows

    def array(self):
        """(n_antennas, n_packets, n_used) complex64; requires a full grid."""
        if not self.packets:
            raise DataFormatError("capture holds no packets")
        n_packets = max(p.packet_index for p in self.packets) + 1
        out = np.full(
            (self.n_antennas, n_packets, self.ofdm.n_used),
            np.nan,
            dtype=np.complex64,
        )
        for p in self.packets:
            out[p.antenna_index, p.packet_index] = p.values
        if np.isnan(out.real).any():
            raise DataFormatError(
                "capture is not rectangular: some (packet, antenna) slots are missing"
            )
        return out


def write_cfr_file(path, packets, ofdm, n_antennas):
    """Stream CfrPackets to a capture file; returns the record count."""
    used = ofdm.used_subchannels.astype("<i2")
    dtype = _record_dtype(ofdm.n_used)
    n_records = 0
    with open(path, "wb") as handle:
        handle.write(
            _HEADER.pack(
                CFR_MAGIC, CFR_VERSION, ofdm.n_subchannels, ofdm.n_used,
                n_antennas, 0, ofdm.symbol_time, ofdm.packet_interval,
                ofdm.carrier_freq,
            )
        )
        handle.write(used.tobytes())
        record = np.zeros(1, dtype=dtype)
        for packet in packets:
            values = np.asarray(packet.values, dtype=np.complex64)
            if values.shape != (ofdm.n_used,):
                raise ValueError(
                    f"packet {packet.packet_index} has {values.size} values, "
                    f"expected {ofdm.n_used}"
                )
            if not 0 <= packet.antenna_index < n_antennas:
                raise ValueError(
                    f"packet antenna {packet.antenna_index} outside 0..{n_antennas - 1}"
                )
            record["n"] = packet.packet_index
            record["ant"] = packet.antenna_index
            record["iq"][0, 0::2] = values.real
            record["iq"][0, 1::2] = values.imag
            handle.write(record.tobytes())
            n_records += 1
        # patch the record count now that the stream is exhausted
        handle.seek(0)
        handle.write(
            _HEADER.pack(
                CFR_MAGIC, CFR_VERSION, ofdm.n_subchannels, ofdm.n_used,
                n_antennas, n_records, ofdm.symbol_time, ofdm.packet_interval,
                ofdm.carrier_freq,
            )
        )
    return n_records


def read_cfr_file(path):
    """Decode a capture file into a CfrCapture.

    Raises DataFormatError on anything that is not a well-formed capture:
    bad magic, unknown version, inconsistent geometry or truncation.
    """
    with open(path, "rb") as handle:
        raw = handle.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise DataFormatError(f"{path}: truncated header")
        (magic, version, n_sub, n_used, n_ant, n_records,
         symbol_time, packet_interval, carrier_freq) = _HEADER.unpack(raw)
        if magic != CFR_MAGIC:
            raise DataFormatError(f"{path}: not a CFR capture file")
        if version != CFR_VERSION:
            raise DataFormatError(f"{path}: unsupported capture version {version}")
        if n_ant < 1:
            raise DataFormatError(f"{path}: antenna count must be >= 1")
        used_raw = np.frombuffer(handle.read(2 * n_used), dtype="<i2")
        if used_raw.size != n_used:
            raise DataFormatError(f"{path}: truncated sub-channel list")
        try:
            ofdm = OfdmConfig(
                n_subchannels=n_sub,
                symbol_time=symbol_time,
                cp_time=symbol_time / 4.0,
                carrier_freq=carrier_freq,
                packet_interval=packet_interval,
                used_subchannels=used_raw.astype(np.int64),
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}: invalid geometry ({exc})") from exc
        dtype = _record_dtype(n_used)
        body = np.frombuffer(handle.read(), dtype=np.uint8)
    if body.size != n_records * dtype.itemsize:
        found = body.size // dtype.itemsize
        raise DataFormatError(
            f"{path}: truncated record section: header promises {n_records} "
            f"records, file holds {found}"
        )
    records = body.view(dtype)
    packets = []
    for rec in records:
        if rec["ant"] >= n_ant:
            raise DataFormatError(
                f"{path}: record antenna {int(rec['ant'])} outside header count {n_ant}"
            )
        iq = rec["iq"]
        values = np.empty(n_used, dtype=np.complex64)
        values.real = iq[0::2]
        values.imag = iq[1::2]
        packets.append(
            CfrPacket(
                packet_index=int(rec["n"]),
                antenna_index=int(rec["ant"]),
                values=values,
            )
        )
    return CfrCapture(ofdm=ofdm, n_antennas=n_ant, packets=tuple(packets))


def apply_sign_fix(values, subchannels):
    """Undo the capture-chain sign flip on sub-channels -63..122.

    The fix is its own inverse: applying it twice returns the input.
    """
    lo, hi = SIGN_FIX_RANGE
    k = np.asarray(subchannels)
    out = np.array(values, copy=True)
    out[(k >= lo) & (k <= hi)] *= -1
    return out


def ingest(path, parser=None, sign_fix=False):
    """Load a capture through a pluggable parser (native format by default).

    `parser` maps a path to a CfrCapture, which is the seam for vendor
    formats. `sign_fix=True` corrects the known sub-channel sign flip.
    """
    capture = (parser or read_cfr_file)(path)
    if not isinstance(capture, CfrCapture):
        raise DataFormatError(f"{path}: parser did not return a CfrCapture")
    if sign_fix:
        k = capture.ofdm.used_subchannels
        packets = tuple(
            replace(p, values=apply_sign_fix(p.values, k)) for p in capture.packets
        )
        capture = replace(capture, packets=packets)
    return capture


# --- scenario text format ---------------------------------------------------
#
# Line-oriented: `key = value` pairs, `#` comments, and [section] markers.
# Sections: top-level keys first, then any of [ofdm], [offsets] and one
# [path] per propagation path. Numeric fields accept a fixed value or an
# inclusive range `a .. b` drawn uniformly from the scenario seed; draws
# happen in file order so a scenario file is fully reproducible.

_RANGE = re.compile(r"^(\S+)\s*\.\.\s*(\S+)$")

_TOP_KEYS = {"n_antennas", "n_packets", "seed"}
_OFDM_KEYS = {
    "n_subchannels", "symbol_time", "cp_time", "carrier_freq",
    "packet_interval", "subchannel_step",
}
_OFFSET_KEYS = {
    "random", "tau_max", "tau_sfo", "tau_pdd", "cfo_mode", "cfo_phase",
    "cfo_step", "ppo", "pa_multiples",
}
_PATH_KEYS = {
    "amplitude", "length", "velocity", "angle_cos", "static", "schedule",
    "flip_every", "schedule_packets",
}


def _fail(path, lineno, message):
    raise DataFormatError(f"{path}:{lineno}: {message}")


def _parse_scalar(text):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return float(text)


def _resolve(value, rng):
    """Fixed number, or a (lo, hi) range drawn uniformly."""
    if isinstance(value, tuple):
        return float(rng.uniform(value[0], value[1]))
    return value


def parse_scenario_text(text, path="<scenario>"):
    """Parse scenario text into a Scenario (see module comment for the format)."""
    top = {}
    sections = []  # (kind, dict, lineno)
    current_kind, current = None, top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                _fail(path, lineno, "unterminated section header")
            kind = line[1:-1].strip().lower()
            if kind not in ("ofdm", "offsets", "path"):
                _fail(path, lineno, f"unknown section [{kind}]")
            if kind != "path" and any(k == kind for k, _, _ in sections):
                _fail(path, lineno, f"duplicate section [{kind}]")
            current = {}
            current_kind = kind
            sections.append((kind, current, lineno))
            continue
        if "=" not in line:
            _fail(path, lineno, "expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        allowed = {
            None: _TOP_KEYS, "ofdm": _OFDM_KEYS,
            "offsets": _OFFSET_KEYS, "path": _PATH_KEYS,
        }[current_kind]
        if key not in allowed:
            where = f"[{current_kind}]" if current_kind else "the top level"
            _fail(path, lineno, f"unknown key {key!r} in {where}")
        if key in current:
            _fail(path, lineno, f"duplicate key {key!r}")
        match = _RANGE.match(value)
        try:
            if key in ("schedule", "ppo", "pa_multiples"):
                current[key] = tuple(float(v) for v in value.split(","))
            elif key == "cfo_mode":
                current[key] = value
            elif match:
                lo, hi = float(match.group(1)), float(match.group(2))
                if hi < lo:
                    _fail(path, lineno, f"empty range {value!r}")
                current[key] = (lo, hi)
            else:
                current[key] = _parse_scalar(value)
        except ValueError:
            _fail(path, lineno, f"cannot parse value {value!r}")

    seed = int(top.get("seed", 0))
    rng = np.random.default_rng(seed)

    ofdm_fields = {}
    step = 1
    for kind, body, lineno in sections:
        if kind != "ofdm":
            continue
        body = dict(body)
        step = int(body.pop("subchannel_step", 1))
        if step < 1:
            _fail(path, lineno, "subchannel_step must be >= 1")
        ofdm_fields = {k: v for k, v in body.items()}
        if "n_subchannels" in ofdm_fields:
            ofdm_fields["n_subchannels"] = int(ofdm_fields["n_subchannels"])
    try:
        ofdm = OfdmConfig(
            used_subchannels=default_used_subchannels()[::step], **ofdm_fields
        )
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: invalid [ofdm] section ({exc})") from exc

    n_packets = int(top.get("n_packets", 1))
    n_antennas = int(top.get("n_antennas", 1))

    paths = []
    offsets = OffsetSpec()
    for kind, body, lineno in sections:
        if kind == "ofdm":
            continue
        body = dict(body)
        if kind == "path":
            paths.append(_build_path(body, rng, n_packets, path, lineno))
        else:
            offsets = _build_offsets(body, rng, n_antennas, path, lineno)
    if not paths:
        raise DataFormatError(f"{path}: scenario defines no [path] sections")

    try:
        return Scenario(
            ofdm=ofdm,
            paths=tuple(paths),
            offsets=offsets,
            n_antennas=n_antennas,
            n_packets=n_packets,
            seed=seed,
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def _build_path(body, rng, n_packets, path, lineno):
    static = bool(body.pop("static", False))
    amplitude = _resolve(body.pop("amplitude", None), rng)
    length = _resolve(body.pop("length", None), rng)
    if amplitude is None or length is None:
        _fail(path, lineno, "[path] needs both amplitude and length")
    if static:
        if body:
            _fail(path, lineno, f"static path cannot set {sorted(body)!r}")
        return PathSpec.static(amplitude, length)
    velocity = _resolve(body.pop("velocity", 0.0), rng)
    angle_cos = _resolve(body.pop("angle_cos", 1.0), rng)
    schedule = body.pop("schedule", None)
    flip_every = body.pop("flip_every", None)
    schedule_packets = int(body.pop("schedule_packets", 31))
    if schedule is not None and flip_every is not None:
        _fail(path, lineno, "schedule and flip_every are mutually exclusive")
    if flip_every is not None:
        period = int(flip_every)
        if period < 1:
            _fail(path, lineno, "flip_every must be >= 1")
        n_entries = max(1, -(-n_packets // period))
        schedule = tuple(velocity * (-1.0) ** np.arange(n_entries))
        schedule_packets = period
    try:
        return PathSpec(
            amplitude=amplitude,
            initial_length=length,
            velocity=velocity,
            motion_angle_cos=angle_cos,
            velocity_schedule=schedule,
            schedule_packets=schedule_packets,
        )
    except ValueError as exc:
        _fail(path, lineno, str(exc))


def _build_offsets(body, rng, n_antennas, path, lineno):
    if body.pop("random", False):
        tau_max = float(body.pop("tau_max", 100e-9))
        cfo_mode = body.pop("cfo_mode", "walk")
        cfo_step = float(body.pop("cfo_step", 0.1))
        if body:
            _fail(path, lineno, f"random offsets cannot also set {sorted(body)!r}")
        return OffsetSpec.random(
            rng, n_antennas=n_antennas, tau_max=tau_max,
            cfo_mode=cfo_mode, cfo_step=cfo_step,
        )
    if "ppo" in body:
        body["ppo"] = tuple(float(v) for v in body["ppo"])
    if "pa_multiples" in body:
        body["pa_multiples"] = tuple(int(v) for v in body["pa_multiples"])
    try:
        return OffsetSpec(**body)
    except (TypeError, ValueError) as exc:
        _fail(path, lineno, f"invalid [offsets] section ({exc})")


def load_scenario(path):
    with open(path, "r", encoding="utf-8") as handle:
        return parse_scenario_text(handle.read(), path=str(path))


# --- dataset bundles ---------------------------------------------------------


def save_dataset(path, traces, labels, class_names):
    traces = np.asarray(traces, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if traces.ndim != 3 or labels.shape != (traces.shape[0],):
        raise ValueError("traces must be (n, rows, cols) with one label per trace")
    np.savez_compressed(
        path,
        format=DATASET_FORMAT,
        traces=traces,
        labels=labels,
        class_names=np.asarray(list(class_names), dtype=np.str_),
    )


def load_dataset(path):
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format" not in data or str(data["format"]) != DATASET_FORMAT:
                raise DataFormatError(f"{path}: not a trace dataset bundle")
            traces = np.asarray(data["traces"], dtype=np.float32)
            labels = np.asarray(data["labels"], dtype=np.int64)
            names = [str(n) for n in data["class_names"]]
    except (OSError, zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: cannot read dataset ({exc})") from exc
    if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
        raise DataFormatError(f"{path}: labels outside the class-name table")
    return traces, labels, names


# --- trace exports -----------------------------------------------------------


def save_trace_csv(path, matrix, meta=None):
    """Trace matrix as CSV with `# key = value` header lines."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("trace matrix must be 2-D")
    with open(path, "w", encoding="utf-8") as handle:
        for key, value in (meta or {}).items():
            handle.write(f"# {key} = {value}\n")
        np.savetxt(handle, matrix, fmt="%.6f", delimiter=",")


def load_trace_csv(path):
    """Inverse of save_trace_csv: (matrix, meta) with string meta values."""
    meta = {}
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad CSV row") from exc
    if not rows:
        raise DataFormatError(f"{path}: no trace rows found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: ragged CSV rows")
    return np.asarray(rows, dtype=np.float64), meta


def save_trace_png(path, matrix, threshold_db=12.0):
    """Grey-scale spectrogram: time left to right, positive bins on top.

    dB values in [-threshold_db, 0] map linearly onto [0, 255].
    """
    from PIL import Image

    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("trace matrix must be 2-D")
    scaled = (matrix + threshold_db) / threshold_db
    pixels = np.clip(np.round(255.0 * scaled), 0, 255).astype(np.uint8)
    Image.fromarray(np.flipud(pixels.T), mode="L").save(path)
