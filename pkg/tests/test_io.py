"""Tests for capture files, scenario text, dataset bundles and exports."""

import struct

import numpy as np
import pytest

from dopsense import (
    CfrPacket,
    ingest,
    load_dataset,
    load_scenario,
    load_trace_csv,
    parse_scenario_text,
    read_cfr_file,
    save_dataset,
    save_trace_csv,
    save_trace_png,
    write_cfr_file,
)
from dopsense.errors import DataFormatError
from dopsense.io import CFR_MAGIC, CfrCapture, apply_sign_fix
from dopsense.simulate import OffsetSpec

from conftest import random_complex, thinned_ofdm


def sample_packets(ofdm, n_packets=3, n_antennas=2, seed=0):
    rng = np.random.default_rng(seed)
    return [
        CfrPacket(n, a, random_complex(rng, ofdm.n_used).astype(np.complex64))
        for n in range(n_packets)
        for a in range(n_antennas)
    ]


class TestCfrFile:
    def test_round_trip_is_bit_exact(self, tmp_path):
        ofdm = thinned_ofdm(16)
        packets = sample_packets(ofdm)
        path = tmp_path / "capture.dcfr"
        count = write_cfr_file(path, packets, ofdm, n_antennas=2)
        assert count == len(packets)
        capture = read_cfr_file(path)
        assert capture.n_antennas == 2
        assert len(capture.packets) == len(packets)
        for original, decoded in zip(packets, capture.packets):
            assert decoded.packet_index == original.packet_index
            assert decoded.antenna_index == original.antenna_index
            assert decoded.values.dtype == np.complex64
            np.testing.assert_array_equal(decoded.values, original.values)

    def test_geometry_survives(self, tmp_path):
        ofdm = thinned_ofdm(16, carrier_freq=5.18e9, packet_interval=4e-3)
        path = tmp_path / "capture.dcfr"
        write_cfr_file(path, sample_packets(ofdm, 1, 1), ofdm, n_antennas=1)
        decoded = read_cfr_file(path).ofdm
        assert decoded.n_subchannels == ofdm.n_subchannels
        assert decoded.carrier_freq == ofdm.carrier_freq
        assert decoded.packet_interval == ofdm.packet_interval
        assert decoded.symbol_time == ofdm.symbol_time
        assert decoded.cp_time == pytest.approx(ofdm.symbol_time / 4)
        np.testing.assert_array_equal(decoded.used_subchannels, ofdm.used_subchannels)

    def test_arbitrary_packet_indices_kept(self, tmp_path):
        ofdm = thinned_ofdm(16)
        rng = np.random.default_rng(1)
        packets = [
            CfrPacket(n, 0, random_complex(rng, ofdm.n_used).astype(np.complex64))
            for n in (7, 2, 100)
        ]
        path = tmp_path / "sparse.dcfr"
        write_cfr_file(path, packets, ofdm, n_antennas=1)
        decoded = read_cfr_file(path)
        assert [p.packet_index for p in decoded.packets] == [7, 2, 100]

    def test_wrong_value_count_rejected(self, tmp_path):
        ofdm = thinned_ofdm(16)
        bad = [CfrPacket(0, 0, np.ones(5, dtype=np.complex64))]
        with pytest.raises(ValueError, match="expected 16"):
            write_cfr_file(tmp_path / "bad.dcfr", bad, ofdm, n_antennas=1)

    def test_antenna_outside_count_rejected(self, tmp_path):
        ofdm = thinned_ofdm(16)
        bad = [CfrPacket(0, 3, np.ones(ofdm.n_used, dtype=np.complex64))]
        with pytest.raises(ValueError, match="antenna 3"):
            write_cfr_file(tmp_path / "bad.dcfr", bad, ofdm, n_antennas=2)


class TestCfrFileErrors:
    def write_valid(self, tmp_path, n_antennas=2):
        ofdm = thinned_ofdm(16)
        path = tmp_path / "capture.dcfr"
        write_cfr_file(path, sample_packets(ofdm, 2, n_antennas), ofdm, n_antennas)
        return path

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "stub.dcfr"
        path.write_bytes(b"DCFR\x01\x00")
        with pytest.raises(DataFormatError, match="truncated header"):
            read_cfr_file(path)

    def test_bad_magic(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[0:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="not a CFR capture"):
            read_cfr_file(path)

    def test_unknown_version(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<H", raw, 4, 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="unsupported capture version 9"):
            read_cfr_file(path)

    def test_zero_antennas_rejected(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<H", raw, 10, 0)
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="antenna count"):
            read_cfr_file(path)

    def test_truncated_subchannel_list(self, tmp_path):
        path = self.write_valid(tmp_path)
        header_size = struct.calcsize("<4sHHHHIddd")
        raw = path.read_bytes()[: header_size + 6]
        path.write_bytes(raw)
        with pytest.raises(DataFormatError, match="truncated sub-channel list"):
            read_cfr_file(path)

    def test_truncated_records_name_both_counts(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = path.read_bytes()
        record_size = np.dtype(
            [("n", "<u4"), ("ant", "<u2"), ("iq", "<f4", (32,))]
        ).itemsize
        path.write_bytes(raw[:-record_size])
        with pytest.raises(
            DataFormatError, match="header promises 4 records, file holds 3"
        ):
            read_cfr_file(path)

    def test_record_antenna_outside_header(self, tmp_path):
        path = self.write_valid(tmp_path, n_antennas=2)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<H", raw, 10, 1)
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="record antenna 1 outside"):
            read_cfr_file(path)

    def test_invalid_geometry(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        header_size = struct.calcsize("<4sHHHHIddd")
        # first used sub-channel index pushed outside the grid
        struct.pack_into("<h", raw, header_size, 5000)
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="invalid geometry"):
            read_cfr_file(path)


class TestCfrCapture:
    def test_antenna_stream_sorted(self):
        ofdm = thinned_ofdm(16)
        rng = np.random.default_rng(2)
        packets = tuple(
            CfrPacket(n, a, random_complex(rng, ofdm.n_used))
            for n, a in [(3, 0), (1, 1), (0, 0), (2, 0), (0, 1)]
        )
        capture = CfrCapture(ofdm=ofdm, n_antennas=2, packets=packets)
        assert [p.packet_index for p in capture.antenna_stream(0)] == [0, 2, 3]
        assert [p.packet_index for p in capture.antenna_stream(1)] == [0, 1]
        with pytest.raises(ValueError, match="antenna index outside"):
            capture.antenna_stream(2)

    def test_array_layout(self):
        ofdm = thinned_ofdm(16)
        rng = np.random.default_rng(3)
        packets = tuple(
            CfrPacket(n, a, random_complex(rng, ofdm.n_used).astype(np.complex64))
            for n in range(3)
            for a in range(2)
        )
        capture = CfrCapture(ofdm=ofdm, n_antennas=2, packets=packets)
        array = capture.array()
        assert array.shape == (2, 3, ofdm.n_used)
        np.testing.assert_array_equal(array[1, 2], packets[5].values)

    def test_array_rejects_holes(self):
        ofdm = thinned_ofdm(16)
        packets = (CfrPacket(1, 0, np.ones(ofdm.n_used, dtype=np.complex64)),)
        capture = CfrCapture(ofdm=ofdm, n_antennas=1, packets=packets)
        with pytest.raises(DataFormatError, match="not rectangular"):
            capture.array()

    def test_array_rejects_empty(self):
        capture = CfrCapture(ofdm=thinned_ofdm(16), n_antennas=1, packets=())
        with pytest.raises(DataFormatError, match="holds no packets"):
            capture.array()


class TestSignFix:
    def test_only_configured_band_flips(self):
        subchannels = np.array([-64, -63, 0, 122, 123])
        values = np.ones(5, dtype=np.complex64)
        fixed = apply_sign_fix(values, subchannels)
        np.testing.assert_array_equal(fixed, [1, -1, -1, -1, 1])

    def test_involution(self):
        rng = np.random.default_rng(4)
        ofdm = thinned_ofdm(4)
        values = random_complex(rng, ofdm.n_used)
        twice = apply_sign_fix(
            apply_sign_fix(values, ofdm.used_subchannels), ofdm.used_subchannels
        )
        np.testing.assert_array_equal(twice, values)

    def test_input_not_mutated(self):
        values = np.ones(3, dtype=np.complex64)
        apply_sign_fix(values, np.array([0, 1, 2]))
        np.testing.assert_array_equal(values, 1.0)


class TestIngest:
    def test_native_format_by_default(self, tmp_path):
        ofdm = thinned_ofdm(16)
        path = tmp_path / "capture.dcfr"
        write_cfr_file(path, sample_packets(ofdm, 2, 1), ofdm, n_antennas=1)
        capture = ingest(path)
        assert isinstance(capture, CfrCapture)
        assert len(capture.packets) == 2

    def test_parser_seam(self, tmp_path):
        ofdm = thinned_ofdm(16)
        expected = CfrCapture(ofdm=ofdm, n_antennas=1, packets=())

        def parser(path):
            return expected

        assert ingest(tmp_path / "whatever.bin", parser=parser) is expected

    def test_parser_must_return_capture(self, tmp_path):
        with pytest.raises(DataFormatError, match="did not return a CfrCapture"):
            ingest(tmp_path / "x.bin", parser=lambda p: {"not": "a capture"})

    def test_sign_fix_applied(self, tmp_path):
        ofdm = thinned_ofdm(16)
        packets = sample_packets(ofdm, 1, 1)
        path = tmp_path / "capture.dcfr"
        write_cfr_file(path, packets, ofdm, n_antennas=1)
        fixed = ingest(path, sign_fix=True)
        expected = apply_sign_fix(packets[0].values, ofdm.used_subchannels)
        np.testing.assert_array_equal(fixed.packets[0].values, expected)


SCENARIO_TEXT = """
# two-path demo
n_antennas = 2
n_packets = 8
seed = 7

[ofdm]
subchannel_step = 16
carrier_freq = 5.18e9

[offsets]
random = true
tau_max = 50e-9
cfo_mode = constant

[path]
amplitude = 1.0
length = 4 .. 6
static = true

[path]
amplitude = 0.5
length = 8.0
velocity = 0.4 .. 0.6
angle_cos = 0.9
flip_every = 4
"""


class TestScenarioText:
    def test_full_feature_parse(self):
        scenario = parse_scenario_text(SCENARIO_TEXT)
        assert scenario.n_antennas == 2
        assert scenario.n_packets == 8
        assert scenario.seed == 7
        assert scenario.ofdm.carrier_freq == 5.18e9
        assert scenario.ofdm.n_used == 16
        static, mover = scenario.paths
        assert static.is_static
        assert 4.0 <= static.initial_length <= 6.0
        assert 0.4 <= mover.velocity <= 0.6
        assert mover.motion_angle_cos == 0.9
        assert mover.schedule_packets == 4
        assert len(mover.velocity_schedule) == 2
        assert mover.velocity_schedule[1] == pytest.approx(-mover.velocity_schedule[0])
        assert len(scenario.offsets.ppo) == 2

    def test_range_draws_are_reproducible(self):
        first = parse_scenario_text(SCENARIO_TEXT)
        second = parse_scenario_text(SCENARIO_TEXT)
        assert first.paths[0].initial_length == second.paths[0].initial_length
        assert first.paths[1].velocity == second.paths[1].velocity
        assert first.offsets.tau_sfo == second.offsets.tau_sfo

    def test_explicit_offsets(self):
        text = """
        n_antennas = 2
        [offsets]
        tau_sfo = 10e-9
        ppo = 0.0, 0.5
        pa_multiples = 0, 1
        [path]
        amplitude = 1.0
        length = 5.0
        static = true
        """
        scenario = parse_scenario_text(text)
        assert scenario.offsets.tau_sfo == 10e-9
        assert scenario.offsets.ppo == (0.0, 0.5)
        assert scenario.offsets.pa_multiples == (0, 1)

    def test_defaults_when_sections_omitted(self):
        scenario = parse_scenario_text(
            "[path]\namplitude = 1.0\nlength = 5.0\nstatic = true\n"
        )
        assert scenario.n_antennas == 1
        assert scenario.n_packets == 1
        assert scenario.offsets == OffsetSpec()
        assert scenario.ofdm.n_used == 242

    @pytest.mark.parametrize(
        "text,match",
        [
            ("[orbit]\n", r":1: unknown section \[orbit\]"),
            ("foo = 1\n", r":1: unknown key 'foo' in the top level"),
            ("[ofdm]\nvelocity = 1\n", r":2: unknown key 'velocity' in \[ofdm\]"),
            ("seed = 1\nseed = 2\n", r":2: duplicate key 'seed'"),
            ("[ofdm]\n[ofdm]\n", r":2: duplicate section \[ofdm\]"),
            ("[ofdm\n", r":1: unterminated section header"),
            ("n_packets\n", r":1: expected 'key = value'"),
            ("[path]\namplitude = 2 .. 1\n", r":2: empty range"),
            ("[path]\namplitude = abc\n", r":2: cannot parse value 'abc'"),
        ],
    )
    def test_parse_errors_carry_location(self, text, match):
        with pytest.raises(DataFormatError, match=match):
            parse_scenario_text(text, path="demo.txt")

    def test_path_needs_amplitude_and_length(self):
        with pytest.raises(DataFormatError, match="needs both amplitude and length"):
            parse_scenario_text("[path]\namplitude = 1.0\n")

    def test_static_path_rejects_motion_keys(self):
        text = "[path]\namplitude = 1\nlength = 5\nstatic = true\nvelocity = 1\n"
        with pytest.raises(DataFormatError, match="static path cannot set"):
            parse_scenario_text(text)

    def test_schedule_and_flip_every_conflict(self):
        text = (
            "[path]\namplitude = 1\nlength = 5\nvelocity = 1\n"
            "schedule = 1, -1\nflip_every = 4\n"
        )
        with pytest.raises(DataFormatError, match="mutually exclusive"):
            parse_scenario_text(text)

    def test_random_offsets_reject_explicit_fields(self):
        text = "[offsets]\nrandom = true\nppo = 0.1\n[path]\namplitude = 1\nlength = 5\nstatic = true\n"
        with pytest.raises(DataFormatError, match="random offsets cannot also set"):
            parse_scenario_text(text)

    def test_no_paths_rejected(self):
        with pytest.raises(DataFormatError, match="no \\[path\\] sections"):
            parse_scenario_text("n_packets = 4\n")

    def test_scenario_invariants_surface_as_format_errors(self):
        text = "[path]\namplitude = 1.0\nlength = 5.0\nvelocity = 1.0\n"
        with pytest.raises(DataFormatError, match="static path carrying"):
            parse_scenario_text(text)

    def test_load_scenario_names_the_file(self, tmp_path):
        path = tmp_path / "scene.txt"
        path.write_text("junk = 1\n")
        with pytest.raises(DataFormatError, match=r"scene\.txt:1"):
            load_scenario(path)

    def test_load_scenario_round_trip(self, tmp_path):
        path = tmp_path / "scene.txt"
        path.write_text(SCENARIO_TEXT)
        scenario = load_scenario(path)
        assert scenario.n_packets == 8


class TestDatasetBundle:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        traces = rng.uniform(-12, 0, size=(6, 10, 16)).astype(np.float32)
        labels = np.array([0, 1, 2, 0, 1, 2])
        names = ["empty", "walk", "wave"]
        path = tmp_path / "bundle.npz"
        save_dataset(path, traces, labels, names)
        traces2, labels2, names2 = load_dataset(path)
        np.testing.assert_array_equal(traces2, traces)
        np.testing.assert_array_equal(labels2, labels)
        assert names2 == names
        assert traces2.dtype == np.float32

    def test_shape_validation(self, tmp_path):
        with pytest.raises(ValueError, match="one label per trace"):
            save_dataset(tmp_path / "x.npz", np.zeros((2, 3, 4)), [0], ["a"])

    def test_foreign_bundle_rejected(self, tmp_path):
        path = tmp_path / "foreign.npz"
        np.savez(path, traces=np.zeros((1, 2, 2)))
        with pytest.raises(DataFormatError, match="not a trace dataset bundle"):
            load_dataset(path)

    def test_label_range_checked(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(
            path,
            format="dopsense-dataset-v1",
            traces=np.zeros((2, 2, 2), dtype=np.float32),
            labels=np.array([0, 5]),
            class_names=np.asarray(["a", "b"]),
        )
        with pytest.raises(DataFormatError, match="labels outside"):
            load_dataset(path)


class TestTraceCsv:
    def test_round_trip_with_meta(self, tmp_path):
        rng = np.random.default_rng(6)
        matrix = rng.uniform(-12, 0, size=(5, 8))
        path = tmp_path / "trace.csv"
        save_trace_csv(path, matrix, meta={"antenna": 2, "start": 31})
        loaded, meta = load_trace_csv(path)
        np.testing.assert_allclose(loaded, matrix, atol=1e-6)
        assert meta == {"antenna": "2", "start": "31"}

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("# a = 1\n\n1.0,2.0\n\n3.0,4.0\n")
        loaded, meta = load_trace_csv(path)
        np.testing.assert_array_equal(loaded, [[1.0, 2.0], [3.0, 4.0]])
        assert meta == {"a": "1"}

    def test_bad_row_names_line(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("1.0,2.0\n1.0,oops\n")
        with pytest.raises(DataFormatError, match=r"trace\.csv:2: bad CSV row"):
            load_trace_csv(path)

    def test_ragged_rows_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("1.0,2.0\n1.0,2.0,3.0\n")
        with pytest.raises(DataFormatError, match="ragged CSV rows"):
            load_trace_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("# only = comments\n")
        with pytest.raises(DataFormatError, match="no trace rows found"):
            load_trace_csv(path)

    def test_non_matrix_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="2-D"):
            save_trace_csv(tmp_path / "x.csv", np.zeros(5))


class TestTracePng:
    def test_orientation_and_scaling(self, tmp_path):
        from PIL import Image

        matrix = np.full((3, 4), -6.0)
        matrix[0, 3] = 0.0    # first window, highest bin
        matrix[0, 0] = -12.0  # first window, lowest bin
        path = tmp_path / "trace.png"
        save_trace_png(path, matrix, threshold_db=12.0)
        pixels = np.asarray(Image.open(path))
        assert pixels.shape == (4, 3)  # bins tall, windows wide
        assert pixels[0, 0] == 255     # 0 dB at the top
        assert pixels[3, 0] == 0       # floor at the bottom
        assert pixels[1, 1] == 128     # mid-scale in between

    def test_values_clip_into_byte_range(self, tmp_path):
        from PIL import Image

        matrix = np.array([[5.0, -30.0]])
        path = tmp_path / "clip.png"
        save_trace_png(path, matrix, threshold_db=12.0)
        pixels = np.asarray(Image.open(path))
        assert pixels.max() == 255
        assert pixels.min() == 0

    def test_non_matrix_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="2-D"):
            save_trace_png(tmp_path / "x.png", np.zeros(4))
