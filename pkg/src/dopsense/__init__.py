"""Wi-Fi channel-response sensing toolkit.

Simulates multi-path CFR streams with realistic hardware phase offsets,
removes those offsets by sparse delay-domain decomposition, turns the
sanitized stream into Doppler spectrograms, and classifies activity traces
with a small from-scratch convolutional network fused across antennas.
"""

__version__ = "0.1.0"

from .classify import (
    ActivityVector,
    FusionResult,
    InceptionClassifier,
    InceptionNetwork,
    NetworkSpec,
    classification_metrics,
    fuse,
    gradient_check,
    load_checkpoint,
    rescale_traces,
    save_checkpoint,
)
from .config import PipelineConfig, load_config, save_config
from .datasets import (
    ACTIVITY_CLASSES,
    make_activity_dataset,
    scenario_for_class,
    trace_from_scenario,
)
from .doppler import (
    DopplerExtractor,
    DopplerParams,
    DopplerTrace,
    DopplerVector,
    TraceBuilder,
    bin_to_velocity,
    doppler_bins,
    doppler_vector,
    iter_traces,
    sliding_doppler,
    threshold_and_scale,
    velocity_axis,
    window_matrix,
)
from .errors import (
    ConvergenceError,
    DataFormatError,
    DegenerateCfrError,
    DopsenseError,
    NonContiguousWindowError,
    NumericError,
)
from .io import (
    CfrCapture,
    apply_sign_fix,
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
from .ofdm import SPEED_OF_LIGHT, OfdmConfig, default_used_subchannels
from .pipeline import STAGES, LabelEvent, PipelineResult, run_pipeline
from .sanitize import (
    DelayDictionary,
    PathDecomposition,
    PhaseSanitizer,
    SanitizedCfr,
    build_delay_dictionary,
    decompose_and_reference,
    normalize_amplitude,
    reconstruction_span,
    sanitize_packet,
    sanitize_stream,
    solve_p1,
)
from .simulate import (
    CfrPacket,
    OffsetSpec,
    PathSpec,
    Scenario,
    apply_offsets,
    cfr_clean,
    multipath_cfr,
    offset_phases,
    path_delay,
    realize_cfo_phases,
    simulate,
    simulate_array,
)
from .waveform import waveform_roundtrip

__all__ = [
    "__version__",
    # geometry
    "OfdmConfig", "default_used_subchannels", "SPEED_OF_LIGHT",
    # simulation
    "PathSpec", "OffsetSpec", "Scenario", "CfrPacket", "simulate",
    "simulate_array", "multipath_cfr", "cfr_clean", "offset_phases",
    "path_delay", "apply_offsets", "realize_cfo_phases", "waveform_roundtrip",
    # sanitization
    "DelayDictionary", "build_delay_dictionary", "PathDecomposition",
    "SanitizedCfr", "solve_p1", "normalize_amplitude",
    "decompose_and_reference", "sanitize_packet", "sanitize_stream",
    "reconstruction_span", "PhaseSanitizer",
    # Doppler
    "DopplerParams", "DopplerVector", "DopplerTrace", "doppler_bins",
    "bin_to_velocity", "velocity_axis", "doppler_vector", "window_matrix",
    "sliding_doppler", "threshold_and_scale", "TraceBuilder", "iter_traces",
    "DopplerExtractor",
    # classification
    "NetworkSpec", "InceptionNetwork", "InceptionClassifier", "ActivityVector",
    "FusionResult", "fuse", "rescale_traces", "gradient_check",
    "classification_metrics", "save_checkpoint", "load_checkpoint",
    # datasets
    "ACTIVITY_CLASSES", "make_activity_dataset", "scenario_for_class",
    "trace_from_scenario",
    # files
    "CfrCapture", "write_cfr_file", "read_cfr_file", "ingest", "apply_sign_fix",
    "parse_scenario_text", "load_scenario", "save_dataset", "load_dataset",
    "save_trace_csv", "load_trace_csv", "save_trace_png",
    # pipeline
    "PipelineConfig", "load_config", "save_config", "run_pipeline",
    "LabelEvent", "PipelineResult", "STAGES",
    # errors
    "DopsenseError", "DataFormatError", "NumericError", "DegenerateCfrError",
    "ConvergenceError", "NonContiguousWindowError",
]
