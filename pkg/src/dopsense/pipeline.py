"""End-to-end chain: capture -> sanitized CFR -> Doppler traces -> labels.

run_pipeline drives the per-antenna stages and synchronizes the final
multi-antenna fusion on matching trace start packets. The chain can be cut
short with `until` to inspect intermediate products.
"""

from dataclasses import dataclass

import numpy as np

from .classify import ActivityVector, fuse, rescale_traces
from .doppler import DopplerVector, TraceBuilder, sliding_doppler
from .errors import DataFormatError, NonContiguousWindowError
from .sanitize import sanitize_stream

__all__ = ["STAGES", "LabelEvent", "PipelineResult", "run_pipeline"]

STAGES = ("sanitize", "doppler", "classify")


@dataclass(frozen=True)
class LabelEvent:
    """Fused activity decision anchored at one trace start.

    time is the start packet expressed in seconds (packet * interval).
    """

    start_packet: int
    time: float
    label: int
    rule: str
    antenna_labels: tuple


@dataclass(frozen=True)
class PipelineResult:
    stage: str
    sanitized: tuple  # per antenna: tuple of SanitizedCfr
    traces: tuple  # per antenna: tuple of DopplerTrace
    events: tuple  # LabelEvent per fused trace position


def _check_contiguous(stream, antenna):
    if not stream:
        raise DataFormatError(f"antenna {antenna} holds no packets")
    indices = [p.packet_index for p in stream]
    if indices != list(range(indices[0], indices[0] + len(indices))):
        raise NonContiguousWindowError(
            f"antenna {antenna} packets are not consecutive"
        )


def run_pipeline(capture, config, until="classify", network=None):
    """Process a CfrCapture through the configured chain.

    until : "sanitize", "doppler" or "classify"
    network : trained InceptionNetwork, required for the classify stage
    """
    if until not in STAGES:
        raise ValueError(f"until must be one of {STAGES}")
    if until == "classify" and network is None:
        raise ValueError("the classify stage needs a trained network")

    dictionary = config.dictionary(capture.ofdm)
    params = config.doppler_params()

    sanitized = []
    for antenna in range(capture.n_antennas):
        stream = capture.antenna_stream(antenna)
        _check_contiguous(stream, antenna)
        sanitized.append(
            tuple(
                sanitize_stream(
                    stream,
                    dictionary,
                    lam=config.lambda_l1,
                    tol=config.solver_tol,
                    max_iter=config.solver_max_iter,
                    dust_tol=config.dust_tol,
                )
            )
        )
    sanitized = tuple(sanitized)
    if until == "sanitize":
        return PipelineResult(
            stage="sanitize", sanitized=sanitized, traces=(), events=()
        )

    traces = []
    for antenna, rows in enumerate(sanitized):
        matrix = np.stack([row.values for row in rows])
        powers = sliding_doppler(matrix, params)
        first = rows[0].packet_index
        builder = TraceBuilder(params, trace_stride=config.trace_stride)
        emitted = []
        for i in range(powers.shape[0]):
            trace = builder.push(
                DopplerVector(
                    powers=powers[i],
                    start_packet=first + i * params.stride,
                    antenna_index=antenna,
                )
            )
            if trace is not None:
                emitted.append(trace)
        traces.append(tuple(emitted))
    traces = tuple(traces)
    if until == "doppler":
        return PipelineResult(
            stage="doppler", sanitized=sanitized, traces=traces, events=()
        )

    by_start = {}
    for ant_traces in traces:
        for trace in ant_traces:
            by_start.setdefault(trace.start_packet, []).append(trace)
    events = []
    for start in sorted(by_start):
        group = sorted(by_start[start], key=lambda t: t.antenna_index)
        if len(group) != capture.n_antennas:
            # an antenna stream ended early; no fused decision here
            continue
        batch = rescale_traces(
            np.stack([t.matrix for t in group]), floor_db=-config.threshold_db
        )
        probs = network.predict_proba(batch)
        outcome = fuse([ActivityVector(p) for p in probs])
        events.append(
            LabelEvent(
                start_packet=int(start),
                time=float(start * capture.ofdm.packet_interval),
                label=outcome.label,
                rule=outcome.rule,
                antenna_labels=outcome.antenna_labels,
            )
        )
    return PipelineResult(
        stage="classify", sanitized=sanitized, traces=traces, events=tuple(events)
    )
