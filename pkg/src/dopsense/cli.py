"""Command line front end.

Subcommands cover the whole chain: simulate a scenario into a capture
file, sanitize or Doppler-process a capture, train a classifier, classify
a capture into labelled events, run the full pipeline from a scenario, and
inspect any file the tool produces.

Exit codes: 0 success, 1 usage error, 2 unreadable or inconsistent input
data, 3 numerical failure (solver non-convergence, degenerate CFR).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import InceptionClassifier, load_checkpoint, save_checkpoint
from .config import PipelineConfig, load_config
from .datasets import ACTIVITY_CLASSES, make_activity_dataset
from .doppler import DopplerVector, TraceBuilder, sliding_doppler
from .errors import DataFormatError, DopsenseError, NumericError
from .io import (
    load_dataset,
    load_scenario,
    parse_scenario_text,
    read_cfr_file,
    save_dataset,
    save_trace_png,
    write_cfr_file,
)
from .pipeline import run_pipeline
from .simulate import simulate

SANITIZED_FORMAT = "dopsense-sanitized-v1"
TRACES_FORMAT = "dopsense-traces-v1"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


def _class_names(network, n_classes):
    names = network.extra.get("class_names") if network.extra else None
    if names and len(names) == network.spec.n_classes:
        return list(names)
    return [f"class_{i}" for i in range(n_classes)]


def cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    packets = simulate(scenario, include_offsets=not args.clean)
    n_records = write_cfr_file(args.out, packets, scenario.ofdm, scenario.n_antennas)
    print(
        f"wrote {args.out}: {n_records} records "
        f"({scenario.n_packets} packets x {scenario.n_antennas} antennas, "
        f"{scenario.ofdm.n_used} sub-channels)"
    )
    return 0


def cmd_sanitize(args):
    config = _load_config(args)
    capture = read_cfr_file(args.capture)
    result = run_pipeline(capture, config, until="sanitize")
    stacks = [np.stack([row.values for row in rows]) for rows in result.sanitized]
    values = np.stack(stacks)
    first = result.sanitized[0][0]
    np.savez_compressed(
        args.out,
        format=SANITIZED_FORMAT,
        values=values,
        subchannels=first.subchannels,
        start_packet=result.sanitized[0][0].packet_index,
        reference_atoms=np.array(
            [[row.reference_index for row in rows] for rows in result.sanitized]
        ),
    )
    print(
        f"wrote {args.out}: sanitized {values.shape[0]} antennas x "
        f"{values.shape[1]} packets onto {values.shape[2]} sub-channels"
    )
    return 0


def _raw_traces(capture, config):
    """Doppler traces straight from capture values, skipping sanitization."""
    params = config.doppler_params()
    arr = capture.array()
    traces = []
    for antenna in range(arr.shape[0]):
        powers = sliding_doppler(arr[antenna].astype(np.complex128), params)
        builder = TraceBuilder(params, trace_stride=config.trace_stride)
        emitted = []
        for i in range(powers.shape[0]):
            trace = builder.push(
                DopplerVector(
                    powers=powers[i],
                    start_packet=i * params.stride,
                    antenna_index=antenna,
                )
            )
            if trace is not None:
                emitted.append(trace)
        traces.append(tuple(emitted))
    return tuple(traces)


def _stack_traces(traces):
    counts = {len(rows) for rows in traces}
    if len(counts) != 1:
        raise DataFormatError("antennas produced different trace counts")
    if counts == {0}:
        raise DataFormatError(
            "capture too short: no complete trace; need at least "
            "trace_length + window_size - 1 packets"
        )
    matrix = np.stack(
        [[t.matrix for t in rows] for rows in traces]
    ).astype(np.float32)
    starts = np.array([t.start_packet for t in traces[0]], dtype=np.int64)
    return matrix, starts


def cmd_doppler(args):
    config = _load_config(args)
    capture = read_cfr_file(args.capture)
    if args.raw:
        traces = _raw_traces(capture, config)
    else:
        traces = run_pipeline(capture, config, until="doppler").traces
    matrix, starts = _stack_traces(traces)
    np.savez_compressed(
        args.out,
        format=TRACES_FORMAT,
        traces=matrix,
        start_packets=starts,
        threshold_db=config.threshold_db,
    )
    print(
        f"wrote {args.out}: {matrix.shape[1]} traces x {matrix.shape[0]} antennas, "
        f"each {matrix.shape[2]} windows x {matrix.shape[3]} bins"
    )
    if args.png:
        png_dir = Path(args.png)
        png_dir.mkdir(parents=True, exist_ok=True)
        for antenna, rows in enumerate(traces):
            for trace in rows:
                name = f"trace_a{antenna}_s{trace.start_packet}.png"
                save_trace_png(
                    png_dir / name, trace.matrix, threshold_db=config.threshold_db
                )
        print(f"wrote spectrogram images under {png_dir}")
    return 0


def cmd_train(args):
    config = _load_config(args)
    if args.dataset and args.synthetic:
        raise DataFormatError("pass either a dataset file or --synthetic, not both")
    if args.dataset:
        X, y, names = load_dataset(args.dataset)
    elif args.synthetic:
        names = list(ACTIVITY_CLASSES[: config.n_classes])
        X, y, names = make_activity_dataset(
            n_per_class=args.synthetic,
            classes=names,
            params=config.doppler_params(),
            subchannel_step=args.subchannel_step,
            seed=config.seed,
        )
        if args.dataset_out:
            save_dataset(args.dataset_out, X, y, names)
            print(f"wrote {args.dataset_out}: {X.shape[0]} traces")
    else:
        raise DataFormatError("training needs a dataset file or --synthetic N")

    clf = InceptionClassifier(
        n_classes=len(names),
        dropout_rate=config.dropout_rate,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        max_epochs=args.epochs or config.max_epochs,
        patience=config.patience,
        input_floor=-config.threshold_db,
        seed=config.seed,
        log_path=args.log,
        verbose=args.verbose,
    )
    clf.fit(X, y)
    best = max(clf.history_, key=lambda rec: rec["val_accuracy"])
    save_checkpoint(
        args.model,
        clf.network_,
        extra={
            "class_names": names,
            "val_accuracy": best["val_accuracy"],
            "epochs_run": len(clf.history_),
        },
    )
    print(
        f"wrote {args.model}: {clf.n_parameters_} parameters, "
        f"best validation accuracy {best['val_accuracy']:.3f} "
        f"over {len(clf.history_)} epochs"
    )
    return 0


def cmd_classify(args):
    config = _load_config(args)
    network = load_checkpoint(args.model)
    capture = read_cfr_file(args.capture)
    result = run_pipeline(capture, config, until="classify", network=network)
    names = _class_names(network, network.spec.n_classes)
    if not result.events:
        print("no complete trace in capture; nothing to classify")
        return 0
    payload = []
    for event in result.events:
        payload.append(
            {
                "start_packet": event.start_packet,
                "time": event.time,
                "label": event.label,
                "class": names[event.label],
                "rule": event.rule,
                "antenna_labels": list(event.antenna_labels),
            }
        )
        antennas = ",".join(str(l) for l in event.antenna_labels)
        print(
            f"t={event.time:8.3f}s  start={event.start_packet:6d}  "
            f"{names[event.label]:<12s} rule={event.rule:<9s} votes=[{antennas}]"
        )
    if args.json:
        with open(args.json, "w", encoding="utf-8") as handle:
            json.dump({"class_names": names, "events": payload}, handle, indent=2)
        print(f"wrote {args.json}")
    return 0


def cmd_pipeline(args):
    config = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = load_scenario(args.scenario)
    capture_path = out_dir / "capture.dcfr"
    n_records = write_cfr_file(
        capture_path,
        simulate(scenario, include_offsets=not args.clean),
        scenario.ofdm,
        scenario.n_antennas,
    )
    print(f"wrote {capture_path}: {n_records} records")
    if args.until == "simulate":
        return 0
    network = None
    if args.until == "classify":
        if not args.model:
            raise DataFormatError("--until classify needs --model")
        network = load_checkpoint(args.model)
    capture = read_cfr_file(capture_path)
    result = run_pipeline(capture, config, until=args.until, network=network)

    stacks = [np.stack([row.values for row in rows]) for rows in result.sanitized]
    np.savez_compressed(
        out_dir / "sanitized.npz",
        format=SANITIZED_FORMAT,
        values=np.stack(stacks),
        subchannels=result.sanitized[0][0].subchannels,
        start_packet=result.sanitized[0][0].packet_index,
    )
    print(f"wrote {out_dir / 'sanitized.npz'}")
    if result.stage == "sanitize":
        return 0

    matrix, starts = _stack_traces(result.traces)
    np.savez_compressed(
        out_dir / "traces.npz",
        format=TRACES_FORMAT,
        traces=matrix,
        start_packets=starts,
        threshold_db=config.threshold_db,
    )
    print(f"wrote {out_dir / 'traces.npz'}")
    if result.stage == "doppler":
        return 0

    names = _class_names(network, network.spec.n_classes)
    events = [
        {
            "start_packet": e.start_packet,
            "time": e.time,
            "label": e.label,
            "class": names[e.label],
            "rule": e.rule,
            "antenna_labels": list(e.antenna_labels),
        }
        for e in result.events
    ]
    with open(out_dir / "events.json", "w", encoding="utf-8") as handle:
        json.dump({"class_names": names, "events": events}, handle, indent=2)
    print(f"wrote {out_dir / 'events.json'}: {len(events)} events")
    for event in result.events:
        print(
            f"t={event.time:8.3f}s  {names[event.label]:<12s} rule={event.rule}"
        )
    return 0


def _inspect_npz(path):
    with np.load(path, allow_pickle=False) as data:
        files = set(data.files)
        if "meta" in files:
            meta = json.loads(str(data["meta"]))
            spec = meta.get("spec", {})
            n_params = sum(
                int(np.prod(data[k].shape)) for k in files if k.startswith("param:")
            )
            print(f"{path}: model checkpoint ({meta.get('format')})")
            print(f"  input shape: {tuple(spec.get('input_shape', ()))}")
            print(f"  classes: {spec.get('n_classes')}, parameters: {n_params}")
            extra = meta.get("extra", {})
            if extra:
                print(f"  extra: {json.dumps(extra)}")
            return
        fmt = str(data["format"]) if "format" in files else None
        if fmt and fmt.startswith("dopsense-dataset"):
            X, y = data["traces"], data["labels"]
            names = [str(n) for n in data["class_names"]]
            counts = np.bincount(y, minlength=len(names))
            print(f"{path}: trace dataset ({fmt})")
            print(f"  traces: {X.shape[0]} of {X.shape[1]} x {X.shape[2]}")
            for name, count in zip(names, counts):
                print(f"  {name}: {count}")
            return
        if fmt == TRACES_FORMAT:
            traces = data["traces"]
            print(f"{path}: Doppler traces ({fmt})")
            print(
                f"  {traces.shape[1]} traces x {traces.shape[0]} antennas, "
                f"each {traces.shape[2]} windows x {traces.shape[3]} bins"
            )
            print(f"  start packets: {data['start_packets'].tolist()}")
            return
        if fmt == SANITIZED_FORMAT:
            values = data["values"]
            sub = data["subchannels"]
            print(f"{path}: sanitized CFR ({fmt})")
            print(
                f"  {values.shape[0]} antennas x {values.shape[1]} packets, "
                f"sub-channels {sub[0]}..{sub[-1]}"
            )
            return
    raise DataFormatError(f"{path}: unrecognized npz contents")


def _inspect_text(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        config = PipelineConfig.from_text(text, path=str(path))
        print(f"{path}: pipeline configuration")
        print(f"  grid: K={config.n_subchannels}, step={config.subchannel_step}")
        print(
            f"  sanitize: {config.n_atoms} atoms, lambda={config.lambda_l1}, "
            f"doppler: {config.window_size} -> {config.n_bins} bins, "
            f"trace {config.trace_length}"
        )
        print(f"  classifier: {config.n_classes} classes")
        return
    except DataFormatError:
        pass
    scenario = parse_scenario_text(text, path=str(path))
    moving = sum(1 for p in scenario.paths if not p.is_static)
    print(f"{path}: scenario")
    print(
        f"  {len(scenario.paths)} paths ({moving} moving), "
        f"{scenario.n_antennas} antennas, {scenario.n_packets} packets, "
        f"seed {scenario.seed}"
    )
    return


def cmd_inspect(args):
    path = Path(args.path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, "rb") as handle:
        head = handle.read(4)
    if head == b"DCFR":
        capture = read_cfr_file(path)
        indices = [p.packet_index for p in capture.packets]
        ofdm = capture.ofdm
        print(f"{path}: CFR capture v1")
        print(
            f"  grid: K={ofdm.n_subchannels}, {ofdm.n_used} used sub-channels "
            f"({ofdm.used_subchannels[0]}..{ofdm.used_subchannels[-1]})"
        )
        print(
            f"  antennas: {capture.n_antennas}, records: {len(capture.packets)}, "
            f"packets {min(indices)}..{max(indices)}"
        )
        print(
            f"  symbol_time: {ofdm.symbol_time} s, "
            f"packet_interval: {ofdm.packet_interval} s, "
            f"carrier: {ofdm.carrier_freq:.4g} Hz"
        )
        return 0
    if head[:2] == b"PK":
        _inspect_npz(path)
        return 0
    _inspect_text(path)
    return 0


def build_parser():
    parser = _Parser(
        prog="dopsense",
        description="Wi-Fi channel-response sensing: simulate, sanitize, "
        "Doppler-process and classify.",
    )
    parser.add_argument("--version", action="version", version=f"dopsense {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="render a scenario file into a CFR capture")
    p.add_argument("scenario", help="scenario text file")
    p.add_argument("-o", "--out", required=True, help="output capture (.dcfr)")
    p.add_argument(
        "--clean", action="store_true", help="skip the hardware phase offsets"
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sanitize", help="phase-sanitize a capture")
    p.add_argument("capture", help="input capture (.dcfr)")
    p.add_argument("-o", "--out", required=True, help="output npz")
    p.add_argument("-c", "--config", help="pipeline configuration file")
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("doppler", help="extract Doppler traces from a capture")
    p.add_argument("capture", help="input capture (.dcfr)")
    p.add_argument("-o", "--out", required=True, help="output npz")
    p.add_argument("-c", "--config", help="pipeline configuration file")
    p.add_argument(
        "--raw",
        action="store_true",
        help="skip sanitization (useful for offset-free captures)",
    )
    p.add_argument("--png", help="also write spectrogram PNGs into this directory")
    p.set_defaults(func=cmd_doppler)

    p = sub.add_parser("train", help="train the activity classifier")
    p.add_argument("dataset", nargs="?", help="trace dataset (.npz)")
    p.add_argument(
        "--synthetic",
        type=int,
        metavar="N",
        help="generate N traces per class instead of reading a dataset",
    )
    p.add_argument(
        "--subchannel-step",
        type=int,
        default=16,
        help="sub-channel thinning for --synthetic (default 16)",
    )
    p.add_argument("--dataset-out", help="also save the synthetic dataset here")
    p.add_argument("-o", "--model", required=True, help="output checkpoint (.npz)")
    p.add_argument("-c", "--config", help="pipeline configuration file")
    p.add_argument("--epochs", type=int, help="override the configured epoch cap")
    p.add_argument("--log", help="write per-epoch JSON lines here")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="label activities in a capture")
    p.add_argument("capture", help="input capture (.dcfr)")
    p.add_argument("-m", "--model", required=True, help="trained checkpoint (.npz)")
    p.add_argument("-c", "--config", help="pipeline configuration file")
    p.add_argument("--json", help="also write the events as JSON")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser(
        "pipeline", help="scenario -> capture -> sanitize -> Doppler -> labels"
    )
    p.add_argument("scenario", help="scenario text file")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument(
        "--until",
        choices=("simulate", "sanitize", "doppler", "classify"),
        default="classify",
        help="stop after this stage (default classify)",
    )
    p.add_argument("-m", "--model", help="trained checkpoint (needed for classify)")
    p.add_argument("-c", "--config", help="pipeline configuration file")
    p.add_argument(
        "--clean", action="store_true", help="skip the hardware phase offsets"
    )
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("inspect", help="describe any dopsense file")
    p.add_argument("path", help="capture, dataset, traces, checkpoint or text file")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"dopsense: error: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, FileNotFoundError, DopsenseError, ValueError) as exc:
        print(f"dopsense: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
