"""Command-line entry point: ``laserphm {generate,preprocess,train,evaluate,diagnose,pipeline}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import nn_core
from .config import ConfigError, RunConfig, load_config
from .degradation_sim import (
    CsvFormatError,
    DegradationError,
    DegradationMode,
    GenerationError,
    generate_dataset,
    read_sequences_csv,
    write_sequences_csv,
)
from .evaluation import EvaluationError, build_report
from .models import (
    CLASS_ORDER,
    PURPOSE_DETECTOR,
    RUL_PURPOSES,
    DatasetError,
    RulLabelSpec,
    load_detector,
    load_rul_predictor,
    predict_mode,
    predict_rul,
    prepare_windows,
    rul_to_hours,
    save_model,
    stratified_split,
    train_detector,
    train_rul,
)
from .preprocess import PreprocessError, build_feature_window, write_feature_csv

log = logging.getLogger("laserphm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(RuntimeError):
    """Missing or unreadable input files."""


def dataset_paths(cfg: RunConfig) -> dict[DegradationMode, Path]:
    return {mode: cfg.data_dir / f"{mode.label}.csv" for mode in DegradationMode}


def model_path(model_dir: Path, purpose: str) -> Path:
    return Path(model_dir) / f"{purpose}.json"


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {path}: {exc}") from None
    return path


def cmd_generate(cfg: RunConfig) -> dict[DegradationMode, Path]:
    out = _mkdir(cfg.data_dir)
    sequences = generate_dataset(cfg.counts, cfg.seed)
    paths = dataset_paths(cfg)
    for mode, path in paths.items():
        try:
            write_sequences_csv(path, (s for s in sequences if s.mode is mode))
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from None
    _write_json(out / "manifest.json", {
        "seed": cfg.seed,
        "counts": {m.label: c for m, c in zip(DegradationMode, cfg.counts)},
        "files": {m.label: p.name for m, p in paths.items()},
    })
    cfg.write_resolved(out)
    log.info("wrote %d sequences to %s", len(sequences), out)
    return paths


def load_sequences(cfg: RunConfig):
    sequences = []
    for path in dataset_paths(cfg).values():
        if not path.exists():
            raise DataError(f"missing dataset file {path} (run `generate` first)")
        sequences.extend(read_sequences_csv(path))
    return sequences


def load_windows(cfg: RunConfig):
    return prepare_windows(load_sequences(cfg), cfg.sg_spec, cfg.tau_fraction)


def cmd_preprocess(cfg: RunConfig) -> Path:
    windows = load_windows(cfg)
    path = cfg.data_dir / "features.csv"
    write_feature_csv(path, windows)
    log.info("wrote %d windows to %s", len(windows), path)
    return path


def cmd_train(cfg: RunConfig) -> dict[str, Path]:
    windows = load_windows(cfg)
    out = _mkdir(cfg.model_dir)
    written = {}
    detector, det_log = train_detector(windows, cfg.detector)
    written[PURPOSE_DETECTOR] = model_path(out, PURPOSE_DETECTOR)
    save_model(detector, written[PURPOSE_DETECTOR])
    det_log.write_csv(out / f"train_log_{PURPOSE_DETECTOR}.csv")
    log.info("detector holdout accuracy %.4f", det_log.records[-1].holdout_metric)
    for mode, train_cfg in ((DegradationMode.SUDDEN, cfg.rul_sudden),
                            (DegradationMode.GRADUAL, cfg.rul_gradual)):
        purpose = RUL_PURPOSES[mode]
        model, rul_log = train_rul([w for w in windows if w.mode is mode], mode, train_cfg)
        written[purpose] = model_path(out, purpose)
        save_model(model, written[purpose])
        rul_log.write_csv(out / f"train_log_{purpose}.csv")
        log.info("%s holdout RMSE %.4f", purpose, rul_log.records[-1].holdout_metric)
    _, test = stratified_split(windows, cfg.detector.split, cfg.seed)
    test_ids = {w.source_id for w in test}
    (out / "split.csv").write_text(
        "window_id,subset\n"
        + "".join(f"{w.source_id},{'test' if w.source_id in test_ids else 'train'}\n"
                  for w in windows),
        encoding="utf-8",
    )
    cfg.write_resolved(out)
    return written


def _load_models(model_dir: Path):
    for purpose in (PURPOSE_DETECTOR, *RUL_PURPOSES.values()):
        if not model_path(model_dir, purpose).exists():
            raise DataError(f"missing model file {model_path(model_dir, purpose)} (run `train` first)")
    detector = load_detector(model_path(model_dir, PURPOSE_DETECTOR))
    rul = {m: load_rul_predictor(model_path(model_dir, p), m) for m, p in RUL_PURPOSES.items()}
    return detector, rul


def cmd_evaluate(cfg: RunConfig):
    detector, rul_models = _load_models(cfg.model_dir)
    windows = load_windows(cfg)
    _, test = stratified_split(windows, cfg.detector.split, cfg.seed)
    report = build_report(detector, rul_models, test, cfg.tau_fraction, seed=cfg.seed)
    out = _mkdir(cfg.report_dir)
    report.write_csvs(out)
    cfg.write_resolved(out)
    for name, value in report.metrics.items():
        log.info("%s = %.6g", name, value)
    return report


def diagnose_sequence(seq, model_dir: Path, cfg: RunConfig) -> dict:
    """Two-stage routing for one raw sequence: detect, then (if degrading) prognose."""
    detector = load_detector(model_path(model_dir, PURPOSE_DETECTOR))
    window = build_feature_window(seq, cfg.sg_spec)
    mode, probs = predict_mode(detector, window)
    record = {
        "sequence_id": seq.sequence_id,
        "mode": mode.label,
        "probabilities": {m.label: float(p) for m, p in zip(CLASS_ORDER, probs)},
    }
    if mode is DegradationMode.NORMAL:
        return record
    purpose = RUL_PURPOSES[mode]
    model = load_rul_predictor(model_path(model_dir, purpose), mode)
    _, fraction = predict_rul(model, window)
    record["model_used"] = purpose
    record["rul_fraction"] = fraction
    if seq.failure_time is not None and seq.failure_time > 0:
        spec = RulLabelSpec(cfg.tau_fraction, seq.failure_time)
        record["rul_hours"] = rul_to_hours(fraction, spec)
        record["rul_hours_basis"] = "recorded failure time"
    else:
        # Invert the linear branch assuming life started at t = 0:
        # fraction = (t_f - t) / ((1 - tau_fraction) * t_f)
        t_now = float(seq.times[-1])
        span = fraction * (1.0 - cfg.tau_fraction)
        record["rul_hours"] = span * t_now / (1.0 - span)
        record["rul_hours_basis"] = "estimated from elapsed time"
    return record


def cmd_diagnose(cfg: RunConfig, input_csv, model_dir=None, sequence_id=None, output=None) -> dict:
    input_csv = Path(input_csv)
    if not input_csv.exists():
        raise DataError(f"missing input {input_csv}")
    sequences = read_sequences_csv(input_csv)
    if sequence_id is not None:
        sequences = [s for s in sequences if s.sequence_id == sequence_id]
        if not sequences:
            raise DataError(f"{input_csv}: no sequence {sequence_id!r}")
    if len(sequences) != 1:
        raise DataError(f"{input_csv}: expected one sequence, found {len(sequences)} "
                        "(select one with --sequence-id)")
    model_dir = Path(model_dir) if model_dir is not None else cfg.model_dir
    record = diagnose_sequence(sequences[0], model_dir, cfg)
    output = Path(output) if output is not None else _mkdir(cfg.report_dir) / "diagnosis.json"
    _write_json(output, record)
    print(json.dumps(record, indent=2, sort_keys=True))
    return record


def cmd_pipeline(cfg: RunConfig):
    cmd_generate(cfg)
    cmd_train(cfg)
    return cmd_evaluate(cfg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, default=None,
                        help="base directory for relative data/model/report paths")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="laserphm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthesize run-to-failure CSVs")
    sub.add_parser("preprocess", parents=[common], help="write the 100-step feature CSV")
    sub.add_parser("train", parents=[common], help="train detector and both RUL models")
    sub.add_parser("evaluate", parents=[common], help="write held-out report CSVs")
    sub.add_parser("pipeline", parents=[common], help="generate, train and evaluate")
    diag = sub.add_parser("diagnose", parents=[common], help="detect mode and RUL of one sequence")
    diag.add_argument("--input", type=Path, required=True, help="raw sequence CSV")
    diag.add_argument("--models", type=Path, help="model directory (default: config model_dir)")
    diag.add_argument("--sequence-id", help="sequence to pick from a multi-sequence CSV")
    diag.add_argument("--output", type=Path, help="diagnosis JSON path")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        if args.command == "diagnose":
            cmd_diagnose(cfg, args.input, args.models, args.sequence_id, args.output)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DegradationError, FloatingPointError, OverflowError) as exc:
        log.error("numeric error: %s", exc)
        return EXIT_NUMERIC
    except (DataError, CsvFormatError, DatasetError, GenerationError, PreprocessError,
            EvaluationError, nn_core.ModelFormatError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
