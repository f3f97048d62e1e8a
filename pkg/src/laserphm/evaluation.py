"""Held-out metrics: confusion matrix, accuracy, RUL RMSE, trajectory dumps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .degradation_sim import DegradationMode
from .models import (
    CLASS_ORDER,
    DEFAULT_TAU_FRACTION,
    FaultDetector,
    RulLabelSpec,
    RulPredictor,
    predict_modes,
    predict_rul,
    rul_to_hours,
)
from .preprocess import WINDOW_SIZE, FeatureWindow

TRAJECTORY_SAMPLES = 6
# steps in the last fifth of life (window spans [0, end of life])
FINAL_QUINTILE = slice(int(0.8 * WINDOW_SIZE), WINDOW_SIZE)


class EvaluationError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted, CLASS_ORDER

    def cell(self, true: DegradationMode, pred: DegradationMode) -> int:
        return int(self.counts[CLASS_ORDER.index(true), CLASS_ORDER.index(pred)])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def off_diagonal(self) -> dict[tuple[DegradationMode, DegradationMode], int]:
        return {
            (t, p): self.cell(t, p) for t in CLASS_ORDER for p in CLASS_ORDER if t is not p
        }


def confusion(true_labels: Sequence[DegradationMode], pred_labels: Sequence[DegradationMode]) -> ConfusionMatrix:
    if len(true_labels) != len(pred_labels):
        raise EvaluationError("label lists differ in length")
    counts = np.zeros((len(CLASS_ORDER), len(CLASS_ORDER)), dtype=int)
    for t, p in zip(true_labels, pred_labels):
        try:
            counts[CLASS_ORDER.index(DegradationMode(t)), CLASS_ORDER.index(DegradationMode(p))] += 1
        except ValueError:
            raise EvaluationError(f"label outside class set: {t!r}, {p!r}") from None
    return ConfusionMatrix(counts)


def accuracy(matrix: ConfusionMatrix) -> float:
    if matrix.total == 0:
        raise EvaluationError("empty confusion matrix")
    return float(np.trace(matrix.counts)) / matrix.total


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size == 0:
        raise EvaluationError("rmse needs equal, non-empty inputs")
    return math.sqrt(float(np.mean((pred - truth) ** 2)))


@dataclass
class RulRecord:
    window_id: str
    true_mode: DegradationMode
    model_used: DegradationMode
    pred: np.ndarray
    truth: np.ndarray | None
    label_spec: RulLabelSpec | None


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    rul_records: list[RulRecord]
    tau_fraction: float
    metrics: dict[str, float] = field(default_factory=dict)
    trajectories: list[RulRecord] = field(default_factory=list)

    def rmse_normalized(self, mode: DegradationMode) -> float:
        return self.metrics[f"rmse_normalized_{mode.label}"]

    def write_csvs(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "confusion": out_dir / "confusion.csv",
            "metrics": out_dir / "metrics.csv",
            "trajectories": out_dir / "trajectories.csv",
        }
        with paths["confusion"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + [m.label for m in CLASS_ORDER])
            for mode, row in zip(CLASS_ORDER, self.confusion.counts.tolist()):
                w.writerow([mode.label] + row)
        with paths["metrics"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("name", "value"))
            for name, value in self.metrics.items():
                w.writerow((name, repr(float(value))))
        with paths["trajectories"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("window_id", "step", "true_rul", "pred_rul"))
            for rec in self.trajectories:
                for step in range(rec.pred.size):
                    w.writerow((rec.window_id, step, repr(float(rec.truth[step])),
                                repr(float(rec.pred[step]))))
        return paths


def _rul_metrics(records: Sequence[RulRecord], mode: DegradationMode) -> dict[str, float]:
    """RMSE in life fraction and hours for one RUL model's labelled records."""
    recs = [r for r in records if r.model_used is mode and r.truth is not None]
    key = mode.label
    if not recs:
        return {f"n_rul_{key}": 0.0}
    pred = np.stack([r.pred for r in recs])
    truth = np.stack([r.truth for r in recs])
    hours_all, hours_final = [], []
    for r in recs:
        span = r.label_spec.failure_time - r.label_spec.tau
        hours_all.append(rmse(r.pred, r.truth) * span)
        hours_final.append(abs(rul_to_hours(float(r.pred[-1]), r.label_spec)
                               - rul_to_hours(float(r.truth[-1]), r.label_spec)))
    return {
        f"n_rul_{key}": float(len(recs)),
        f"rmse_normalized_{key}": rmse(pred, truth),
        f"rmse_normalized_final_step_{key}": rmse(pred[:, -1], truth[:, -1]),
        f"rmse_normalized_final_quintile_{key}": rmse(pred[:, FINAL_QUINTILE], truth[:, FINAL_QUINTILE]),
        f"rmse_hours_{key}": float(np.mean(hours_all)),
        f"abs_error_hours_final_step_{key}": float(np.mean(hours_final)),
    }


def build_report(
    detector: FaultDetector,
    rul_models: Mapping[DegradationMode, RulPredictor],
    test_windows: Sequence[FeatureWindow],
    tau_fraction: float = DEFAULT_TAU_FRACTION,
    seed: int = 0,
) -> EvalReport:
    """Route every test window through the detector, then the RUL model of
    the detected mode. Windows detected as normal get no RUL estimate.
    """
    if not test_windows:
        raise EvaluationError("empty test set")
    predicted, _ = predict_modes(detector, test_windows)
    cm = confusion([w.mode for w in test_windows], predicted)
    records = []
    for window, mode in zip(test_windows, predicted):
        if mode is DegradationMode.NORMAL:
            continue
        if mode not in rul_models:
            raise EvaluationError(f"no RUL model for detected mode {mode.label}")
        curve, _ = predict_rul(rul_models[mode], window)
        spec = None
        if window.failure_time is not None and window.step_rul_labels is not None:
            spec = RulLabelSpec(tau_fraction, window.failure_time)
        records.append(RulRecord(window.source_id, window.mode, mode, curve,
                                 window.step_rul_labels, spec))
    metrics = {
        "accuracy": accuracy(cm),
        "n_test_windows": float(cm.total),
        "tau_fraction": float(tau_fraction),
    }
    for mode in (DegradationMode.SUDDEN, DegradationMode.GRADUAL):
        metrics.update(_rul_metrics(records, mode))
    labelled = [r for r in records if r.truth is not None]
    rng = np.random.default_rng(seed)
    k = min(TRAJECTORY_SAMPLES, len(labelled))
    picks = sorted(rng.choice(len(labelled), size=k, replace=False)) if k else []
    return EvalReport(
        confusion=cm,
        accuracy=metrics["accuracy"],
        rul_records=records,
        tau_fraction=tau_fraction,
        metrics=metrics,
        trajectories=[labelled[i] for i in picks],
    )
