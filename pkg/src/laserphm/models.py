"""Fault detector, per-mode RUL regressors and the piecewise RUL labels.

RUL is expressed as a normalized life fraction: 1 until the degradation onset
``tau = tau_fraction * t_f``, then falling linearly to 0 at failure ``t_f``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn_core
from .degradation_sim import DegradationMode, RunToFailureSequence
from .preprocess import CHANNELS, FeatureWindow, SgFilterSpec, build_feature_window

log = logging.getLogger(__name__)

CLASS_ORDER = (DegradationMode.NORMAL, DegradationMode.SUDDEN, DegradationMode.GRADUAL)
DETECTOR_HIDDEN = 50
RUL_HIDDEN = (64, 32)
DEFAULT_TAU_FRACTION = 0.6

PURPOSE_DETECTOR = "fault-detector"
RUL_PURPOSES = {
    DegradationMode.SUDDEN: "rul-sudden",
    DegradationMode.GRADUAL: "rul-gradual",
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RulLabelSpec:
    tau_fraction: float
    failure_time: float

    def __post_init__(self):
        if not 0 < self.tau_fraction < 1:
            raise ValueError("tau_fraction must lie in (0, 1)")
        if not self.failure_time > 0:
            raise ValueError("failure_time must be > 0")

    @property
    def tau(self) -> float:
        return self.tau_fraction * self.failure_time

    @classmethod
    def from_onset(cls, tau: float, failure_time: float) -> "RulLabelSpec":
        return cls(tau / failure_time, failure_time)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 42
    split: float = 0.8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def label_rul(t: float, spec: RulLabelSpec) -> float:
    t_f, tau = spec.failure_time, spec.tau
    if t < 0 or t > t_f:
        raise ValueError(f"t={t} outside [0, t_f={t_f}]")
    if t <= tau:
        return 1.0
    return (t_f - t) / (t_f - tau)


def label_curve(times, failure_time: float, tau_fraction: float = DEFAULT_TAU_FRACTION) -> np.ndarray:
    """Vectorised ``label_rul``; samples past ``failure_time`` are labelled 0."""
    spec = RulLabelSpec(tau_fraction, failure_time)
    t = np.minimum(np.asarray(times, dtype=float), failure_time)
    return np.where(t <= spec.tau, 1.0, (failure_time - t) / (failure_time - spec.tau))


def rul_to_hours(fraction: float, spec: RulLabelSpec) -> float:
    """Remaining hours implied by a life fraction on the linear branch."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    return fraction * (spec.failure_time - spec.tau)


def prepare_windows(
    sequences: Iterable[RunToFailureSequence],
    sg_spec: SgFilterSpec | None = None,
    tau_fraction: float = DEFAULT_TAU_FRACTION,
) -> list[FeatureWindow]:
    label_fn = partial(label_curve, tau_fraction=tau_fraction)
    return [build_feature_window(s, sg_spec, label_fn) for s in sequences]


def stratified_split(
    windows: Sequence[FeatureWindow], split: float, seed: int
) -> tuple[list[FeatureWindow], list[FeatureWindow]]:
    """Per-class seeded shuffle; the first ``round(split * n)`` go to training.

    Each class draws from its own stream, so splitting a single-mode subset
    gives the same partition as splitting the full dataset.
    """
    train, test = [], []
    for mode in CLASS_ORDER:
        members = [w for w in windows if w.mode is mode]
        if not members:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(mode)]))
        order = rng.permutation(len(members))
        n_train = int(round(split * len(members)))
        train.extend(members[i] for i in order[:n_train])
        test.extend(members[i] for i in order[n_train:])
    ids = [w.source_id for w in train]
    if len(set(ids)) != len(ids) or set(ids) & {w.source_id for w in test}:
        raise DatasetError("window ids are not unique")
    return train, test


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    holdout_metric: float


@dataclass
class TrainingLog:
    metric_name: str
    records: list[EpochRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "train_loss", "holdout_metric"))
            for r in self.records:
                w.writerow((r.epoch, repr(r.train_loss), repr(r.holdout_metric)))


@dataclass
class FaultDetector:
    network: nn_core.LstmNetwork

    def __post_init__(self):
        net = self.network
        if (
            len(net.layers) != 1
            or net.layers[0].hidden_dim != DETECTOR_HIDDEN
            or net.input_dim != len(CHANNELS)
            or net.output_dim != len(CLASS_ORDER)
            or net.dense.activation != "softmax"
        ):
            raise ValueError("fault detector must be LSTM(4 -> 50) + softmax(3)")


@dataclass
class RulPredictor:
    network: nn_core.LstmNetwork
    mode: DegradationMode

    def __post_init__(self):
        net = self.network
        if self.mode not in RUL_PURPOSES:
            raise ValueError("RUL models exist for sudden and gradual modes only")
        if len(net.layers) != 2 or net.output_dim != 1 or net.dense.activation != "sigmoid":
            raise ValueError("RUL predictor must be two stacked LSTMs + sigmoid(1)")


def new_detector(seed: int = 0) -> FaultDetector:
    rng = np.random.default_rng(seed)
    net = nn_core.init_network(
        len(CHANNELS), [DETECTOR_HIDDEN], len(CLASS_ORDER), "softmax", rng,
        purpose=PURPOSE_DETECTOR, input_channels=list(CHANNELS),
    )
    return FaultDetector(net)


def new_rul_predictor(mode: DegradationMode, seed: int = 0) -> RulPredictor:
    rng = np.random.default_rng(seed)
    net = nn_core.init_network(
        len(CHANNELS), list(RUL_HIDDEN), 1, "sigmoid", rng,
        purpose=RUL_PURPOSES[mode], input_channels=list(CHANNELS),
    )
    return RulPredictor(net, mode)


def _stack(windows: Sequence[FeatureWindow]) -> np.ndarray:
    return np.stack([w.features for w in windows])


def _fit(net, x, y, cfg: TrainConfig, evaluate, log_: TrainingLog, rng) -> None:
    state = nn_core.AdamState(lr=cfg.learning_rate)
    params = net.params()
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = nn_core.batch_loss_and_grad(net, x[idx], y[idx])
            nn_core.clip_by_global_norm(grads)
            nn_core.adam_step(params, grads, state)
            total += loss * idx.size
        record = EpochRecord(epoch, total / n, evaluate())
        log_.records.append(record)
        log.debug("%s epoch %d loss %.5f %s %.5f", net.purpose, epoch,
                  record.train_loss, log_.metric_name, record.holdout_metric)


def train_detector(
    windows: Sequence[FeatureWindow], cfg: TrainConfig | None = None
) -> tuple[FaultDetector, TrainingLog]:
    cfg = cfg or TrainConfig()
    train, test = stratified_split(windows, cfg.split, cfg.seed)
    missing = set(CLASS_ORDER) - {w.mode for w in train}
    if missing:
        names = ", ".join(sorted(m.label for m in missing))
        raise DatasetError(f"training split lacks class(es): {names}")
    model = new_detector(seed=cfg.seed)
    x = _stack(train)
    y = np.array([CLASS_ORDER.index(w.mode) for w in train])
    x_test = _stack(test) if test else None
    y_test = np.array([CLASS_ORDER.index(w.mode) for w in test])

    def holdout_accuracy() -> float:
        if x_test is None:
            return float("nan")
        probs, _ = nn_core.network_forward(model.network, x_test)
        return float(np.mean(np.argmax(probs, axis=1) == y_test))

    training_log = TrainingLog("holdout_accuracy")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 100]))
    _fit(model.network, x, y, cfg, holdout_accuracy, training_log, rng)
    return model, training_log


def predict_mode(model: FaultDetector, window) -> tuple[DegradationMode, np.ndarray]:
    probs, _ = nn_core.network_forward(model.network, window)
    # argmax returns the first maximum, i.e. class order breaks ties
    return CLASS_ORDER[int(np.argmax(probs))], probs


def predict_modes(model: FaultDetector, windows: Sequence[FeatureWindow]):
    probs, _ = nn_core.network_forward(model.network, _stack(windows))
    return [CLASS_ORDER[int(k)] for k in np.argmax(probs, axis=1)], probs


def train_rul(
    windows: Sequence[FeatureWindow],
    mode: DegradationMode,
    cfg: TrainConfig | None = None,
) -> tuple[RulPredictor, TrainingLog]:
    cfg = cfg or TrainConfig(epochs=50)
    if mode not in RUL_PURPOSES:
        raise DatasetError(f"no RUL model for mode {mode.label}")
    for w in windows:
        if w.mode is not mode:
            raise DatasetError(f"window {w.source_id} is {w.mode.label}, expected {mode.label}")
        if w.step_rul_labels is None:
            raise DatasetError(f"window {w.source_id} has no RUL labels")
    train, test = stratified_split(windows, cfg.split, cfg.seed)
    if not train:
        raise DatasetError("empty training split")
    model = new_rul_predictor(mode, seed=cfg.seed + int(mode))
    x = _stack(train)
    y = np.stack([w.step_rul_labels for w in train])
    x_test = _stack(test) if test else None
    y_test = np.stack([w.step_rul_labels for w in test]) if test else None

    def holdout_rmse() -> float:
        if x_test is None:
            return float("nan")
        pred, _ = nn_core.network_forward(model.network, x_test)
        return float(np.sqrt(np.mean((pred - y_test) ** 2)))

    training_log = TrainingLog("holdout_rmse")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 100 + int(mode)]))
    _fit(model.network, x, y, cfg, holdout_rmse, training_log, rng)
    return model, training_log


def predict_rul(model: RulPredictor, window) -> tuple[np.ndarray, float]:
    """Per-step life-fraction curve and its final value (the headline RUL)."""
    curve, _ = nn_core.network_forward(model.network, window)
    return curve, float(curve[-1])


def save_model(model: FaultDetector | RulPredictor, path) -> None:
    nn_core.save_network(model.network, path)


def load_detector(path) -> FaultDetector:
    net = nn_core.load_network(path)
    if net.purpose != PURPOSE_DETECTOR:
        raise nn_core.ModelFormatError(f"{path}: purpose {net.purpose!r}, expected {PURPOSE_DETECTOR!r}")
    return FaultDetector(net)


def load_rul_predictor(path, mode: DegradationMode) -> RulPredictor:
    net = nn_core.load_network(path)
    if net.purpose != RUL_PURPOSES[mode]:
        raise nn_core.ModelFormatError(
            f"{path}: purpose {net.purpose!r}, expected {RUL_PURPOSES[mode]!r}"
        )
    return RulPredictor(net, mode)
