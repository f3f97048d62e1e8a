"""Turn raw current traces into fixed-length model inputs.

Pipeline per sequence: Savitzky-Golay smoothing, linear resampling onto a
100-step grid, min-max normalization of the current, and constant condition
channels (temperature, optical power, wavelength) scaled by the generator's
fixed ranges. Also houses the Pearson correlation used for feature ranking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .degradation_sim import (
    POWER_RANGE,
    TEMPERATURE_RANGE,
    WAVELENGTH_RANGE,
    DegradationMode,
    RunToFailureSequence,
)

WINDOW_SIZE = 100
CHANNELS = ("current_norm", "T_norm", "P_norm", "lambda_norm")
FEATURE_CSV_COLUMNS = ("window_id", "step") + CHANNELS + ("rul_label", "mode_label")

CONDITION_RANGES = {
    "T": TEMPERATURE_RANGE,
    "P": POWER_RANGE,
    "lambda": WAVELENGTH_RANGE,
}


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class SgFilterSpec:
    window_length: int = 11
    poly_order: int = 3

    def __post_init__(self):
        if self.window_length < 3 or self.window_length % 2 == 0:
            raise PreprocessError("window_length must be an odd integer >= 3")
        if not 0 <= self.poly_order < self.window_length:
            raise PreprocessError("poly_order must satisfy 0 <= poly_order < window_length")


@dataclass
class FeatureWindow:
    """A (100, 4) model input plus the bookkeeping needed for evaluation.

    ``end_time`` is the time of the last raw sample; ``failure_time`` is only
    set for degrading sequences.
    """

    source_id: str
    mode: DegradationMode
    features: np.ndarray
    step_rul_labels: np.ndarray | None = None
    failure_time: float | None = None
    end_time: float | None = None

    @property
    def current_channel(self) -> np.ndarray:
        return self.features[:, 0]

    @property
    def condition_channels(self) -> np.ndarray:
        return self.features[:, 1:]


@dataclass
class CorrelationMatrix:
    feature_names: list[str]
    values: np.ndarray

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.feature_names.index(a), self.feature_names.index(b)])


def sg_coefficients(spec: SgFilterSpec) -> np.ndarray:
    """Least-squares polynomial smoothing weights for the window centre."""
    half = spec.window_length // 2
    x = np.arange(-half, half + 1, dtype=float)
    vander = np.vander(x, spec.poly_order + 1, increasing=True)
    # Row 0 of the pseudo-inverse evaluates the fitted polynomial at x = 0.
    coeffs = np.linalg.pinv(vander)[0]
    assert np.all(np.isfinite(coeffs))
    return coeffs


def sg_smooth(signal, spec: SgFilterSpec | None = None) -> np.ndarray:
    spec = spec or SgFilterSpec()
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1 or signal.size < spec.window_length:
        raise PreprocessError(
            f"signal of length {signal.size} is shorter than the SG window {spec.window_length}"
        )
    half = spec.window_length // 2
    padded = np.pad(signal, half, mode="reflect")
    # coefficients are symmetric, so correlation == convolution
    return np.convolve(padded, sg_coefficients(spec)[::-1], mode="valid")


def resample_to_window(signal, times, target_len: int = WINDOW_SIZE) -> np.ndarray:
    signal = np.asarray(signal, dtype=float)
    times = np.asarray(times, dtype=float)
    if signal.size < 2 or signal.shape != times.shape:
        raise PreprocessError("need at least 2 samples with matching times")
    if not np.all(np.diff(times) > 0):
        raise PreprocessError("times must be strictly increasing")
    grid = np.linspace(times[0], times[-1], target_len)
    out = np.interp(grid, times, signal)
    out[0], out[-1] = signal[0], signal[-1]
    return out


def minmax_normalize(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def scale_condition(value: float, feature: str) -> float:
    """Map T / P / lambda onto [0, 1] using the generator ranges (clamped)."""
    try:
        lo, hi = CONDITION_RANGES[feature]
    except KeyError:
        raise PreprocessError(f"unknown condition feature {feature!r}") from None
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def build_feature_window(
    seq: RunToFailureSequence,
    spec: SgFilterSpec | None = None,
    label_fn: Callable[[np.ndarray, float], np.ndarray] | None = None,
) -> FeatureWindow:
    """Preprocess one sequence.

    ``label_fn(times, failure_time)`` produces per-step RUL labels; it is only
    called when the sequence has a failure time. The models module passes its
    piecewise labeler here.
    """
    spec = spec or SgFilterSpec()
    smooth = sg_smooth(seq.currents, spec)
    current = minmax_normalize(resample_to_window(smooth, seq.times))
    c = seq.conditions
    conds = [
        scale_condition(c.temperature, "T"),
        scale_condition(c.optical_power, "P"),
        scale_condition(c.wavelength, "lambda"),
    ]
    features = np.empty((WINDOW_SIZE, len(CHANNELS)))
    features[:, 0] = current
    features[:, 1:] = conds
    labels = None
    if seq.failure_time is not None and label_fn is not None:
        labels = resample_to_window(label_fn(seq.times, seq.failure_time), seq.times)
    window = FeatureWindow(
        source_id=seq.sequence_id,
        mode=seq.mode,
        features=features,
        step_rul_labels=labels,
        failure_time=seq.failure_time,
        end_time=float(seq.times[-1]),
    )
    if not (np.all(np.isfinite(features)) and features.min() >= 0 and features.max() <= 1):
        raise PreprocessError(f"{seq.sequence_id}: features outside [0, 1]")
    return window


def correlation_matrix(table: Mapping[str, Sequence[float]]) -> CorrelationMatrix:
    """Pearson coefficients between all named columns.

    A constant column has correlation 0 with every other column (1 with itself).
    """
    names = list(table)
    data = np.array([np.asarray(table[n], dtype=float) for n in names])
    if data.ndim != 2 or data.shape[1] < 2:
        raise PreprocessError("correlation needs at least 2 rows")
    centred = data - data.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centred, centred))
    safe = np.where(norms > 0, norms, 1.0)
    unit = centred / safe[:, None]
    values = np.clip(unit @ unit.T, -1.0, 1.0)
    values = (values + values.T) / 2
    np.fill_diagonal(values, 1.0)
    return CorrelationMatrix(names, values)


def feature_rank(matrix: CorrelationMatrix, target: str) -> list[tuple[str, float]]:
    if target not in matrix.feature_names:
        raise PreprocessError(f"unknown target {target!r}")
    j = matrix.feature_names.index(target)
    pairs = [
        (name, abs(float(matrix.values[i, j])))
        for i, name in enumerate(matrix.feature_names)
        if i != j
    ]
    # stable sort keeps column order on ties
    return sorted(pairs, key=lambda p: -p[1])


def write_feature_csv(path, windows: Iterable[FeatureWindow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_CSV_COLUMNS)
        for w in windows:
            labels = w.step_rul_labels
            for step, row in enumerate(w.features.tolist()):
                writer.writerow(
                    [w.source_id, step]
                    + [repr(v) for v in row]
                    + ["" if labels is None else repr(float(labels[step])), w.mode.label]
                )
