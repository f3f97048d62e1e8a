"""Synthetic run-to-failure current data for semiconductor lasers.

The operating current at constant optical power follows

    I(t) = I0 + beta * exp(k * t) + noise,   k = P**n * exp(mu0 - E_A / (k_B * T))

A laser is considered failed once the noiseless current has risen 20 % above
the threshold current I0.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BOLTZMANN_EV = 8.617333262e-5  # eV/K
FAILURE_RISE = 0.2  # end of life at I(t) >= (1 + FAILURE_RISE) * I0
MIN_SAMPLES_TO_FAILURE = 10
RETRY_BUDGET = 100

# Datasheet-style operating ranges (lo, hi); preprocess scales with these too.
TEMPERATURE_RANGE = (293.0, 358.0)
POWER_RANGE = (1.0, 10.0)
WAVELENGTH_RANGE = (1530.0, 1570.0)
THRESHOLD_CURRENT_RANGE = (15.0, 35.0)

NOISE_STD_FRACTION = 0.003

CSV_COLUMNS = (
    "sequence_id",
    "mode_label",
    "t_hours",
    "current_mA",
    "temperature_K",
    "power_mW",
    "wavelength_nm",
    "threshold_current_mA",
    "failure_time_hours",
)


class DegradationError(ValueError):
    """Non-finite model output or an invalid scenario."""


class ScenarioRejected(DegradationError):
    """Scenario cannot produce a usable run-to-failure sequence."""


class GenerationError(RuntimeError):
    """Scenario sampling ran out of retries."""


class DegradationMode(enum.IntEnum):
    NORMAL = 0
    SUDDEN = 1
    GRADUAL = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "DegradationMode":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown degradation mode {label!r}") from None


@dataclass(frozen=True)
class OperatingConditions:
    temperature: float  # K
    optical_power: float  # mW
    wavelength: float  # nm
    threshold_current: float  # mA

    def __post_init__(self):
        for name in ("temperature", "optical_power", "wavelength", "threshold_current"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DegradationError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class DegradationParams:
    beta: float  # mA
    derating_exponent: float
    scale_param: float
    activation_energy: float  # eV
    noise_mean: float = 0.0  # mA
    noise_std: float = 0.0  # mA

    def __post_init__(self):
        if self.beta < 0:
            raise DegradationError(f"beta must be >= 0, got {self.beta}")
        if self.noise_std < 0:
            raise DegradationError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.activation_energy < 0:
            raise DegradationError(
                f"activation_energy must be >= 0, got {self.activation_energy}"
            )


@dataclass(frozen=True)
class DegradationScenario:
    mode: DegradationMode
    conditions: OperatingConditions
    params: DegradationParams
    sampling_interval: float  # h
    horizon: float  # h
    seed: int = 0

    def __post_init__(self):
        if not self.sampling_interval > 0:
            raise DegradationError("sampling_interval must be > 0")
        if self.horizon < self.sampling_interval:
            raise DegradationError("horizon must be >= sampling_interval")
        if not 0 <= self.seed < 2**64:
            raise DegradationError("seed must be a 64-bit unsigned integer")


@dataclass
class RunToFailureSequence:
    """One simulated (or loaded) current trace.

    ``scenario`` is only available for freshly simulated sequences; sequences
    read back from CSV carry the operating conditions alone.
    """

    sequence_id: str
    mode: DegradationMode
    conditions: OperatingConditions
    times: np.ndarray
    currents: np.ndarray
    failure_time: float | None = None
    scenario: DegradationScenario | None = field(default=None, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.currents = np.asarray(self.currents, dtype=float)
        if self.times.shape != self.currents.shape or self.times.ndim != 1:
            raise DegradationError("times and currents must be 1-D and equally long")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise DegradationError(f"{self.sequence_id}: times not strictly increasing")

    def __len__(self) -> int:
        return self.times.size


# Mode-specific generator settings. Normals are truncated at +-3 sigma.
@dataclass(frozen=True)
class ModeProfile:
    beta_fraction: tuple[float, float]  # (mean, std) as a fraction of I0
    scale_param: tuple[float, float]
    activation_energy: tuple[float, float]
    derating_exponent: float
    sampling_interval: float
    horizon: float


MODE_PROFILES = {
    DegradationMode.NORMAL: ModeProfile(
        beta_fraction=(0.0, 0.0),
        scale_param=(-3.5557, 0.1),
        activation_energy=(0.1, 0.001),
        derating_exponent=0.5,
        sampling_interval=1.0,
        horizon=1000.0,
    ),
    DegradationMode.GRADUAL: ModeProfile(
        beta_fraction=(0.05, 0.005),
        scale_param=(-3.5557, 0.1),
        activation_energy=(0.1, 0.001),
        derating_exponent=0.5,
        sampling_interval=1.0,
        horizon=6000.0,
    ),
    DegradationMode.SUDDEN: ModeProfile(
        beta_fraction=(1e-4, 2e-5),
        scale_param=(1.6525, 0.1),
        activation_energy=(0.1, 0.001),
        derating_exponent=0.5,
        sampling_interval=1.0 / 60.0,
        horizon=240.0,
    ),
}


def compute_rate_k(conditions: OperatingConditions, params: DegradationParams) -> float:
    """Degradation rate k in 1/h (power in mW, temperature in K, E_A in eV)."""
    exponent = params.scale_param - params.activation_energy / (
        BOLTZMANN_EV * conditions.temperature
    )
    with np.errstate(over="raise", invalid="raise"):
        try:
            k = float(
                np.power(conditions.optical_power, params.derating_exponent)
                * np.exp(exponent)
            )
        except FloatingPointError as exc:
            raise DegradationError(f"rate k overflowed: {exc}") from None
    if not math.isfinite(k):
        raise DegradationError("rate k is not finite")
    return k


def noiseless_current(t, scenario: DegradationScenario):
    """Vectorised I0 + beta * exp(k t)."""
    k = compute_rate_k(scenario.conditions, scenario.params)
    t = np.asarray(t, dtype=float)
    if scenario.params.beta == 0:
        return np.full_like(t, scenario.conditions.threshold_current)
    with np.errstate(over="ignore"):
        out = scenario.conditions.threshold_current + scenario.params.beta * np.exp(k * t)
    if not np.all(np.isfinite(out)):
        raise DegradationError("current is not finite")
    return out


def current_at(t: float, scenario: DegradationScenario, noise_sample: float = 0.0) -> float:
    if t < 0:
        raise DegradationError(f"t must be >= 0, got {t}")
    value = float(noiseless_current(t, scenario)) + noise_sample
    if not math.isfinite(value):
        raise DegradationError("current is not finite")
    return value


def failure_time(scenario: DegradationScenario) -> float | None:
    """Time at which the noiseless current first reaches 1.2 * I0.

    Returns None when the current never gets there within the horizon. If
    beta alone already exceeds the margin the laser is failed at t = 0.
    """
    beta = scenario.params.beta
    margin = FAILURE_RISE * scenario.conditions.threshold_current
    if beta <= 0:
        return None
    if beta >= margin:
        return 0.0
    k = compute_rate_k(scenario.conditions, scenario.params)
    if k <= 0:
        return None
    t_f = math.log(margin / beta) / k
    if t_f > scenario.horizon:
        return None
    return t_f


def check_scenario(scenario: DegradationScenario) -> float | None:
    """Raise ScenarioRejected unless ``generate_sequence`` can use the scenario."""
    t_f = failure_time(scenario)
    if scenario.mode is DegradationMode.NORMAL:
        return t_f
    if t_f is None:
        raise ScenarioRejected("degrading scenario never reaches the failure criterion")
    if t_f < MIN_SAMPLES_TO_FAILURE * scenario.sampling_interval:
        raise ScenarioRejected(
            f"failure at {t_f:.4g} h is shorter than "
            f"{MIN_SAMPLES_TO_FAILURE} sampling intervals"
        )
    return t_f


def sample_times(scenario: DegradationScenario, t_f: float | None) -> np.ndarray:
    dt = scenario.sampling_interval
    if t_f is None:
        n = int(math.floor(scenario.horizon / dt + 1e-9)) + 1
    else:
        # stop at the first grid point at or past failure
        n = int(math.ceil(t_f / dt - 1e-12)) + 1
    return np.arange(n, dtype=float) * dt


def generate_sequence(scenario: DegradationScenario, sequence_id: str | None = None) -> RunToFailureSequence:
    t_f = check_scenario(scenario)
    if scenario.mode is DegradationMode.NORMAL:
        # normal lasers run the full horizon regardless of beta
        t_f = None
    times = sample_times(scenario, t_f)
    currents = noiseless_current(times, scenario)
    params = scenario.params
    if params.noise_std > 0 or params.noise_mean != 0:
        rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 1]))
        currents = currents + rng.normal(params.noise_mean, params.noise_std, size=times.size)
    return RunToFailureSequence(
        sequence_id=sequence_id or f"{scenario.mode.label}-{scenario.seed}",
        mode=scenario.mode,
        conditions=scenario.conditions,
        times=times,
        currents=currents,
        failure_time=t_f,
        scenario=scenario,
    )


def _truncated_normal(rng: np.random.Generator, mean: float, std: float) -> float:
    if std == 0:
        return mean
    while True:
        z = rng.standard_normal()
        if abs(z) <= 3.0:
            return mean + std * z


def sample_scenario(mode: DegradationMode, rng_seed: int) -> DegradationScenario:
    mode = DegradationMode(mode)
    profile = MODE_PROFILES[mode]
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0]))
    for _ in range(RETRY_BUDGET):
        conditions = OperatingConditions(
            temperature=rng.uniform(*TEMPERATURE_RANGE),
            optical_power=rng.uniform(*POWER_RANGE),
            wavelength=rng.uniform(*WAVELENGTH_RANGE),
            threshold_current=rng.uniform(*THRESHOLD_CURRENT_RANGE),
        )
        i0 = conditions.threshold_current
        bmean, bstd = profile.beta_fraction
        params = DegradationParams(
            beta=max(0.0, i0 * _truncated_normal(rng, bmean, bstd)),
            derating_exponent=profile.derating_exponent,
            scale_param=_truncated_normal(rng, *profile.scale_param),
            activation_energy=_truncated_normal(rng, *profile.activation_energy),
            noise_mean=0.0,
            noise_std=NOISE_STD_FRACTION * i0,
        )
        scenario = DegradationScenario(
            mode=mode,
            conditions=conditions,
            params=params,
            sampling_interval=profile.sampling_interval,
            horizon=profile.horizon,
            seed=rng_seed,
        )
        try:
            check_scenario(scenario)
        except ScenarioRejected:
            continue
        return scenario
    raise GenerationError(f"no valid {mode.label} scenario after {RETRY_BUDGET} draws")


def sequence_seed(base_seed: int, mode: DegradationMode, index: int) -> int:
    """Independent 64-bit stream seed for one sequence of a dataset."""
    ss = np.random.SeedSequence([base_seed, int(mode), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(counts: Sequence[int], base_seed: int) -> list[RunToFailureSequence]:
    """``counts`` is ordered (normal, sudden, gradual)."""
    if len(counts) != len(DegradationMode):
        raise ValueError("counts must give one entry per degradation mode")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be >= 0")
    out = []
    for mode, count in zip(DegradationMode, counts):
        for i in range(count):
            scenario = sample_scenario(mode, sequence_seed(base_seed, mode, i))
            out.append(generate_sequence(scenario, f"{mode.label}-{i:04d}"))
    return out


# --- CSV -------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_sequences_csv(path, sequences: Iterable[RunToFailureSequence]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for seq in sequences:
            c = seq.conditions
            static = (
                _fmt(c.temperature),
                _fmt(c.optical_power),
                _fmt(c.wavelength),
                _fmt(c.threshold_current),
                "" if seq.failure_time is None else _fmt(seq.failure_time),
            )
            for t, i in zip(seq.times.tolist(), seq.currents.tolist()):
                writer.writerow((seq.sequence_id, seq.mode.label, repr(t), repr(i)) + static)


class CsvFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def read_sequences_csv(path) -> list[RunToFailureSequence]:
    """Load sequences written by ``write_sequences_csv``; order of first appearance."""
    path = Path(path)
    groups: dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise CsvFormatError(path, 1, f"expected header {','.join(CSV_COLUMNS)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise CsvFormatError(path, line, f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                sid = row[0]
                mode = DegradationMode.from_label(row[1])
                t, i = float(row[2]), float(row[3])
                static = tuple(float(v) for v in row[4:8])
                t_f = float(row[8]) if row[8].strip() else None
            except ValueError as exc:
                raise CsvFormatError(path, line, str(exc)) from None
            g = groups.get(sid)
            if g is None:
                g = groups[sid] = {"mode": mode, "static": static, "failure_time": t_f,
                                   "times": [], "currents": [], "line": line}
            elif g["mode"] is not mode or g["static"] != static or g["failure_time"] != t_f:
                raise CsvFormatError(path, line, f"inconsistent metadata for sequence {sid!r}")
            g["times"].append(t)
            g["currents"].append(i)
    out = []
    for sid, g in groups.items():
        T, P, lam, i0 = g["static"]
        try:
            out.append(RunToFailureSequence(
                sequence_id=sid,
                mode=g["mode"],
                conditions=OperatingConditions(T, P, lam, i0),
                times=np.array(g["times"]),
                currents=np.array(g["currents"]),
                failure_time=g["failure_time"],
            ))
        except DegradationError as exc:
            raise CsvFormatError(path, g["line"], str(exc)) from None
    return out

