"""Run configuration: a flat ``key = value`` text file.

Lines starting with ``#`` are comments. Every key is optional; see
``DEFAULTS`` for the full schema. Relative paths are resolved against the
``--out`` directory given on the command line (default: current directory).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .models import DEFAULT_TAU_FRACTION, TrainConfig
from .preprocess import SgFilterSpec

DEFAULTS: dict[str, str] = {
    "seed": "42",
    "count_normal": "200",
    "count_sudden": "200",
    "count_gradual": "200",
    "sg_window": "11",
    "sg_order": "3",
    "tau_fraction": str(DEFAULT_TAU_FRACTION),
    "split": "0.8",
    "detector.epochs": "30",
    "detector.batch_size": "32",
    "detector.learning_rate": "0.001",
    "rul_sudden.epochs": "50",
    "rul_sudden.batch_size": "32",
    "rul_sudden.learning_rate": "0.001",
    "rul_gradual.epochs": "50",
    "rul_gradual.batch_size": "32",
    "rul_gradual.learning_rate": "0.001",
    "data_dir": "data",
    "model_dir": "models",
    "report_dir": "reports",
}

_SECTION = "run"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int
    counts: tuple[int, int, int]  # normal, sudden, gradual
    sg_spec: SgFilterSpec
    tau_fraction: float
    detector: TrainConfig
    rul_sudden: TrainConfig
    rul_gradual: TrainConfig
    data_dir: Path
    model_dir: Path
    report_dir: Path
    raw: tuple[tuple[str, str], ...] = ()

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        lines += [f"{k} = {v}" for k, v in self.raw]
        return "\n".join(lines) + "\n"

    def write_resolved(self, directory) -> Path:
        path = Path(directory) / "resolved_config.txt"
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def _parse_text(text: str, source: str) -> dict[str, str]:
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = dict(parser[_SECTION])
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
    return values


def load_config(path=None, seed: int | None = None, out_dir=None) -> RunConfig:
    values = dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(_parse_text(text, str(path)))
    if seed is not None:
        values["seed"] = str(seed)
    return build_config(values, out_dir)


def build_config(values: dict[str, str], out_dir=None) -> RunConfig:
    base = Path(out_dir) if out_dir is not None else Path(".")

    def get(key, conv):
        try:
            return conv(values[key])
        except ValueError:
            raise ConfigError(f"bad value for {key}: {values[key]!r}") from None

    seed = get("seed", int)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    counts = tuple(get(f"count_{m}", int) for m in ("normal", "sudden", "gradual"))
    if any(c < 0 for c in counts):
        raise ConfigError("counts must be >= 0")
    split = get("split", float)

    def train_cfg(prefix):
        try:
            return TrainConfig(
                epochs=get(f"{prefix}.epochs", int),
                batch_size=get(f"{prefix}.batch_size", int),
                learning_rate=get(f"{prefix}.learning_rate", float),
                seed=seed,
                split=split,
            )
        except ValueError as exc:
            raise ConfigError(f"{prefix}: {exc}") from None

    try:
        sg = SgFilterSpec(get("sg_window", int), get("sg_order", int))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    tau = get("tau_fraction", float)
    if not 0 < tau < 1:
        raise ConfigError("tau_fraction must lie in (0, 1)")
    dirs = [base / values[k] for k in ("data_dir", "model_dir", "report_dir")]
    if len({d.resolve() for d in dirs}) != 3:
        raise ConfigError("data_dir, model_dir and report_dir must be distinct")
    return RunConfig(
        seed=seed,
        counts=counts,
        sg_spec=sg,
        tau_fraction=tau,
        detector=train_cfg("detector"),
        rul_sudden=train_cfg("rul_sudden"),
        rul_gradual=train_cfg("rul_gradual"),
        data_dir=dirs[0],
        model_dir=dirs[1],
        report_dir=dirs[2],
        raw=tuple((k, values[k]) for k in DEFAULTS),
    )
