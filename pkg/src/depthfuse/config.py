"""Flat ``key = value`` run configuration with command-line overrides.

Precedence, lowest first: built-in desk-scale defaults, paper-scale values (when
``paper_scale`` is on), the config file, then command-line flags.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .fusenet import FuseNetConfig
from .objective import LossConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    dataset: str = ""
    synthetic: bool = False
    synthetic_frames: int = 50
    val_frames: int = 4
    synth_height: int = 64
    synth_width: int = 192
    synth_boxes: int = 4
    synth_lines: int = 16
    synth_noise: float = 0.0
    crop_height: int = 0
    crop_width: int = 0
    # model
    C: int = 16
    N: int = 3
    K: int = 9
    sample_n: int = 10_000
    gamma: float = 1.0
    branches: str = "s1,s2,cont"
    # schedule: l2 phase, then l2 + gamma * smooth-l1 fine-tuning
    epochs_l2: int = 100
    epochs_combined: int = 50
    base_lr: float = 0.0016
    milestones: str = "65,80,85,90"
    finetune_lr: float = 0.00016
    finetune_milestones: str = "30"
    decay: float = 0.1
    batch_size: int = 1
    optimizer: str = "adam"
    stop_after: int = 0
    # run
    seed: int = 0
    out: str = "runs/latest"
    checkpoint: str = ""
    resume: str = ""
    paper_scale: bool = False
    viz: bool = False
    viz_max_depth: float = 80.0
    gradcheck_seeds: int = 20
    bench_points: int = 10_000
    bench_queries: int = 1000
    bench_repeats: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("synthetic_frames", "synth_height", "synth_width", "synth_lines", "batch_size",
                     "gradcheck_seeds", "bench_points", "bench_queries", "bench_repeats"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("val_frames", "epochs_l2", "epochs_combined", "stop_after", "crop_height",
                     "crop_width", "synth_boxes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.base_lr <= 0 or self.finetune_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        self.milestone_list()
        self.finetune_milestone_list()
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @staticmethod
    def _ints(text: str, name: str) -> list[int]:
        try:
            values = [int(v) for v in text.replace(" ", "").split(",") if v]
        except ValueError:
            raise ConfigError(f"{name} must be a comma-separated list of integers, got {text!r}") from None
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"{name} must be strictly increasing, got {text!r}")
        return values

    def milestone_list(self) -> list[int]:
        return self._ints(self.milestones, "milestones")

    def finetune_milestone_list(self) -> list[int]:
        return self._ints(self.finetune_milestones, "finetune_milestones")

    def model_config(self) -> FuseNetConfig:
        branches = tuple(b.strip() for b in self.branches.split(",") if b.strip())
        return FuseNetConfig(C=self.C, N=self.N, K=self.K, sample_n=self.sample_n, gamma=self.gamma,
                             branches=branches, seed=self.seed)

    def loss_config(self, phase: str) -> LossConfig:
        return LossConfig("L2" if phase == "l2" else "Combined", self.gamma)

    def to_text(self) -> str:
        lines = ["# depthfuse resolved run configuration"]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


PAPER_SCALE = {
    "C": 64,
    "N": 12,
    "crop_height": 352,
    "crop_width": 1216,
    "batch_size": 32,
}

FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(name: str, raw):
    if name not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    kind = FIELD_TYPES[name]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = coerce(key, value)
    return values


def load_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_text(path.read_text(), str(path))


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    explicit = dict(file_values or {})
    explicit.update({k: coerce(k, v) for k, v in (overrides or {}).items()})
    base = {}
    if explicit.get("paper_scale", False):
        base.update(PAPER_SCALE)
    base.update(explicit)
    try:
        return RunConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
