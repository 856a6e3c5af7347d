"""Declarative run configuration and run records."""
from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from thor.anomaly_maps import MorphConfig
from thor.data import DatasetConfig
from thor.denoiser import DenoiserConfig, TrainConfig
from thor.errors import ConfigError
from thor.evaluation import DetectionRule
from thor.noise import NoiseSpec
from thor.restoration import HarmonizationPlan, default_steps, default_t_start
from thor.schedules import NoiseSchedule, make_linear_schedule


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02

    def build(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_min, self.beta_max)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 0
    time_budget: float | None = None


@dataclass(frozen=True)
class RestoreConfig:
    """``t_start = None`` means the noise-kind default scaled to ``T``."""

    t_start: int | None = None
    n_steps: int = 3
    steps: tuple[int, ...] | None = None
    morph: MorphConfig = field(default_factory=MorphConfig)
    stochastic_reverse: bool = False


@dataclass(frozen=True)
class EvalConfig:
    method: str = "thor"
    seed: int = 0
    n_thresholds: int = 256
    per_image: bool = False
    min_component_area: int = 4
    overlap_fraction: float = 0.25


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    restore: RestoreConfig = field(default_factory=RestoreConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.seed, self.noise.with_seed(t.seed))

    def plan(self, noise_kind: str | None = None) -> HarmonizationPlan:
        r = self.restore
        t_start = r.t_start if r.t_start is not None else default_t_start(noise_kind or self.noise.kind, self.schedule.T)
        steps = r.steps if r.steps is not None else default_steps(t_start, r.n_steps)
        return HarmonizationPlan(t_start, tuple(steps), r.morph, r.stochastic_reverse)

    def detection_rule(self) -> DetectionRule:
        return DetectionRule(self.eval.min_component_area, self.eval.overlap_fraction)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        r = dict(d.get("restore", {}))
        if "morph" in r:
            r["morph"] = MorphConfig(**r["morph"])
        if r.get("steps") is not None:
            r["steps"] = tuple(r["steps"])
        try:
            return cls(
                dataset=DatasetConfig.from_dict(d.get("dataset", {})),
                schedule=ScheduleConfig(**d.get("schedule", {})),
                noise=NoiseSpec.from_dict(d["noise"]) if "noise" in d else NoiseSpec(),
                denoiser=DenoiserConfig(**d.get("denoiser", {})),
                training=TrainingConfig(**d.get("training", {})),
                restore=RestoreConfig(**r),
                eval=EvalConfig(**d.get("eval", {})),
            )
        except TypeError as exc:
            raise ConfigError(f"bad run config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def override(self, section: str, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        return replace(self, **{section: replace(getattr(self, section), **kw)})


def versions() -> dict:
    import numpy
    import scipy
    import torch

    from thor import __version__

    return {"thor": __version__, "python": sys.version.split()[0], "numpy": numpy.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__, "platform": platform.platform()}


def write_run_record(out_dir: str | Path, command: str, cfg: RunConfig, seeds: dict, wall_time: float,
                     **extra) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seeds": seeds,
              "versions": versions(), "wall_time_seconds": wall_time, **extra}
    path = out / f"run_{command}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str))
    return path
