"""
Run configuration: one JSON file describes the data, training, evaluation,
AEML and ablation settings of a run. The resolved config is embedded in
every report and run directory.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .aeml import DEFAULT_T, MODES
from .episodes import (
    DEFAULT_QUERIES,
    DEFAULT_SHOT,
    DEFAULT_WAY,
    SPLITS,
    SynthFamilyConfig,
    synth_family,
)
from .errors import ConfigError
from .logger import logger
from .trainer import TrainConfig

CACHE_DIR = os.environ.get("CSNET_CACHE_DIR", "data")

SOURCES = ("synth", "cache", "omniglot")

# Test protocol: 2000 episodes, fixed seed
DEFAULT_EVAL_EPISODES = 2000
DEFAULT_EVAL_SEED = 1234
DEFAULT_SHOTS = (1, 2, 5)


def _section(data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} settings must be an object, got {type(data).__name__}")
    return dict(data)


def _from_dict(cls, data, section):
    data = _section(data, section)
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {section} settings: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{section} settings: {exc}") from exc


@dataclass
class DataSource:
    kind: str = "synth"
    synth: SynthFamilyConfig = None
    path: str = None
    augment_rotations: bool = True

    def validate(self):
        if self.kind not in SOURCES:
            raise ConfigError(f"unknown data source {self.kind!r}; expected one of {SOURCES}")
        if self.kind in ("cache", "omniglot") and not self.path:
            raise ConfigError(f"data source {self.kind!r} needs a 'path'")
        if self.kind == "synth":
            (self.synth or SynthFamilyConfig()).validate()

    def to_dict(self):
        return {
            "kind": self.kind,
            "synth": None if self.synth is None else self.synth.to_dict(),
            "path": self.path,
            "augment_rotations": self.augment_rotations,
        }

    @classmethod
    def from_dict(cls, data):
        data = _section(data, "data")
        if data.get("synth") is not None:
            data["synth"] = _from_dict(SynthFamilyConfig, data["synth"], "synth")
        return _from_dict(cls, data, "data")


def load_data(source):
    """Materialize the dataset a :class:`DataSource` names."""
    source.validate()
    if source.kind == "synth":
        return synth_family(source.synth or SynthFamilyConfig())
    if source.kind == "cache":
        from .storage import load_dataset

        return load_dataset(source.path)
    from .omniglot import load_omniglot

    return load_omniglot(source.path, source.augment_rotations)


@dataclass
class EvalSettings:
    split: str = "test"
    way: int = DEFAULT_WAY
    shot: int = DEFAULT_SHOT
    queries: int = DEFAULT_QUERIES
    episodes: int = DEFAULT_EVAL_EPISODES
    seed: int = DEFAULT_EVAL_SEED
    workers: int = 4

    def validate(self):
        if self.split not in SPLITS:
            raise ConfigError(f"unknown eval split {self.split!r}")
        bad = {
            k: getattr(self, k)
            for k in ("way", "shot", "queries", "workers")
            if getattr(self, k) < 1
        }
        if bad:
            raise ConfigError(f"eval counts must be positive: {bad}")
        if self.episodes < 2:
            raise ConfigError(f"a confidence interval needs >= 2 episodes, got {self.episodes}")


@dataclass
class AemlSettings:
    t: int = DEFAULT_T
    mode: str = "prob_avg"
    recalibrate_bn: bool = False
    recalibrate_episodes: int = 50

    def validate(self):
        if self.t < 1:
            raise ConfigError(f"aeml t must be >= 1, got {self.t}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown ensemble mode {self.mode!r}; expected one of {MODES}")


@dataclass
class AblationSettings:
    shots: tuple = DEFAULT_SHOTS

    def validate(self):
        if not self.shots or any(k < 1 for k in self.shots):
            raise ConfigError(f"ablation shots must be positive, got {list(self.shots)}")


@dataclass
class RunConfig:
    train: TrainConfig
    name: str = "run"
    data: DataSource = field(default_factory=DataSource)
    eval: EvalSettings = field(default_factory=EvalSettings)
    aeml: AemlSettings = field(default_factory=AemlSettings)
    ablation: AblationSettings = field(default_factory=AblationSettings)
    output_dir: str = "runs"

    def validate(self, dataset=None):
        self.data.validate()
        self.train.validate()
        self.eval.validate()
        self.aeml.validate()
        self.ablation.validate()
        if self.eval.shot != self.train.shot and not self.train.bypass_support:
            raise ConfigError(
                f"class support is built for {self.train.shot}-shot; "
                f"eval shot {self.eval.shot} must match"
            )
        if dataset is not None:
            for split, way, shot, queries in (
                ("train", self.train.way, self.train.shot, self.train.queries),
                ("val", self.train.way, self.train.shot, self.train.queries),
                (self.eval.split, self.eval.way, self.eval.shot, self.eval.queries),
            ):
                classes = dataset.split_classes(split)
                if len(classes) < way:
                    raise ConfigError(
                        f"{split} split has {len(classes)} classes, config asks {way}-way"
                    )
                thin = min(len(c.samples) for c in classes)
                if thin < shot + queries:
                    raise ConfigError(
                        f"{split} split has a class with {thin} samples, "
                        f"config needs {shot + queries}"
                    )
        return self

    def to_dict(self):
        return {
            "name": self.name,
            "data": self.data.to_dict(),
            "train": self.train.to_dict(),
            "eval": dict(vars(self.eval)),
            "aeml": dict(vars(self.aeml)),
            "ablation": {"shots": list(self.ablation.shots)},
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data):
        data = _section(data, "run config")
        if "train" not in data:
            raise ConfigError("run config needs a 'train' section")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run config sections: {sorted(unknown)}")
        ablation = _section(data.get("ablation", {}), "ablation")
        if "shots" in ablation:
            ablation["shots"] = tuple(ablation["shots"])
        return cls(
            train=TrainConfig.from_dict(data["train"]),
            name=data.get("name", "run"),
            data=DataSource.from_dict(data.get("data", {})),
            eval=_from_dict(EvalSettings, data.get("eval", {}), "eval"),
            aeml=_from_dict(AemlSettings, data.get("aeml", {}), "aeml"),
            ablation=_from_dict(AblationSettings, ablation, "ablation"),
            output_dir=data.get("output_dir", "runs"),
        )


def load_run_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    try:
        config = RunConfig.from_dict(data).validate()
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: malformed config ({type(exc).__name__}: {exc})") from exc
    logger.info(f"run config loaded: {path} ({config.name})")
    return config


def save_run_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")
    return path
