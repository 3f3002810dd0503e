"""
Task-family datasets and the N-way K-shot episode sampler.

A :class:`Dataset` is a list of classes, each holding its samples and the
split (train/val/test) it belongs to. Splits partition classes, never
samples, so test episodes are built from classes the model never saw.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, SamplingError
from .logger import logger

SPLITS = ("train", "val", "test")

# Episode shape used for training and evaluation when a run does not set one
DEFAULT_WAY = 5
DEFAULT_SHOT = 1
DEFAULT_QUERIES = 10


@dataclass
class ClassRecord:
    global_id: int
    samples: np.ndarray
    split: str
    source: str = ""

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError(f"class {self.global_id}: unknown split {self.split!r}")


@dataclass
class Dataset:
    classes: list
    sample_shape: tuple
    name: str = ""

    def __post_init__(self):
        self.sample_shape = tuple(int(v) for v in self.sample_shape)

    def __len__(self):
        return len(self.classes)

    def split_classes(self, split):
        if split not in SPLITS:
            raise SamplingError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [c for c in self.classes if c.split == split]

    def sample_count(self):
        return sum(len(c.samples) for c in self.classes)

    def summary(self):
        counts = {}
        for split in SPLITS:
            members = self.split_classes(split)
            counts[split] = {
                "classes": len(members),
                "samples": sum(len(c.samples) for c in members),
                "min_per_class": min((len(c.samples) for c in members), default=0),
            }
        return counts

    def reshaped(self, sample_shape):
        """Same classes with every sample viewed under ``sample_shape``."""
        sample_shape = tuple(sample_shape)
        if int(np.prod(sample_shape)) != int(np.prod(self.sample_shape)):
            raise ConfigError(
                f"cannot view samples of shape {self.sample_shape} as {sample_shape}"
            )
        classes = [
            replace(c, samples=c.samples.reshape((len(c.samples),) + sample_shape))
            for c in self.classes
        ]
        return Dataset(classes, sample_shape, self.name)


@dataclass
class Episode:
    way: int
    shot: int
    queries: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    class_map: list
    seed: int = None
    support_ids: list = field(default_factory=list)
    query_ids: list = field(default_factory=list)


@dataclass
class SynthFamilyConfig:
    dim: int = 2
    center_scale: float = 3.0
    within_scale: float = 1.0
    train_classes: int = 64
    val_classes: int = 16
    test_classes: int = 20
    samples_per_class: int = 25
    seed: int = 0
    # coordinates that carry class signal; the rest is within-class noise
    center_rank: int = None

    def validate(self, max_way=None):
        if self.dim < 1 or self.samples_per_class < 1:
            raise ConfigError(
                f"synthetic family needs dim and samples_per_class >= 1, "
                f"got {self.dim} and {self.samples_per_class}"
            )
        if self.center_scale <= 0 or self.within_scale < 0:
            raise ConfigError(
                f"center_scale must be positive and within_scale non-negative, "
                f"got {self.center_scale} and {self.within_scale}"
            )
        rank = self.dim if self.center_rank is None else self.center_rank
        if not 1 <= rank <= self.dim:
            raise ConfigError(f"center_rank {rank} outside 1..{self.dim}")
        for split, count in zip(SPLITS, self.split_sizes()):
            if count < 0 or (max_way is not None and count < max_way):
                raise ConfigError(
                    f"synthetic {split} split has {count} classes, "
                    f"episodes need {max_way}"
                )

    def split_sizes(self):
        return self.train_classes, self.val_classes, self.test_classes

    def to_dict(self):
        return {
            "dim": self.dim,
            "center_scale": self.center_scale,
            "within_scale": self.within_scale,
            "train_classes": self.train_classes,
            "val_classes": self.val_classes,
            "test_classes": self.test_classes,
            "samples_per_class": self.samples_per_class,
            "seed": self.seed,
            "center_rank": self.center_rank,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def synth_family(config):
    """Isotropic Gaussian classes around centers drawn once from the seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    rank = config.dim if config.center_rank is None else config.center_rank
    classes = []
    for split, count in zip(SPLITS, config.split_sizes()):
        for _ in range(count):
            center = np.zeros(config.dim)
            center[:rank] = rng.normal(0.0, config.center_scale, rank)
            noise = rng.standard_normal((config.samples_per_class, config.dim))
            samples = center + config.within_scale * noise
            classes.append(ClassRecord(len(classes), samples, split, "synth"))
    logger.info(
        f"synthetic family: {len(classes)} classes "
        f"({config.train_classes}/{config.val_classes}/{config.test_classes}), "
        f"{config.samples_per_class} samples each, dim {config.dim}"
    )
    return Dataset(classes, (config.dim,), f"synth-{config.seed}")


def rotate_class(record, quarter_turns, global_id=None):
    """Copy of ``record`` with every sample rotated by 90° × ``quarter_turns``."""
    samples = np.rot90(record.samples, k=quarter_turns, axes=(-2, -1)).copy()
    return ClassRecord(
        record.global_id if global_id is None else global_id,
        samples,
        record.split,
        f"{record.source}@{90 * (quarter_turns % 4)}",
    )


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def check_split(ds, split, way, per_class):
    """Raise SamplingError unless ``split`` can supply ``way`` classes."""
    classes = ds.split_classes(split)
    if len(classes) < way:
        raise SamplingError(
            f"split {split!r} has {len(classes)} classes, episode needs {way}"
        )
    short = [c.global_id for c in classes if len(c.samples) < per_class]
    if short:
        raise SamplingError(
            f"split {split!r}: {len(short)} classes have fewer than {per_class} "
            f"samples (e.g. class {short[0]})"
        )
    return classes


def sample_episode(ds, split, N, K, Q, rng):
    if N < 1 or K < 1 or Q < 1:
        raise ContractError(f"episode needs N, K, Q >= 1, got N={N}, K={K}, Q={Q}")
    rng, seed = _as_rng(rng)
    classes = ds.split_classes(split)
    if len(classes) < N:
        raise SamplingError(
            f"split {split!r} has {len(classes)} classes, episode needs {N}"
        )
    picked = rng.choice(len(classes), size=N, replace=False)
    support, query, support_ids, query_ids, class_map = [], [], [], [], []
    for local, index in enumerate(picked):
        record = classes[index]
        available = len(record.samples)
        if available < K + Q:
            raise SamplingError(
                f"class {record.global_id} has {available} samples, "
                f"episode needs {K + Q} (K={K} + Q={Q})"
            )
        draw = rng.choice(available, size=K + Q, replace=False)
        support.append(record.samples[draw[:K]])
        query.append(record.samples[draw[K:]])
        support_ids.extend((record.global_id, int(s)) for s in draw[:K])
        query_ids.extend((record.global_id, int(s)) for s in draw[K:])
        class_map.append(record.global_id)
    return Episode(
        way=N,
        shot=K,
        queries=Q,
        support_x=np.concatenate(support),
        support_y=np.repeat(np.arange(N), K),
        query_x=np.concatenate(query),
        query_y=np.repeat(np.arange(N), Q),
        class_map=class_map,
        seed=seed,
        support_ids=support_ids,
        query_ids=query_ids,
    )


def episode_batch(ds, split, N, K, Q, count, rng):
    rng, _ = _as_rng(rng)
    return [sample_episode(ds, split, N, K, Q, rng) for _ in range(count)]
