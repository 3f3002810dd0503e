"""
End-to-end episodic training of the embedding and class support networks.

Each step samples a batch of episodes, averages their query NLL in one
graph, differentiates it and applies a bias-corrected Adam update whose
learning rate halves every ``lr_halving`` episodes. Every ``val_every``
episodes the model is scored on a fixed set of validation episodes and
snapshotted into a :class:`CheckpointStore`; those snapshots are what
:mod:`csnet.aeml` later selects from and averages.
"""

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .attention import HEADS, SIGNS
from .episodes import (
    DEFAULT_QUERIES,
    DEFAULT_SHOT,
    DEFAULT_WAY,
    check_split,
    episode_batch,
)
from .errors import ConfigError, ContractError, DimensionError, SamplingError, StateError
from .logger import logger
from .model import (
    ModelParams,
    as_predictor,
    batch_loss,
    build_model,
    episode_accuracies,
    episode_probs,
)
from .networks import (
    DEFAULT_SUPPORT_WIDTH,
    ArchSpec,
    ClassSupportParams,
    EmbeddingParams,
)
from .storage import read_tensors, write_tensors
from .tensor import PRECISIONS, RunningStats, backward

DEFAULT_LR = 1e-3
DEFAULT_LR_HALVING = 50_000
DEFAULT_TOTAL_EPISODES = 20_000
DEFAULT_VAL_EVERY = 500
DEFAULT_VAL_EPISODES = 200

LOG_COLUMNS = ["episode", "loss", "lr", "val_acc", "checkpoint_id"]


@dataclass
class TrainConfig:
    arch: ArchSpec
    way: int = DEFAULT_WAY
    shot: int = DEFAULT_SHOT
    queries: int = DEFAULT_QUERIES
    episodes_per_batch: int = 1
    total_episodes: int = DEFAULT_TOTAL_EPISODES
    lr: float = DEFAULT_LR
    lr_halving: int = DEFAULT_LR_HALVING
    val_every: int = DEFAULT_VAL_EVERY
    val_episodes: int = DEFAULT_VAL_EPISODES
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "float32"
    attention_sign: str = "negative"
    bypass_support: bool = False
    head: str = "competitive"
    support_width: int = DEFAULT_SUPPORT_WIDTH
    workers: int = 4

    def validate(self):
        counts = {
            "way": self.way,
            "shot": self.shot,
            "queries": self.queries,
            "episodes_per_batch": self.episodes_per_batch,
            "lr_halving": self.lr_halving,
            "val_every": self.val_every,
            "val_episodes": self.val_episodes,
            "support_width": self.support_width,
            "workers": self.workers,
        }
        bad = {k: v for k, v in counts.items() if v < 1}
        if bad:
            raise ConfigError(f"counts must be positive: {bad}")
        if self.total_episodes < 0:
            raise ConfigError(f"total_episodes must be >= 0, got {self.total_episodes}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError(f"lr and eps must be positive, got {self.lr}, {self.eps}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.attention_sign not in SIGNS:
            raise ConfigError(f"unknown attention sign {self.attention_sign!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}; expected one of {sorted(HEADS)}")
        build_model(self.arch, self.shot, self.support_width, self.seed, True)

    def to_dict(self):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data["arch"] = self.arch.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError(f"train settings must be an object, got {type(data).__name__}")
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        if "arch" not in data:
            raise ConfigError("train settings need an 'arch' entry")
        data["arch"] = ArchSpec.from_dict(data["arch"])
        return cls(**data)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def fresh(cls, params):
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            0,
        )

    def copy(self):
        return AdamState(
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.t,
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new params and a new state."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise ContractError(f"no gradient for parameters: {missing}")
    t = state.t + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
        m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        denom = np.sqrt(v[k] / bc2) + eps
        new_params[k] = p - (lr / bc1) * m[k] / denom
    return new_params, AdamState(m, v, t)


def lr_at(counter, config):
    if counter < 0:
        raise ContractError(f"episode counter must be >= 0, got {counter}")
    return config.lr * 0.5 ** (counter // config.lr_halving)


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_id(episode):
    return f"ckpt_{episode:07d}"


@dataclass
class Checkpoint:
    id: str
    model: ModelParams
    adam: AdamState
    episode: int
    val_acc: float = None
    stamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.val_acc is not None and not 0.0 <= self.val_acc <= 1.0:
            raise ContractError(f"checkpoint {self.id}: val_acc {self.val_acc} outside [0, 1]")

    def index_entry(self):
        return {"id": self.id, "episode": self.episode, "val_acc": self.val_acc}


def checkpoint_tensors(ckpt):
    """Flat named-tensor view of a checkpoint plus its JSON metadata."""
    model = ckpt.model
    tensors = {f"param/{k}": v for k, v in model.trainable().items()}
    batches = {}
    for k, stats in model.bn_stats().items():
        if stats.initialized:
            tensors[f"bn/{k}/mean"] = stats.mean
            tensors[f"bn/{k}/var"] = stats.var
        batches[k] = stats.batches
    for k in ckpt.adam.m:
        tensors[f"adam/m/{k}"] = ckpt.adam.m[k]
        tensors[f"adam/v/{k}"] = ckpt.adam.v[k]
    cs = model.class_support
    meta = {
        "id": ckpt.id,
        "episode": ckpt.episode,
        "val_acc": ckpt.val_acc,
        "stamp": ckpt.stamp,
        "arch": model.embedding.arch.to_dict(),
        "embedding_seed": model.embedding.seed,
        "support": None if cs is None else {"K": cs.K, "D": cs.D, "m": cs.m, "seed": cs.seed},
        "adam_t": ckpt.adam.t,
        "bn_batches": batches,
    }
    return tensors, meta


def checkpoint_from_tensors(tensors, meta):
    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    params = group("param/")
    stats = {}
    for key, batches in meta["bn_batches"].items():
        mean, var = tensors.get(f"bn/{key}/mean"), tensors.get(f"bn/{key}/var")
        stats[key] = RunningStats(mean, var, batches)

    def section(prefix):
        return (
            {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)},
            {k[len(prefix):]: v for k, v in stats.items() if k.startswith(prefix)},
        )

    emb_tensors, emb_stats = section("embedding/")
    embedding = EmbeddingParams(
        ArchSpec.from_dict(meta["arch"]), meta["embedding_seed"], emb_tensors, emb_stats
    )
    support = None
    if meta["support"] is not None:
        s = meta["support"]
        sup_tensors, sup_stats = section("support/")
        support = ClassSupportParams(s["K"], s["D"], s["m"], s["seed"], sup_tensors, sup_stats)
    adam = AdamState(group("adam/m/"), group("adam/v/"), meta["adam_t"])
    return Checkpoint(
        meta["id"], ModelParams(embedding, support), adam, meta["episode"],
        meta["val_acc"], meta["stamp"],
    )


def save_checkpoint(ckpt, path):
    tensors, meta = checkpoint_tensors(ckpt)
    return write_tensors(path, tensors, meta)


def load_checkpoint(path):
    return checkpoint_from_tensors(*read_tensors(path))


class CheckpointStore:
    """Checkpoints by id, kept in memory and, with a ``root``, on disk.

    A directory store holds one ``<id>.csnt`` file per checkpoint and an
    ``index.json`` manifest listing id, episode and validation accuracy.
    """

    INDEX = "index.json"

    def __init__(self, root=None):
        self.root = None if root is None else Path(root)
        self._items = {}
        self._index = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @classmethod
    def open(cls, root):
        root = Path(root)
        index = root / cls.INDEX
        if not index.exists():
            raise StateError(f"no checkpoint index at {index}")
        store = cls(root)
        for entry in json.loads(index.read_text(encoding="utf-8")):
            store._index[entry["id"]] = entry
        return store

    def __len__(self):
        return len(self._index)

    def __contains__(self, ckpt_id):
        return ckpt_id in self._index

    def ids(self):
        return list(self._index)

    def entries(self):
        return list(self._index.values())

    def add(self, ckpt):
        self._items[ckpt.id] = ckpt
        self._index[ckpt.id] = ckpt.index_entry()
        if self.root is not None:
            save_checkpoint(ckpt, self.root / f"{ckpt.id}.csnt")
            (self.root / self.INDEX).write_text(
                json.dumps(self.entries(), indent=2), encoding="utf-8"
            )
            logger.info(f"checkpoint written: {self.root / ckpt.id}.csnt")
        return ckpt

    def get(self, ckpt_id):
        if ckpt_id not in self._index:
            raise StateError(f"checkpoint {ckpt_id!r} not in store ({len(self)} held)")
        if ckpt_id not in self._items:
            self._items[ckpt_id] = load_checkpoint(self.root / f"{ckpt_id}.csnt")
        return self._items[ckpt_id]

    def best(self):
        scored = [e for e in self.entries() if e["val_acc"] is not None]
        if not scored:
            raise StateError("store holds no validated checkpoint")
        return max(scored, key=lambda e: (e["val_acc"], e["episode"]))["id"]


# --------------------------------------------------------------------------
# training log


@dataclass
class LogRecord:
    episode: int
    loss: float = None
    lr: float = None
    val_acc: float = None
    checkpoint_id: str = None


class TrainingLog:
    def __init__(self, records=None):
        self.records = []
        for record in records or ():
            self.append(record)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, TrainingLog) and self.records == other.records

    def append(self, record):
        if self.records and record.episode <= self.records[-1].episode:
            raise ContractError(
                f"log counters must increase: {record.episode} after "
                f"{self.records[-1].episode}"
            )
        self.records.append(record)

    def mark_checkpoint(self, episode, val_acc, ckpt_id):
        """Attach a validation result to the record at ``episode``."""
        if self.records and self.records[-1].episode == episode:
            self.records[-1].val_acc = val_acc
            self.records[-1].checkpoint_id = ckpt_id
        else:
            self.append(LogRecord(episode, val_acc=val_acc, checkpoint_id=ckpt_id))

    def checkpoint_ids(self):
        return [r.checkpoint_id for r in self.records if r.checkpoint_id]

    def to_frame(self):
        return pd.DataFrame(
            [[getattr(r, c) for c in LOG_COLUMNS] for r in self.records],
            columns=LOG_COLUMNS,
        )

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path, dtype={"checkpoint_id": "string"})

        def cell(value, cast):
            return None if pd.isna(value) else cast(value)

        return cls(
            LogRecord(
                int(row.episode),
                cell(row.loss, float),
                cell(row.lr, float),
                cell(row.val_acc, float),
                cell(row.checkpoint_id, str),
            )
            for row in df.itertuples(index=False)
        )


# --------------------------------------------------------------------------
# loops


def validate(
    model,
    dataset,
    split,
    N,
    K,
    Q,
    episodes,
    seed,
    sign="negative",
    head="competitive",
    precision="float32",
    workers=4,
):
    """Fraction of correctly classified queries over a seeded episode set."""
    batch = episode_batch(dataset, split, N, K, Q, episodes, np.random.default_rng(seed))
    accs = episode_accuracies(as_predictor(model, sign, head, precision), batch, workers)
    # every episode has N·Q queries, so the mean of means is the pooled fraction
    return float(np.mean(accs)) if accs else 0.0


def _snapshot(model, adam, episode, val_acc):
    return Checkpoint(checkpoint_id(episode), model.copy(), adam.copy(), episode, val_acc)


def train(config, dataset, store=None, log_every=100):
    """Run the episodic training loop; returns ``(TrainingLog, CheckpointStore)``."""
    config.validate()
    per_class = config.shot + config.queries
    check_split(dataset, "train", config.way, per_class)
    check_split(dataset, "val", config.way, per_class)

    model = build_model(
        config.arch, config.shot, config.support_width, config.seed, config.bypass_support
    )
    adam = AdamState.fresh(model.trainable())
    rng = np.random.default_rng(config.seed)
    val_seed = config.seed + 1
    log = TrainingLog()
    store = CheckpointStore() if store is None else store

    def checkpoint(counter):
        acc = validate(
            model, dataset, "val", config.way, config.shot, config.queries,
            config.val_episodes, val_seed, config.attention_sign, config.head,
            config.precision, config.workers,
        )
        ckpt = store.add(_snapshot(model, adam, counter, acc))
        log.mark_checkpoint(counter, acc, ckpt.id)
        logger.info(f"episode {counter}: validation accuracy {acc:.4f} -> {ckpt.id}")

    logger.info(
        f"training {config.arch.kind} {config.way}-way {config.shot}-shot "
        f"for {config.total_episodes} episodes (seed {config.seed}, "
        f"{'no class support' if config.bypass_support else 'class support'})"
    )
    checkpoint(0)
    counter, next_val, next_log = 0, config.val_every, log_every
    while counter < config.total_episodes:
        size = min(config.episodes_per_batch, config.total_episodes - counter)
        try:
            episodes = episode_batch(
                dataset, "train", config.way, config.shot, config.queries, size, rng
            )
            loss, graph = batch_loss(
                model, episodes, config.precision, config.attention_sign, config.head
            )
        except (SamplingError, DimensionError) as exc:
            logger.error(f"episode {counter}: {exc}")
            raise type(exc)(f"episode {counter}: {exc}") from exc
        grads = backward(loss).named(graph)
        lr = lr_at(counter, config)
        params, adam = adam_step(
            model.trainable(), grads, adam, lr, config.beta1, config.beta2, config.eps
        )
        model = model.with_trainable(params)
        counter += size
        value = loss.item()
        if not math.isfinite(value):
            raise StateError(f"episode {counter}: training loss is {value}")
        log.append(LogRecord(counter, value, lr))
        if counter >= next_log:
            logger.info(f"episode {counter}/{config.total_episodes}: loss {value:.4f}, lr {lr:.2e}")
            next_log += log_every
        if counter >= next_val or counter == config.total_episodes:
            checkpoint(counter)
            next_val += config.val_every
    return log, store


def recalibrate_bn(
    model,
    dataset,
    split="train",
    N=DEFAULT_WAY,
    K=DEFAULT_SHOT,
    Q=DEFAULT_QUERIES,
    episodes=50,
    seed=0,
    precision="float32",
):
    """Copy of ``model`` whose batch-norm statistics are recomputed from data."""
    fresh = model.with_stats({k: RunningStats() for k in model.bn_stats()})
    for episode in episode_batch(dataset, split, N, K, Q, episodes, np.random.default_rng(seed)):
        episode_probs(fresh, episode, "train", precision=precision)
    logger.info(f"batch-norm statistics recomputed over {episodes} {split} episodes")
    return fresh


def with_overrides(config, **overrides):
    """Copy of a config record with every override that is not None applied."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
