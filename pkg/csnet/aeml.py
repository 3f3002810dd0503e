"""
Approximate ensembles of meta-learners.

One training trajectory leaves a series of validated checkpoints. AEML keeps
the ``t`` best of them and averages their parameters into a single model;
:func:`ensemble_predict` is the expensive alternative that runs all ``t``
models and combines their predictions, and :func:`compare_aeml_ensemble`
measures both against the best single checkpoint on one episode set.
"""

import json
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .episodes import episode_batch
from .errors import ContractError, SelectionError
from .logger import logger
from .model import as_predictor, episode_accuracies
from .tensor import RunningStats
from .trainer import AdamState, Checkpoint

DEFAULT_T = 5
MODES = ("prob_avg", "majority_vote")

COMPARISON_FIELDS = [
    "t",
    "mode",
    "acc_single",
    "acc_aeml",
    "acc_ensemble",
    "delta_aeml",
    "delta_ensemble",
    "episodes",
    "seed",
]


@dataclass
class AemlSelection:
    t: int
    ids: list
    accuracies: list
    log: object = field(default=None, repr=False)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ContractError(f"selection repeats checkpoints: {self.ids}")
        if any(a < b for a, b in zip(self.accuracies, self.accuracies[1:])):
            raise ContractError(f"selection accuracies not sorted: {self.accuracies}")


def select_top_t(log, store, t=DEFAULT_T):
    """The ``t`` best validated checkpoints, later episodes first on ties."""
    if t < 1:
        raise SelectionError(f"t must be >= 1, got {t}")
    ids = store.ids() if log is None else [i for i in log.checkpoint_ids() if i in store]
    entries = {e["id"]: e for e in store.entries()}
    scored = [entries[i] for i in ids if entries[i]["val_acc"] is not None]
    if len(scored) < t:
        raise SelectionError(
            f"need {t} checkpoints with validation accuracy, found {len(scored)}"
        )
    scored.sort(key=lambda e: (-e["val_acc"], -e["episode"]))
    chosen = scored[:t]
    return AemlSelection(t, [e["id"] for e in chosen], [e["val_acc"] for e in chosen], log)


def average_tensors(members):
    """Elementwise mean of same-keyed, same-shaped tensor dicts, summed in order."""
    if not members:
        raise ContractError("nothing to average")
    keys = list(members[0])
    for i, member in enumerate(members[1:], start=1):
        if list(member) != keys:
            raise ContractError(f"member {i} has different tensors than member 0")
        for k in keys:
            if np.shape(member[k]) != np.shape(members[0][k]):
                raise ContractError(
                    f"member {i}: {k!r} has shape {np.shape(member[k])}, "
                    f"expected {np.shape(members[0][k])}"
                )
    if len(members) == 1:
        return {k: np.array(v, copy=True) for k, v in members[0].items()}
    out = {}
    for k in keys:
        total = np.array(members[0][k], dtype=np.float64, copy=True)
        for member in members[1:]:
            total += member[k]
        out[k] = total / len(members)
    return out


def average_models(models):
    """Mean of parameters and batch-norm running statistics of ``models``."""
    signature = models[0].signature()
    for i, m in enumerate(models[1:], start=1):
        if m.signature() != signature:
            raise ContractError(f"checkpoint {i} has a different architecture than checkpoint 0")
    if len(models) == 1:
        return models[0].copy()
    params = average_tensors([m.trainable() for m in models])
    stats_sets = [m.bn_stats() for m in models]
    stats = {}
    for key in stats_sets[0]:
        layer = [s[key] for s in stats_sets]
        if not all(s.initialized for s in layer):
            stats[key] = RunningStats()
            continue
        mean = average_tensors([{"v": s.mean} for s in layer])["v"]
        var = average_tensors([{"v": s.var} for s in layer])["v"]
        stats[key] = RunningStats(mean, var, max(s.batches for s in layer))
    return models[0].with_trainable(params).with_stats(stats)


def _members(selection, store):
    # canonical order makes the average independent of selection order
    return [store.get(i).model for i in sorted(selection.ids)]


def average_params(selection, store):
    return average_models(_members(selection, store))


def write_averaged_checkpoint(selection, store, ckpt_id=None):
    """Store the averaged model as a checkpoint (no validation accuracy)."""
    members = [store.get(i) for i in selection.ids]
    model = average_params(selection, store)
    ckpt = Checkpoint(
        ckpt_id or f"aeml_t{selection.t}",
        model,
        AdamState.fresh(model.trainable()),
        max(c.episode for c in members),
        None,
    )
    store.add(ckpt)
    logger.info(f"averaged {selection.t} checkpoints {selection.ids} -> {ckpt.id}")
    return ckpt


def ensemble_outputs(outputs, mode="prob_avg"):
    """Combine per-member ``[M, N]`` distributions into one ``[M, N]``."""
    if mode not in MODES:
        raise ContractError(f"ensemble mode must be one of {MODES}, got {mode!r}")
    if not outputs:
        raise ContractError("ensemble needs at least one member")
    stacked = np.stack([np.asarray(o, dtype=np.float64) for o in outputs])
    avg = average_tensors([{"p": o} for o in stacked])["p"]
    if mode == "prob_avg":
        return avg
    votes = stacked.argmax(axis=-1)
    M, N = avg.shape
    counts = np.zeros((M, N), dtype=np.int64)
    for member_votes in votes:
        counts[np.arange(M), member_votes] += 1
    modal = counts == counts.max(axis=1, keepdims=True)
    # among tied classes the averaged probability decides, then lowest index
    winner = np.where(modal, avg, -np.inf).argmax(axis=1)
    return np.eye(N)[winner]


def ensemble_predict(
    selection,
    store,
    episode,
    mode="prob_avg",
    sign="negative",
    head="competitive",
    precision="float32",
    workers=4,
):
    members = [as_predictor(m, sign, head, precision) for m in _members(selection, store)]
    if workers > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda predict: predict(episode), members))
    else:
        outputs = [predict(episode) for predict in members]
    return ensemble_outputs(outputs, mode)


@dataclass
class ComparisonReport:
    t: int
    mode: str
    acc_single: float
    acc_aeml: float
    acc_ensemble: float
    delta_aeml: float
    delta_ensemble: float
    episodes: int
    seed: int

    def to_dict(self):
        return {k: getattr(self, k) for k in COMPARISON_FIELDS}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def csv_row(self):
        return ",".join(str(getattr(self, k)) for k in COMPARISON_FIELDS)


def compare_aeml_ensemble(
    selection,
    store,
    dataset,
    split,
    settings,
    mode="prob_avg",
    sign="negative",
    head="competitive",
    precision="float32",
):
    """Best single checkpoint vs AEML average vs prediction ensemble."""
    episodes = episode_batch(
        dataset, split, settings.way, settings.shot, settings.queries,
        settings.episodes, np.random.default_rng(settings.seed),
    )
    single = store.get(selection.ids[0]).model
    averaged = average_params(selection, store)

    def ensemble(episode):
        return ensemble_predict(selection, store, episode, mode, sign, head, precision, 1)

    def accuracy(model):
        predictor = as_predictor(model, sign, head, precision)
        return float(np.mean(episode_accuracies(predictor, episodes, settings.workers)))

    acc_single = accuracy(single)
    acc_aeml = accuracy(averaged)
    acc_ensemble = accuracy(ensemble)
    report = ComparisonReport(
        selection.t,
        mode,
        acc_single,
        acc_aeml,
        acc_ensemble,
        acc_aeml - acc_single,
        acc_ensemble - acc_single,
        settings.episodes,
        settings.seed,
    )
    logger.info(
        f"t={selection.t} ({mode}): single {acc_single:.4f}, "
        f"aeml {acc_aeml:.4f}, ensemble {acc_ensemble:.4f}"
    )
    return report
