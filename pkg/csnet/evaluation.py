"""
Episode-set evaluation, confidence intervals, baselines and the ablation grid.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .aeml import average_params, select_top_t
from .config import load_data
from .episodes import sample_episode
from .errors import CsnError, StatisticsError
from .logger import logger
from .model import as_predictor, episode_accuracies
from .trainer import recalibrate_bn, train

SCHEMA = "csnet.eval/1"
RAW_COLUMNS = ["episode_idx", "accuracy"]


def ci95(accs):
    """Half-width of the normal-approximation 95% interval of the mean."""
    accs = np.asarray(accs, dtype=np.float64)
    if accs.size < 2:
        raise StatisticsError(f"a confidence interval needs >= 2 values, got {accs.size}")
    return float(1.96 * accs.std(ddof=1) / np.sqrt(accs.size))


@dataclass
class EvalReport:
    accuracies: list
    way: int
    shot: int
    queries: int
    seed: int
    split: str = "test"
    provenance: str = ""
    bypass_support: bool = False
    attention_sign: str = "negative"
    head: str = "competitive"
    resolved_config: dict = field(default=None, repr=False)
    mean: float = None
    ci95: float = None
    schema: str = SCHEMA

    def __post_init__(self):
        self.accuracies = [float(a) for a in self.accuracies]
        if self.mean is None:
            self.mean = float(np.mean(self.accuracies))
        if self.ci95 is None:
            self.ci95 = ci95(self.accuracies)

    @property
    def episodes(self):
        return len(self.accuracies)

    def to_dict(self):
        return {
            "schema": self.schema,
            "provenance": self.provenance,
            "split": self.split,
            "way": self.way,
            "shot": self.shot,
            "queries": self.queries,
            "episodes": self.episodes,
            "seed": self.seed,
            "bypass_support": self.bypass_support,
            "attention_sign": self.attention_sign,
            "head": self.head,
            "mean": self.mean,
            "ci95": self.ci95,
            "accuracies": self.accuracies,
            "resolved_config": self.resolved_config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("schema") != SCHEMA:
            raise StatisticsError(f"unsupported report schema {data.get('schema')!r}")
        episodes = data.pop("episodes")
        if episodes != len(data["accuracies"]):
            raise StatisticsError(
                f"report lists {len(data['accuracies'])} accuracies for {episodes} episodes"
            )
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_frame(self):
        return pd.DataFrame(
            {"episode_idx": range(self.episodes), "accuracy": self.accuracies},
            columns=RAW_COLUMNS,
        )

    def summary_row(self):
        return {
            "provenance": self.provenance,
            "split": self.split,
            "way": self.way,
            "shot": self.shot,
            "episodes": self.episodes,
            "class_support": not self.bypass_support,
            "head": self.head,
            "sign": self.attention_sign,
            "mean": self.mean,
            "ci95": self.ci95,
        }


def _episodes(dataset, split, N, K, Q, episodes, seed):
    rng = np.random.default_rng(seed)
    batch = []
    for index in range(episodes):
        try:
            batch.append(sample_episode(dataset, split, N, K, Q, rng))
        except CsnError as exc:
            raise type(exc)(f"evaluation episode {index}: {exc}") from exc
    return batch


def evaluate(
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
    provenance="",
    resolved_config=None,
):
    """Per-episode accuracy of ``model`` (ModelParams or predictor) on a seeded set."""
    batch = _episodes(dataset, split, N, K, Q, episodes, seed)
    accs = episode_accuracies(as_predictor(model, sign, head, precision), batch, workers)
    bypass = getattr(model, "bypass", False)
    report = EvalReport(
        accs, N, K, Q, seed, split, provenance, bypass, sign, head, resolved_config
    )
    logger.info(
        f"{provenance or 'model'}: {N}-way {K}-shot on {episodes} {split} episodes: "
        f"{report.mean:.4f} ± {report.ci95:.4f}"
    )
    return report


def nearest_neighbor_predictor(episode):
    """1-NN on raw (flattened) features: one-hot of the nearest support's class."""
    support = episode.support_x.reshape(len(episode.support_x), -1)
    query = episode.query_x.reshape(len(episode.query_x), -1)
    d = ((query[:, None, :] - support[None, :, :]) ** 2).sum(axis=-1)
    nearest = episode.support_y[d.argmin(axis=1)]
    return np.eye(episode.way)[nearest]


def nearest_neighbor_baseline(dataset, split, N, K, Q, episodes, seed, workers=4):
    report = evaluate(
        nearest_neighbor_predictor, dataset, split, N, K, Q, episodes, seed,
        workers=workers, provenance="raw-1nn",
    )
    report.bypass_support = True
    report.head = "raw-1nn"
    return report


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationCell:
    shot: int
    class_support: bool
    aeml: bool
    report: EvalReport


@dataclass
class AblationGrid:
    cells: list
    resolved_config: dict = None

    def cell(self, shot, class_support, aeml):
        for c in self.cells:
            if (c.shot, c.class_support, c.aeml) == (shot, class_support, aeml):
                return c
        raise KeyError((shot, class_support, aeml))

    def to_frame(self):
        rows = []
        for c in self.cells:
            row = {"shot": c.shot, "class_support": c.class_support, "aeml": c.aeml}
            row.update({k: v for k, v in c.report.summary_row().items() if k != "shot"})
            rows.append(row)
        return pd.DataFrame(rows)

    def deltas(self):
        """Paired accuracy gains of class support and of AEML per shot count."""
        rows = []
        for shot in sorted({c.shot for c in self.cells}):
            acc = {
                (se, ae): self.cell(shot, se, ae).report.mean
                for se in (True, False)
                for ae in (True, False)
            }
            rows.append({
                "shot": shot,
                "support_gain": acc[True, False] - acc[False, False],
                "support_gain_aeml": acc[True, True] - acc[False, True],
                "aeml_gain": acc[True, True] - acc[True, False],
                "aeml_gain_no_support": acc[False, True] - acc[False, False],
            })
        return pd.DataFrame(rows)


def run_ablation(config, dataset=None):
    """{class support on/off} × {AEML on/off} for every configured shot count.

    All cells share the training seed and the evaluation seed, so each pair
    of cells is compared on the same episode set.
    """
    dataset = load_data(config.data) if dataset is None else dataset
    settings = config.eval
    resolved = config.to_dict()
    cells = []
    for shot in config.ablation.shots:
        for class_support in (True, False):
            train_cfg = replace(config.train, shot=shot, bypass_support=not class_support)
            log, store = train(train_cfg, dataset)
            best = select_top_t(log, store, 1)
            t = min(config.aeml.t, len(log.checkpoint_ids()))
            averaged = average_params(select_top_t(log, store, t), store)
            if config.aeml.recalibrate_bn:
                averaged = recalibrate_bn(
                    averaged, dataset, "train", train_cfg.way, shot, train_cfg.queries,
                    config.aeml.recalibrate_episodes, train_cfg.seed, train_cfg.precision,
                )
            for aeml, model, provenance in (
                (False, store.get(best.ids[0]).model, best.ids[0]),
                (True, averaged, f"aeml(t={t})"),
            ):
                report = evaluate(
                    model, dataset, settings.split, settings.way, shot, settings.queries,
                    settings.episodes, settings.seed, train_cfg.attention_sign,
                    train_cfg.head, train_cfg.precision, settings.workers, provenance,
                    resolved,
                )
                cells.append(AblationCell(shot, class_support, aeml, report))
    grid = AblationGrid(cells, resolved)
    logger.info(f"ablation finished: {len(cells)} reports over shots {list(config.ablation.shots)}")
    return grid
