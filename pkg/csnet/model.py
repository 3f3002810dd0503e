"""
The full model: embed every sample with the embedding network, refine each class's support
points with the class support network (or pass them through), and let an attention head score the
queries against the refined supports.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import head_fn
from .episodes import SynthFamilyConfig, sample_episode, synth_family
from .errors import ContractError, DimensionError
from .networks import (
    DEFAULT_SUPPORT_WIDTH,
    ArchSpec,
    bind,
    build_class_support,
    build_embedding,
    bypass_class_support,
    class_support_forward,
    embed,
    output_shape,
)
from .tensor import Graph, Tensor

EMBEDDING = "embedding/"
SUPPORT = "support/"


@dataclass
class ModelParams:
    """Embedding and class support parameters plus the batch-norm running statistics of both."""

    embedding: object
    class_support: object = None

    @property
    def bypass(self):
        return self.class_support is None

    @property
    def shot(self):
        return None if self.class_support is None else self.class_support.K

    def trainable(self):
        values = {EMBEDDING + k: v for k, v in self.embedding.tensors.items()}
        if self.class_support is not None:
            values.update({SUPPORT + k: v for k, v in self.class_support.tensors.items()})
        return values

    def bn_stats(self):
        stats = {EMBEDDING + k: v for k, v in self.embedding.stats.items()}
        if self.class_support is not None:
            stats.update({SUPPORT + k: v for k, v in self.class_support.stats.items()})
        return stats

    def with_trainable(self, values):
        """Same structure and (shared) running stats, new trainable tensors."""
        missing = set(self.trainable()) - set(values)
        if missing:
            raise ContractError(f"missing parameter values: {sorted(missing)}")
        embedding = type(self.embedding)(
            self.embedding.arch,
            self.embedding.seed,
            {k: values[EMBEDDING + k] for k in self.embedding.tensors},
            self.embedding.stats,
        )
        support = None
        if self.class_support is not None:
            cs = self.class_support
            support = type(cs)(
                cs.K,
                cs.D,
                cs.m,
                cs.seed,
                {k: values[SUPPORT + k] for k in cs.tensors},
                cs.stats,
            )
        return ModelParams(embedding, support)

    def with_stats(self, stats):
        model = self.copy()
        for key, value in stats.items():
            if key.startswith(EMBEDDING):
                model.embedding.stats[key[len(EMBEDDING):]] = value
            elif key.startswith(SUPPORT) and model.class_support is not None:
                model.class_support.stats[key[len(SUPPORT):]] = value
            else:
                raise ContractError(f"unknown batch-norm layer {key!r}")
        return model

    def copy(self):
        return ModelParams(
            self.embedding.copy(),
            None if self.class_support is None else self.class_support.copy(),
        )

    def signature(self):
        """Everything two models must share for their tensors to be averaged."""
        cs = self.class_support
        return (
            self.embedding.arch,
            None if cs is None else (cs.K, cs.D, cs.m),
            tuple((k, v.shape) for k, v in self.trainable().items()),
            tuple((k, v.mean.shape) for k, v in self.bn_stats().items() if v.initialized),
        )


@dataclass
class BoundModel:
    embedding: dict
    support: dict
    dtype: object


def build_model(arch, shot, support_width=DEFAULT_SUPPORT_WIDTH, seed=0, bypass=False):
    embedding = build_embedding(arch, seed)
    if bypass:
        return ModelParams(embedding, None)
    D = output_shape(arch)[0]
    # separate seed stream so toggling class support leaves the embedding init unchanged
    support = build_class_support(shot, D, support_width, seed + 1)
    return ModelParams(embedding, support)


def bind_model(model, graph=None, precision="float32"):
    if graph is not None:
        precision = graph.precision
    embedding = bind(model.embedding.tensors, graph, precision, EMBEDDING)
    support = None
    if model.class_support is not None:
        support = bind(model.class_support.tensors, graph, precision, SUPPORT)
    return BoundModel(embedding, support, np.dtype(T.PRECISIONS[precision]))


def bound_from_tensors(model, tensors):
    """Regroup a flat ``embedding/…``/``support/…`` tensor dict for a forward pass."""
    embedding = {k: tensors[EMBEDDING + k] for k in model.embedding.tensors}
    support = None
    if model.class_support is not None:
        support = {k: tensors[SUPPORT + k] for k in model.class_support.tensors}
    dtype = next(iter(tensors.values())).dtype
    return BoundModel(embedding, support, dtype)


def episode_probs(
    model,
    episode,
    mode="eval",
    bound=None,
    precision="float32",
    sign="negative",
    head="competitive",
):
    """Query probabilities [N·Q, N] for ``episode`` and the query labels."""
    if bound is None:
        bound = bind_model(model, None, precision)
    N, K = episode.way, episode.shot
    if model.class_support is not None and model.class_support.K != K:
        raise DimensionError(
            f"model class support is built for {model.class_support.K}-shot, "
            f"episode is {K}-shot"
        )
    batch = Tensor(
        np.concatenate([episode.support_x, episode.query_x]), dtype=bound.dtype
    )
    feats = embed(model.embedding, batch, mode, bound.embedding)
    D = feats.shape[1]
    supports = T.reshape(T.rows(feats, 0, N * K), (N, K, D))
    queries = T.rows(feats, N * K, feats.shape[0])
    if model.class_support is not None:
        supports = class_support_forward(model.class_support, supports, mode, bound.support)
    else:
        supports = bypass_class_support(supports)
    return head_fn(head)(supports, queries, sign=sign), episode.query_y


def episode_loss(
    model,
    episode,
    graph=None,
    bound=None,
    sign="negative",
    head="competitive",
):
    """Mean negative log-likelihood of the episode's queries, train-mode BN."""
    if graph is None:
        graph = Graph("float32")
    if bound is None:
        bound = bind_model(model, graph)
    probs, labels = episode_probs(model, episode, "train", bound, sign=sign, head=head)
    return T.nll_loss(probs, labels)


def batch_loss(model, episodes, precision="float32", sign="negative", head="competitive"):
    """Average episode loss over one mini-batch, all in a single graph."""
    if not episodes:
        raise ContractError("a training batch needs at least one episode")
    graph = Graph(precision)
    bound = bind_model(model, graph)
    total = None
    for episode in episodes:
        loss = episode_loss(model, episode, graph, bound, sign, head)
        total = loss if total is None else total + loss
    return total / len(episodes), graph


def as_predictor(model, sign="negative", head="competitive", precision="float32"):
    """Callable ``episode -> probs [N·Q, N]``; callables pass through."""
    if callable(model):
        return model

    def run(episode):
        probs, _ = episode_probs(model, episode, "eval", None, precision, sign, head)
        return probs.data

    return run


def episode_accuracy(probs, labels):
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape[0] != labels.shape[0]:
        raise DimensionError(f"{probs.shape[0]} predictions for {labels.shape[0]} labels")
    return float(np.mean(probs.argmax(axis=1) == labels))


def episode_accuracies(predictor, episodes, workers=4):
    """Per-episode accuracy, computed concurrently and returned in episode order."""
    results = [None] * len(episodes)
    if workers <= 1 or len(episodes) <= 1:
        for i, episode in enumerate(episodes):
            results[i] = episode_accuracy(predictor(episode), episode.query_y)
        return results
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {
            executor.submit(predictor, episode): i for i, episode in enumerate(episodes)
        }
        for future in as_completed(futures):
            i = futures[future]
            results[i] = episode_accuracy(future.result(), episodes[i].query_y)
    return results


# --------------------------------------------------------------------------
# finite-difference suite


GRADCHECK_KINDS = ("mlp", "conv4", "support")


def check_gradients(kind, samples=200, seed=0, h=1e-5):
    """Grad-check one architecture composed with competitive attention + NLL.

    ``mlp`` and ``conv4`` run without class support; ``support`` adds it on top of a small
    mlp so both networks are checked together.
    """
    if kind not in GRADCHECK_KINDS:
        raise ContractError(f"unknown grad-check kind {kind!r}; expected {GRADCHECK_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "conv4":
        arch = ArchSpec("conv4", (1, 16, 16), (4, 4, 4, 4))
        shot, bypass = 1, True
        dataset = synth_family(SynthFamilyConfig(
            dim=256, train_classes=4, val_classes=1, test_classes=1,
            samples_per_class=4, seed=seed,
        )).reshaped((1, 16, 16))
    else:
        arch = ArchSpec("mlp", (6,), (6, 24, 12))
        shot, bypass = 2, kind == "mlp"
        dataset = synth_family(SynthFamilyConfig(
            dim=6, train_classes=4, val_classes=1, test_classes=1,
            samples_per_class=5, seed=seed,
        ))
    model = build_model(arch, shot, support_width=3, seed=seed, bypass=bypass)
    episode = sample_episode(dataset, "train", 3, shot, 2, rng)

    def loss_of(tensors):
        return episode_loss(model, episode, tensors[next(iter(tensors))].graph,
                            bound_from_tensors(model, tensors))

    return T.grad_check_report(loss_of, model.trainable(), h=h, samples=samples, seed=seed)
