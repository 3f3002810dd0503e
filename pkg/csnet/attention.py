"""
Attention heads that turn class supports and a query into a distribution
over the episode's N classes.

Two layers live here. The numpy functions (:func:`select_winners`,
:func:`competitive_weights`, :func:`predict`, :func:`matching_attention`,
:func:`prototype_head`) work on a single query and are what the oracle and
property tests exercise. The ``*_probs`` functions express the same heads as
tensor ops over a whole query batch so the trainer can differentiate them.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError

SIGNS = ("negative", "literal")


def _check_sign(sign):
    if sign not in SIGNS:
        raise ContractError(f"attention sign must be one of {SIGNS}, got {sign!r}")


@dataclass
class ClassSupports:
    """Refined support points of one episode: ``points[i, j]`` is shot j of class i."""

    points: np.ndarray
    labels: list = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3:
            raise DimensionError(
                f"class supports must be [N,K,D], got shape {self.points.shape}"
            )
        if self.labels is None:
            self.labels = list(range(self.points.shape[0]))
        if len(self.labels) != self.points.shape[0]:
            raise DimensionError(
                f"{len(self.labels)} class labels for {self.points.shape[0]} classes"
            )

    @property
    def way(self):
        return self.points.shape[0]

    @property
    def shot(self):
        return self.points.shape[1]

    @property
    def dim(self):
        return self.points.shape[2]


@dataclass
class AttentionResult:
    winners: np.ndarray
    winner_dists: np.ndarray
    weights: np.ndarray
    predicted: np.ndarray


def _query(supports, query):
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (supports.dim,):
        raise DimensionError(
            f"query shape {query.shape} does not match support dim {supports.dim}"
        )
    return query


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def select_winners(supports, query):
    """Per class, the support point nearest to ``query`` and its distance."""
    query = _query(supports, query)
    diff = supports.points - query
    dists = np.sqrt(np.sum(diff * diff, axis=-1))
    # argmin keeps the first minimum: lowest shot index wins ties
    winners = dists.argmin(axis=1)
    return winners, dists[np.arange(supports.way), winners]


def competitive_weights(winner_dists, sign="negative"):
    _check_sign(sign)
    d = np.asarray(winner_dists, dtype=np.float64)
    return _softmax(-d if sign == "negative" else d)


def predict(weights, class_labels=None):
    """Weighted sum of class labels; with one-hot episode labels this is ``weights`` itself."""
    weights = np.asarray(weights, dtype=np.float64)
    if class_labels is None:
        class_labels = np.eye(weights.shape[0])
    class_labels = np.asarray(class_labels, dtype=np.float64)
    if class_labels.shape[0] != weights.shape[0]:
        raise DimensionError(
            f"{class_labels.shape[0]} label rows for {weights.shape[0]} weights"
        )
    return weights @ class_labels


def competitive_attention(supports, query, sign="negative"):
    winners, dists = select_winners(supports, query)
    weights = competitive_weights(dists, sign)
    return AttentionResult(winners, dists, weights, predict(weights))


def matching_attention(all_support, query, n_classes=None):
    """Softmax over every support point; a class's mass is its members' sum.

    ``all_support`` is a flat sequence of ``(vector, class_index)`` pairs.
    """
    if len(all_support) == 0:
        raise ContractError("matching attention needs a nonempty support set")
    points = np.stack([np.asarray(v, dtype=np.float64) for v, _ in all_support])
    classes = np.asarray([int(c) for _, c in all_support])
    query = np.asarray(query, dtype=np.float64)
    if query.shape != points.shape[1:]:
        raise DimensionError(
            f"query shape {query.shape} does not match support dim {points.shape[1:]}"
        )
    N = int(classes.max()) + 1 if n_classes is None else int(n_classes)
    diff = points - query
    weights = _softmax(-np.sqrt(np.sum(diff * diff, axis=-1)))
    return np.bincount(classes, weights=weights, minlength=N)


def prototype_head(supports, query):
    query = _query(supports, query)
    diff = supports.points.mean(axis=1) - query
    return _softmax(-np.sum(diff * diff, axis=-1))


def brute_force_competitive(supports, query, sign="negative"):
    """Reference enumeration over all N·K (class, shot) candidates."""
    _check_sign(sign)
    query = _query(supports, query)
    N, K = supports.way, supports.shot
    winners = np.zeros(N, dtype=np.int64)
    best = np.zeros(N)
    for i in range(N):
        best_j, best_d = 0, None
        for j in range(K):
            d = 0.0
            for a, b in zip(supports.points[i, j], query):
                d += (a - b) * (a - b)
            d = np.sqrt(d)
            if best_d is None or d < best_d:
                best_j, best_d = j, d
        winners[i], best[i] = best_j, best_d
    logits = -best if sign == "negative" else best
    shifted = [np.exp(v - max(logits)) for v in logits]
    total = 0.0
    for v in shifted:
        total += v
    weights = np.array([v / total for v in shifted])
    return AttentionResult(winners, best, weights, weights.copy())


# --------------------------------------------------------------------------
# tensor heads: supports [N,K,D], queries [M,D] -> probabilities [M,N]


def _distances(supports, queries):
    if supports.ndim != 3 or queries.ndim != 2 or supports.shape[2] != queries.shape[1]:
        raise DimensionError(
            f"heads expect supports [N,K,D] and queries [M,D], "
            f"got {supports.shape} and {queries.shape}"
        )
    N, K, D = supports.shape
    M = queries.shape[0]
    diff = T.reshape(queries, (M, 1, 1, D)) - T.reshape(supports, (1, N, K, D))
    return T.sqrt(T.sum(diff * diff, axis=-1))


def competitive_probs(supports, queries, sign="negative"):
    _check_sign(sign)
    d = _distances(supports, queries)
    winners = d.data.argmin(axis=-1)
    M, N = winners.shape
    won = T.reshape(T.take_along(d, winners[..., None], axis=-1), (M, N))
    return T.softmax(T.neg(won) if sign == "negative" else won, axis=-1)


def matching_probs(supports, queries, sign="negative"):
    _check_sign(sign)
    d = _distances(supports, queries)
    M, N, K = d.shape
    flat = T.reshape(d, (M, N * K))
    w = T.softmax(T.neg(flat) if sign == "negative" else flat, axis=-1)
    return T.sum(T.reshape(w, (M, N, K)), axis=-1)


def prototype_probs(supports, queries, sign="negative"):
    _check_sign(sign)
    if supports.ndim != 3 or queries.ndim != 2 or supports.shape[2] != queries.shape[1]:
        raise DimensionError(
            f"heads expect supports [N,K,D] and queries [M,D], "
            f"got {supports.shape} and {queries.shape}"
        )
    N, _, D = supports.shape
    M = queries.shape[0]
    protos = T.mean(supports, axis=1)
    diff = T.reshape(queries, (M, 1, D)) - T.reshape(protos, (1, N, D))
    sq = T.sum(diff * diff, axis=-1)
    return T.softmax(T.neg(sq) if sign == "negative" else sq, axis=-1)


HEADS = {
    "competitive": competitive_probs,
    "matching": matching_probs,
    "prototype": prototype_probs,
}


def head_fn(kind):
    if kind not in HEADS:
        raise ContractError(f"unknown head {kind!r}; expected one of {sorted(HEADS)}")
    return HEADS[kind]
