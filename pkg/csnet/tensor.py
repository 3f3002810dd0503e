"""
Dense real tensors with define-by-run reverse-mode differentiation.

A :class:`Graph` is built fresh for every episode. Each differentiable op
appends one node holding its cached output and a vector-Jacobian closure;
:func:`backward` walks the nodes in reverse creation order, which is a valid
reverse topological order because inputs are always created before the ops
that consume them.

Ops whose inputs are all constants (tensors without a node) compute eagerly
and record nothing, which is how inference runs.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, LabelError, StateError
from .logger import logger

PRECISIONS = {"float32": np.float32, "float64": np.float64}

# Batch-norm variance floor and running-stat momentum
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# Keeps -log(p) finite on degenerate distributions
NLL_FLOOR = 1e-12

PADDINGS = ("same", "valid")


class Tensor:
    """A dense real array, optionally a node of a :class:`Graph`."""

    __slots__ = ("data", "node_id", "graph")

    def __init__(self, data, node_id=None, graph=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.node_id = node_id
        self.graph = graph

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a real scalar")
        return mul(self, 1.0 / float(other))

    def __repr__(self):
        where = "const" if self.node_id is None else f"node={self.node_id}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, {where})"


@dataclass
class Node:
    kind: str
    inputs: tuple
    attrs: dict
    output: np.ndarray
    vjp: object = None


class Graph:
    """Op records of one forward pass, in creation (topological) order."""

    def __init__(self, precision="float32"):
        if precision not in PRECISIONS:
            raise ContractError(
                f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}"
            )
        self.precision = precision
        self.dtype = np.dtype(PRECISIONS[precision])
        self.nodes = []
        self.params = {}
        # Outcomes of non-differentiable gates (relu masks, pool and winner
        # choices); two passes with equal gates lie on the same smooth piece.
        self.gates = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data, name=None):
        arr = np.array(data, dtype=self.dtype)
        node_id = len(self.nodes)
        self.nodes.append(Node("leaf", (), {"name": name}, arr))
        if name is not None:
            if name in self.params:
                raise ContractError(f"parameter {name!r} bound twice in one graph")
            self.params[name] = node_id
        return Tensor(arr, node_id, self)

    def param(self, name, data):
        return self.leaf(data, name=name)

    def constant(self, data):
        return Tensor(np.asarray(data, dtype=self.dtype))

    def record(self, kind, inputs, output, vjp, attrs=None):
        node_id = len(self.nodes)
        ids = tuple(t.node_id for t in inputs)
        self.nodes.append(Node(kind, ids, attrs or {}, output, vjp))
        return Tensor(output, node_id, self)

    def note_gate(self, outcome):
        self.gates.append(np.array(outcome, copy=True))

    def same_gates(self, other):
        if len(self.gates) != len(other.gates):
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.gates, other.gates)
        )


class GradientMap(dict):
    """node_id -> Tensor gradient, shaped like that node's output."""

    def named(self, graph):
        """Re-key by parameter name for the parameters bound in ``graph``."""
        return {
            name: self[node_id].data
            for name, node_id in graph.params.items()
            if node_id in self
        }


@dataclass
class RunningStats:
    """Batch-norm running mean/variance for one layer."""

    mean: np.ndarray = None
    var: np.ndarray = None
    batches: int = 0

    @classmethod
    def fresh(cls, channels):
        return cls(np.zeros(channels), np.ones(channels), 0)

    @property
    def initialized(self):
        return self.mean is not None and self.var is not None

    def update(self, mean, var, momentum=BN_MOMENTUM):
        mean = np.asarray(mean, dtype=np.float64)
        var = np.asarray(var, dtype=np.float64)
        if not self.initialized:
            self.mean, self.var = mean.copy(), var.copy()
        else:
            self.mean = momentum * self.mean + (1.0 - momentum) * mean
            self.var = momentum * self.var + (1.0 - momentum) * var
        self.batches += 1

    def copy(self):
        return RunningStats(
            None if self.mean is None else self.mean.copy(),
            None if self.var is None else self.var.copy(),
            self.batches,
        )


# --------------------------------------------------------------------------
# plumbing


def _graph_of(tensors):
    graph = None
    for t in tensors:
        if t.graph is not None and t.node_id is not None:
            if graph is None:
                graph = t.graph
            elif t.graph is not graph:
                raise ContractError("op mixes tensors from two different graphs")
    return graph


def _as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _emit(kind, inputs, output, vjp, gate=None, **attrs):
    graph = _graph_of(inputs)
    if graph is None:
        return Tensor(output)
    if gate is not None:
        graph.note_gate(gate)
    return graph.record(kind, inputs, output, vjp, attrs)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


# --------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b):
    a, b = _pair(a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), out, vjp)


def sub(a, b):
    a, b = _pair(a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", (a, b), out, vjp)


def mul(a, b):
    a, b = _pair(a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", (a, b), out, vjp)


def neg(x):
    return _emit("neg", (x,), -x.data, lambda g: (-g,))


def reshape(x, shape):
    out = x.data.reshape(shape)
    return _emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),), shape=shape)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", tuple(tensors), out, vjp, axis=axis)


def rows(x, start, stop):
    """``x[start:stop]`` along the first axis."""
    out = x.data[start:stop]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _emit("rows", (x,), out, vjp, start=start, stop=stop)


def take_along(x, index, axis=-1):
    """Gather ``x`` along ``axis``; the gradient is scattered back to the picks.

    ``index`` must have the rank of ``x`` and match it on every other axis.
    """
    index = np.asarray(index)
    out = np.take_along_axis(x.data, index, axis=axis)

    def vjp(g):
        full = np.zeros_like(x.data)
        grid = list(np.indices(index.shape, sparse=True))
        grid[axis] = index
        np.add.at(full, tuple(grid), g)
        return (full,)

    return _emit("take_along", (x,), out, vjp, gate=index, axis=axis)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", (x,), np.asarray(out), vjp, axis=axis)


def mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in np.atleast_1d(axis)]
    )
    return sum(x, axis=axis, keepdims=keepdims) / count


def sqrt(x):
    """Square root with a zero subgradient where the input is zero."""
    out = np.sqrt(np.maximum(x.data, 0.0))

    def vjp(g):
        scale = np.divide(0.5, out, out=np.zeros_like(out), where=out > 0)
        return (g * scale,)

    return _emit("sqrt", (x,), out, vjp)


def relu(x):
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0).astype(x.dtype)
    return _emit("relu", (x,), out, lambda g: (g * mask,), gate=mask)


def crop_even(x):
    """Drop a trailing row/column so both spatial extents are even."""
    if x.ndim != 4:
        raise DimensionError(f"crop_even expects [B,C,H,W], got shape {x.shape}")
    H, W = x.shape[2], x.shape[3]
    H2, W2 = H - H % 2, W - W % 2
    if (H2, W2) == (H, W):
        return x
    out = x.data[:, :, :H2, :W2]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, :, :H2, :W2] = g
        return (full,)

    return _emit("crop_even", (x,), out, vjp)


def max_pool2d(x):
    """2×2 max pooling, stride 2. Odd spatial extents are an error."""
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects [B,C,H,W], got shape {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(
            f"max_pool2d needs even spatial extents, got H={H} and W={W}"
        )
    windows = (
        x.data.reshape(B, C, H // 2, 2, W // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, H // 2, W // 2, 4)
    )
    # argmax returns the first maximum: ties go to the lowest linear index
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        routed = np.zeros_like(windows)
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        back = (
            routed.reshape(B, C, H // 2, W // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(B, C, H, W)
        )
        return (back,)

    return _emit("max_pool2d", (x,), out, vjp, gate=arg)


def avg_pool_global(x):
    """Mean over every spatial axis: [B,C,...] -> [B,C]."""
    if x.ndim < 3:
        raise DimensionError(f"avg_pool_global expects [B,C,...], got shape {x.shape}")
    axes = tuple(range(2, x.ndim))
    count = int(np.prod(x.shape[2:]))
    out = x.data.mean(axis=axes)

    def vjp(g):
        expanded = g.reshape(g.shape + (1,) * len(axes))
        return (np.broadcast_to(expanded / count, x.shape).copy(),)

    return _emit("avg_pool_global", (x,), out, vjp)


ACTIVATIONS = {
    "relu": relu,
    "max_pool2d": max_pool2d,
    "avg_pool_global": avg_pool_global,
}


def activate_pool(x, kind):
    if kind not in ACTIVATIONS:
        raise ContractError(
            f"unknown activation/pool {kind!r}; expected one of {sorted(ACTIVATIONS)}"
        )
    return ACTIVATIONS[kind](x)


# --------------------------------------------------------------------------
# layers


def dense(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(
            f"dense expects [B,I]·[I,O]+[O], got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"dense: input inner extent {x.shape[1]} does not match "
            f"weight rows {weight.shape[0]}"
        )
    if bias.shape[0] != weight.shape[1]:
        raise DimensionError(
            f"dense: bias extent {bias.shape[0]} does not match "
            f"weight columns {weight.shape[1]}"
        )
    out = x.data @ weight.data + bias.data

    def vjp(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _emit("dense", (x, weight, bias), out, vjp)


def _same_pads(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _correlate(x, w, stride, pads):
    """Cross-correlate [B,C,H,W] with [F,C,kh,kw]; returns output and a vjp."""
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), pads[0], pads[1]))
    if kh > xp.shape[2] or kw > xp.shape[3]:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {xp.shape[2]}x{xp.shape[3]}"
        )
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,fcij->bfhw", windows, w, optimize=True)
    H, W = x.shape[2], x.shape[3]
    top, left = pads[0][0], pads[1][0]

    def vjp(g):
        dw = np.einsum("bchwij,bfhw->fcij", windows, g, optimize=True)
        dxp = np.zeros_like(xp)
        Ho, Wo = g.shape[2], g.shape[3]
        for i in range(kh):
            for j in range(kw):
                dxp[
                    :, :,
                    i : i + stride * (Ho - 1) + 1 : stride,
                    j : j + stride * (Wo - 1) + 1 : stride,
                ] += np.einsum("bfhw,fc->bchw", g, w[:, :, i, j], optimize=True)
        return dxp[:, :, top : top + H, left : left + W], dw

    return out, vjp


def _check_conv(kind, x, kernel, ndim, stride, padding):
    if x.ndim != ndim or kernel.ndim != ndim:
        raise DimensionError(
            f"{kind} expects rank-{ndim} input and kernel, "
            f"got {x.shape} and {kernel.shape}"
        )
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"{kind}: input channels {x.shape[1]} do not match "
            f"kernel channels {kernel.shape[1]}"
        )
    if padding not in PADDINGS:
        raise ContractError(f"{kind}: padding must be 'same' or 'valid', got {padding!r}")
    if stride < 1:
        raise ContractError(f"{kind}: stride must be positive, got {stride}")


def conv2d(x, kernel, stride=1, padding="same"):
    _check_conv("conv2d", x, kernel, 4, stride, padding)
    kh, kw = kernel.shape[2], kernel.shape[3]
    if padding == "same":
        pads = (_same_pads(x.shape[2], kh, stride), _same_pads(x.shape[3], kw, stride))
    else:
        pads = ((0, 0), (0, 0))
    out, inner = _correlate(x.data, kernel.data, stride, pads)
    return _emit("conv2d", (x, kernel), out, inner, stride=stride, padding=padding)


def conv1d(x, kernel, stride=1, padding="same"):
    _check_conv("conv1d", x, kernel, 3, stride, padding)
    k = kernel.shape[2]
    pads = ((0, 0), _same_pads(x.shape[2], k, stride) if padding == "same" else (0, 0))
    out4, inner = _correlate(x.data[:, :, None, :], kernel.data[:, :, None, :], stride, pads)

    def vjp(g):
        dx, dw = inner(g[:, :, None, :])
        return dx[:, :, 0, :], dw[:, :, 0, :]

    return _emit("conv1d", (x, kernel), out4[:, :, 0, :], vjp, stride=stride, padding=padding)


def batch_norm(x, gamma, beta, state, mode="train", eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel normalization over every axis but the channel axis (1).

    Train mode normalizes by batch statistics and folds them into ``state``
    (mutated in place); eval mode normalizes by ``state``.
    """
    if x.ndim < 2:
        raise DimensionError(f"batch_norm expects [B,C,...], got shape {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(
            f"batch_norm: gamma {gamma.shape} / beta {beta.shape} "
            f"do not match channel extent {C}"
        )
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    g_b = gamma.data.reshape(bshape)

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mu, var, momentum)
    elif mode == "eval":
        if not state.initialized:
            raise StateError("batch_norm in eval mode needs initialized running stats")
        mu = state.mean.astype(x.dtype)
        var = state.var.astype(x.dtype)
    else:
        raise ContractError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")

    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - mu.reshape(bshape)) * inv
    out = g_b * xhat + beta.data.reshape(bshape)
    m = x.data.size // C

    def vjp(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        dxhat = g * g_b
        if mode == "eval":
            return dxhat * inv, dgamma, dbeta
        dx = (inv / m) * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _emit("batch_norm", (x, gamma, beta), out, vjp, mode=mode)


# --------------------------------------------------------------------------
# distances, softmax and loss


def squared_l2(a, b):
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"squared_l2: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    out = np.asarray(np.sum(diff * diff))

    def vjp(g):
        return 2.0 * diff * g, -2.0 * diff * g

    return _emit("squared_l2", (a, b), out, vjp)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), s, vjp, axis=axis)


def nll_loss(prob, label):
    """-log(p[label] + floor); a [M,N] batch with M labels gives the mean."""
    if prob.ndim == 1:
        labels = np.asarray([label])
        p = prob.data[None, :]
    elif prob.ndim == 2:
        labels = np.asarray(label).reshape(-1)
        p = prob.data
        if labels.shape[0] != p.shape[0]:
            raise DimensionError(
                f"nll_loss: {labels.shape[0]} labels for {p.shape[0]} distributions"
            )
    else:
        raise DimensionError(f"nll_loss expects [N] or [M,N], got shape {prob.shape}")
    N = p.shape[1]
    if np.any(labels < 0) or np.any(labels >= N):
        raise LabelError(f"nll_loss: label out of range 0..{N - 1}: {labels.tolist()}")
    M = p.shape[0]
    picked = p[np.arange(M), labels] + NLL_FLOOR
    out = np.asarray(-np.log(picked).mean(), dtype=prob.dtype)

    def vjp(g):
        full = np.zeros_like(p)
        full[np.arange(M), labels] = -g / (M * picked)
        return (full.reshape(prob.shape),)

    return _emit("nll_loss", (prob,), out, vjp)


# --------------------------------------------------------------------------
# differentiation


def backward(loss, wrt=None):
    """Reverse-mode gradients of a scalar ``loss`` for the nodes in ``wrt``.

    ``wrt`` holds node ids or tensors; by default every named parameter of the
    loss's graph. Nodes the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = loss.graph
    if graph is None or loss.node_id is None:
        if wrt:
            raise ContractError("loss is a constant; it has no graph to differentiate")
        return GradientMap()
    if wrt is None:
        wrt = list(graph.params.values())
    ids = [t.node_id if isinstance(t, Tensor) else int(t) for t in wrt]
    for node_id in ids:
        if node_id is None or not 0 <= node_id < len(graph.nodes):
            raise ContractError(f"node {node_id} is not part of the loss graph")
    keep = set(ids)

    nodes = graph.nodes
    grads = {loss.node_id: np.ones_like(loss.data)}
    for node_id in range(loss.node_id, -1, -1):
        g = grads.get(node_id)
        if g is None:
            continue
        node = nodes[node_id]
        if node.vjp is None:
            continue
        for source, part in zip(node.inputs, node.vjp(g)):
            if source is None or part is None:
                continue
            grads[source] = part if source not in grads else grads[source] + part
        if node_id not in keep:
            del grads[node_id]

    result = GradientMap()
    for node_id in ids:
        out = nodes[node_id].output
        grad = grads.get(node_id)
        if grad is None:
            grad = np.zeros_like(out)
        result[node_id] = Tensor(np.asarray(grad, dtype=out.dtype).reshape(out.shape))
    return result


@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    skipped_kinks: int
    skipped_flat: int
    worst: tuple = field(default=None)


def grad_check_report(f, params, h=1e-5, samples=200, seed=0):
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` maps a dict of parameter tensors (bound in a 64-bit graph) to a
    scalar tensor. Coordinates are drawn without replacement until ``samples``
    of them have been checked or none remain. A coordinate is skipped when a
    perturbation flips any gate (relu mask, pool or winner choice) or when
    both derivatives sit below the difference resolution.
    """
    if h <= 0:
        raise ContractError(f"grad_check step must be positive, got {h}")
    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}

    def run(values):
        graph = Graph("float64")
        tensors = {name: graph.param(name, value) for name, value in values.items()}
        out = f(tensors)
        if out.data.size != 1:
            raise ContractError(f"grad_check needs a scalar function, got {out.shape}")
        return graph, tensors, out

    graph0, tensors0, out0 = run(base)
    f0 = out0.item()
    grads = backward(out0, list(tensors0.values()))
    analytic = {name: grads[t.node_id].data for name, t in tensors0.items()}

    coords = [(name, i) for name, value in base.items() for i in range(value.size)]
    order = np.random.default_rng(seed).permutation(len(coords))

    resolution = 1e6 * np.finfo(np.float64).eps * max(1.0, abs(f0)) / h
    result = GradCheckResult(0.0, 0, 0, 0)
    for pick in order:
        if result.checked >= samples:
            break
        name, index = coords[pick]
        values = []
        for step in (h, -h):
            shifted = dict(base)
            shifted[name] = base[name].copy()
            shifted[name].flat[index] += step
            values.append(run(shifted))
        (g_plus, _, plus), (g_minus, _, minus) = values
        if not (graph0.same_gates(g_plus) and graph0.same_gates(g_minus)):
            result.skipped_kinks += 1
            continue
        numeric = (plus.item() - minus.item()) / (2.0 * h)
        exact = float(analytic[name].flat[index])
        if max(abs(exact), abs(numeric)) < resolution:
            result.skipped_flat += 1
            continue
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        result.checked += 1
        if err > result.max_rel_err:
            result.max_rel_err = err
            result.worst = (name, index, exact, numeric)

    if result.checked < samples:
        logger.warning(
            f"grad_check: only {result.checked} of {samples} requested coordinates checkable"
        )
    if result.skipped_kinks or result.skipped_flat:
        logger.warning(
            f"grad_check: {result.checked} coordinates checked, "
            f"{result.skipped_kinks} skipped at kinks, "
            f"{result.skipped_flat} below resolution {resolution:.1e}"
        )
    return result


def grad_check(f, params, h=1e-5, samples=200, seed=0):
    """Max relative error of :func:`grad_check_report` over sampled coordinates."""
    return grad_check_report(f, params, h=h, samples=samples, seed=seed).max_rel_err
