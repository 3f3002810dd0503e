"""
Embedding networks and the class support network.

Parameters are plain float64 numpy arrays kept in insertion-ordered dicts;
:func:`bind` turns them into graph leaves (for training) or constants (for
inference) at the precision the caller asks for.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import RunningStats, Tensor

KINDS = ("mlp", "conv4", "conv6", "conv9")

DEFAULT_WIDTHS = {
    "conv4": (64, 64, 64, 64),
    # conv4 plus two unpooled 64-filter blocks
    "conv6": (64, 64, 64, 64, 64, 64),
    # four paired-conv blocks, then a 1x1 conv before global average pooling
    "conv9": (64, 128, 256, 512, 2000),
}

# class support channel width when a run does not set one
DEFAULT_SUPPORT_WIDTH = 64


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    input_shape: tuple
    widths: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.widths is not None:
            object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))

    def resolved_widths(self):
        if self.widths is not None:
            return self.widths
        if self.kind == "mlp":
            raise ConfigError("mlp architecture needs explicit widths")
        return DEFAULT_WIDTHS[self.kind]

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "widths": None if self.widths is None else list(self.widths),
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError(f"arch must be an object, got {type(data).__name__}")
        missing = [key for key in ("kind", "input_shape") if key not in data]
        if missing:
            raise ConfigError(f"arch is missing {missing}")
        unknown = set(data) - {"kind", "input_shape", "widths"}
        if unknown:
            raise ConfigError(f"unknown arch settings: {sorted(unknown)}")
        try:
            return cls(data["kind"], tuple(data["input_shape"]), data.get("widths"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"arch {data}: {exc}") from exc


@dataclass
class EmbeddingParams:
    arch: ArchSpec
    seed: int
    tensors: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def feature_dim(self):
        return output_shape(self.arch)[0]

    def copy(self):
        return EmbeddingParams(
            self.arch,
            self.seed,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.stats.items()},
        )


@dataclass
class ClassSupportParams:
    K: int
    D: int
    m: int
    seed: int
    tensors: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def copy(self):
        return ClassSupportParams(
            self.K,
            self.D,
            self.m,
            self.seed,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.stats.items()},
        )


# --------------------------------------------------------------------------
# shape algebra


def _layout(arch):
    """Parameter shapes and the resulting feature dim for ``arch``.

    Returns ``(entries, D)`` where entries are ``(name, shape, init)`` with
    init one of ``he``, ``zeros``, ``ones`` or ``bn`` (a running-stat slot
    shaped by its channel count).
    """
    if arch.kind not in KINDS:
        raise ConfigError(f"unknown architecture {arch.kind!r}; expected one of {KINDS}")
    widths = arch.resolved_widths()
    entries = []

    if arch.kind == "mlp":
        if len(arch.input_shape) != 1:
            raise ConfigError(f"mlp needs a flat input shape, got {arch.input_shape}")
        if len(widths) < 2 or widths[0] != arch.input_shape[0]:
            raise ConfigError(
                f"mlp widths {list(widths)} must start with the input dim "
                f"{arch.input_shape[0]} and name at least one layer"
            )
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            entries.append((f"dense{i}.weight", (fan_in, fan_out), "he"))
            entries.append((f"dense{i}.bias", (fan_out,), "zeros"))
        return entries, widths[-1]

    if len(arch.input_shape) != 3:
        raise ConfigError(f"{arch.kind} needs a C×H×W input shape, got {arch.input_shape}")
    channels, H, W = arch.input_shape

    def pool(H, W, where):
        if H < 2 or W < 2:
            raise ConfigError(
                f"{arch.kind} on input {arch.input_shape}: spatial extent "
                f"{H}x{W} at {where} is too small to pool"
            )
        return H // 2, W // 2

    def conv_bn(name, c_in, c_out):
        entries.append((f"{name}.conv.weight", (c_out, c_in, 3, 3), "he"))
        entries.append((f"{name}.bn.gamma", (c_out,), "ones"))
        entries.append((f"{name}.bn.beta", (c_out,), "zeros"))
        entries.append((f"{name}.bn", (c_out,), "bn"))

    if arch.kind in ("conv4", "conv6"):
        expected = 4 if arch.kind == "conv4" else 6
        if len(widths) != expected:
            raise ConfigError(f"{arch.kind} needs {expected} widths, got {list(widths)}")
        c_in = channels
        for i, c_out in enumerate(widths):
            conv_bn(f"block{i}", c_in, c_out)
            if i < 4:
                H, W = pool(H, W, f"block{i}")
            c_in = c_out
        return entries, c_in * H * W

    # conv9
    if len(widths) != 5:
        raise ConfigError(f"conv9 needs 5 widths (4 blocks + head), got {list(widths)}")
    c_in = channels
    for i, c_out in enumerate(widths[:4]):
        conv_bn(f"block{i}a", c_in, c_out)
        conv_bn(f"block{i}b", c_out, c_out)
        H, W = pool(H, W, f"block{i}")
        c_in = c_out
    entries.append(("head.conv.weight", (widths[4], c_in, 1, 1), "he"))
    entries.append(("head.conv.bias", (widths[4],), "zeros"))
    return entries, widths[4]


def output_shape(arch):
    """Shape of one embedded sample; validates the whole layer stack."""
    return (_layout(arch)[1],)


def parameter_count(arch):
    entries, _ = _layout(arch)
    return sum(int(np.prod(shape)) for _, shape, init in entries if init != "bn")


def _init(rng, shape, init):
    if init == "zeros":
        return np.zeros(shape)
    if init == "ones":
        return np.ones(shape)
    # He fan-in scaling: dense weights are [I,O], conv kernels [F,C,...]
    fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def build_embedding(arch, seed):
    entries, _ = _layout(arch)
    rng = np.random.default_rng(seed)
    params = EmbeddingParams(arch, int(seed))
    for name, shape, init in entries:
        if init == "bn":
            params.stats[name] = RunningStats.fresh(shape[0])
        else:
            params.tensors[name] = _init(rng, shape, init)
    return params


def build_class_support(K, D, m=DEFAULT_SUPPORT_WIDTH, seed=0):
    if K < 1 or D < 1 or m < 1:
        raise ConfigError(f"class support needs K, D, m >= 1, got K={K}, D={D}, m={m}")
    rng = np.random.default_rng(seed)
    params = ClassSupportParams(int(K), int(D), int(m), int(seed))
    layout = [
        ("conv1.weight", (m, 1, 3), "he"),
        ("bn1.gamma", (m,), "ones"),
        ("bn1.beta", (m,), "zeros"),
        ("conv2.weight", (m, m, 3), "he"),
        ("bn2.gamma", (m,), "ones"),
        ("bn2.beta", (m,), "zeros"),
        ("conv3.weight", (K, K * m, 1), "he"),
        ("conv3.bias", (K,), "zeros"),
    ]
    for name, shape, init in layout:
        params.tensors[name] = _init(rng, shape, init)
    params.stats["bn1"] = RunningStats.fresh(m)
    params.stats["bn2"] = RunningStats.fresh(m)
    return params


# --------------------------------------------------------------------------
# forward passes


def bind(tensors, graph=None, precision="float64", prefix=""):
    """Graph leaves named ``prefix + name`` or, without a graph, constants."""
    if graph is not None:
        return {name: graph.param(prefix + name, value) for name, value in tensors.items()}
    dtype = T.PRECISIONS[precision]
    return {name: Tensor(value, dtype=dtype) for name, value in tensors.items()}


def _as_batch(batch):
    return batch if isinstance(batch, Tensor) else Tensor(batch)


def embed(params, batch, mode="eval", weights=None):
    """Embed every sample of ``batch`` -> [B, D]."""
    batch = _as_batch(batch)
    arch = params.arch
    if tuple(batch.shape[1:]) != arch.input_shape:
        raise DimensionError(
            f"embed: sample shape {tuple(batch.shape[1:])} does not match "
            f"architecture input {arch.input_shape}"
        )
    if weights is None:
        weights = {k: Tensor(v, dtype=batch.dtype) for k, v in params.tensors.items()}
    widths = arch.resolved_widths()

    if arch.kind == "mlp":
        h = batch
        layers = len(widths) - 1
        for i in range(layers):
            h = T.dense(h, weights[f"dense{i}.weight"], weights[f"dense{i}.bias"])
            if i < layers - 1:
                h = T.relu(h)
        return h

    def block(h, name):
        h = T.conv2d(h, weights[f"{name}.conv.weight"], 1, "same")
        h = T.batch_norm(
            h,
            weights[f"{name}.bn.gamma"],
            weights[f"{name}.bn.beta"],
            params.stats[f"{name}.bn"],
            mode,
        )
        return T.relu(h)

    def pool(h):
        return T.max_pool2d(T.crop_even(h))

    h = batch
    if arch.kind in ("conv4", "conv6"):
        for i in range(len(widths)):
            h = block(h, f"block{i}")
            if i < 4:
                h = pool(h)
        return T.reshape(h, (h.shape[0], -1))

    for i in range(4):
        h = block(h, f"block{i}a")
        h = block(h, f"block{i}b")
        h = pool(h)
    h = T.conv2d(h, weights["head.conv.weight"], 1, "valid")
    h = h + T.reshape(weights["head.conv.bias"], (1, -1, 1, 1))
    return T.avg_pool_global(h)


def class_support_forward(params, class_feats, mode="eval", weights=None):
    """Class support network: [K, D] (or a stack [N, K, D]) -> same shape.

    Layers 1-2 see each support point alone; layer 3 (kernel 1) reads the
    stacked per-point channel maps of all K points and emits K rows.
    """
    class_feats = _as_batch(class_feats)
    K, D, m = params.K, params.D, params.m
    if class_feats.ndim not in (2, 3) or tuple(class_feats.shape[-2:]) != (K, D):
        raise DimensionError(
            f"class support expects [..., {K}, {D}], got shape {class_feats.shape}"
        )
    if weights is None:
        weights = {
            k: Tensor(v, dtype=class_feats.dtype) for k, v in params.tensors.items()
        }
    N = 1 if class_feats.ndim == 2 else class_feats.shape[0]

    h = T.reshape(class_feats, (N * K, 1, D))
    for layer in (1, 2):
        h = T.conv1d(h, weights[f"conv{layer}.weight"], 1, "same")
        h = T.batch_norm(
            h,
            weights[f"bn{layer}.gamma"],
            weights[f"bn{layer}.beta"],
            params.stats[f"bn{layer}"],
            mode,
        )
        h = T.relu(h)
    h = T.reshape(h, (N, K * m, D))
    h = T.conv1d(h, weights["conv3.weight"], 1, "valid")
    h = h + T.reshape(weights["conv3.bias"], (1, K, 1))
    return T.reshape(h, class_feats.shape)


def bypass_class_support(class_feats):
    return class_feats
