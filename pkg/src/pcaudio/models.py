"""Set Transformer blocks and the four classifiers.

Attention block layout (shared by SAB, ISAB and PMA)::

    Q = X Wq + bq,  K = Y Wk + bk,  V = Y Wv + bv        (split into h heads)
    A = masked_softmax(Q K^T / sqrt(D / h))
    H = Q + concat_heads(A V)
    out = H + leaky_relu(H Wo + bo)

There are no positional encodings, and layer normalization is off unless
``ModelSpec.layer_norm`` is set.  With 64 inducing points and hidden size
64 this layout gives 80,202 trainable parameters for 2-D clouds and
80,394 for 3-D clouds.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import EmptyCloudError, ParameterError, ShapeError
from .pointcloud import CloudBatch, PointCloud, batch
from .signal import pad_window_input  # noqa: F401  (re-exported adapter)
from .tensor import Tensor

CHECKPOINT_VERSION = 1

KINDS = ("FST", "TST3", "FB", "CNN")


@dataclass
class ModelSpec:
    kind: str = "FST"
    n_classes: int = 10
    d_in: int = 2
    hidden: int = 64
    heads: int = 4
    inducing: int = 64
    n_isab: int = 2
    layer_norm: bool = False
    scale_attention: bool = True
    fb_input: int = 1025
    fb_hidden: tuple = (512, 256)
    fb_dropout: float = 0.2
    cnn_channels: int = 30
    cnn_frames: int = 10
    cnn_bins: int = 513
    slope: float = T.LEAKY_SLOPE
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        self.fb_hidden = tuple(int(h) for h in self.fb_hidden)
        if self.kind in ("FST", "TST3"):
            if self.hidden % self.heads:
                raise ParameterError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
            if self.inducing < 1:
                raise ParameterError("need at least one inducing point")
            expected = 2 if self.kind == "FST" else 3
            if self.d_in != expected:
                raise ParameterError(f"{self.kind} takes {expected}-D points, got d_in={self.d_in}")

    @property
    def is_cloud_model(self) -> bool:
        return self.kind in ("FST", "TST3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fb_hidden"] = list(self.fb_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown ModelSpec keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # 2 ISAB + PMA at hidden size 2, two classes
    "fst-toy": dict(kind="FST", n_classes=2, d_in=2, hidden=2, heads=1, inducing=16),
    "fst": dict(kind="FST", n_classes=10, d_in=2, hidden=64, heads=4, inducing=64),
    "tst3": dict(kind="TST3", n_classes=10, d_in=3, hidden=64, heads=4, inducing=64),
    "fb-toy": dict(kind="FB", n_classes=2, fb_input=64, fb_hidden=(8,), fb_dropout=0.0),
    "fb": dict(kind="FB", n_classes=10, fb_input=1025, fb_hidden=(512, 256), fb_dropout=0.2),
    "cnn": dict(kind="CNN", n_classes=10, cnn_channels=30, cnn_frames=10, cnn_bins=513),
}


def preset(name: str, **overrides) -> ModelSpec:
    if name not in PRESETS:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelSpec(**{**PRESETS[name], **overrides})


# ---------------------------------------------------------------------------
# Module plumbing
# ---------------------------------------------------------------------------


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}
        self._no_decay: set[str] = set()
        self.training = False

    def add_param(self, name: str, value: np.ndarray, decay: bool = True) -> Tensor:
        p = T.parameter(value, name=name)
        self._params[name] = p
        if not decay:
            self._no_decay.add(name)
        setattr(self, name, p)
        return p

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        setattr(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor, bool]]:
        """Yields ``(dotted_name, tensor, decayed)`` in construction order."""
        for name, p in self._params.items():
            yield prefix + name, p, name not in self._no_decay
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p, _ in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p, _ in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {name: p for name, p, _ in self.named_parameters()}
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ParameterError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(T.get_default_dtype())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.add_param("weight", _uniform(rng, bound, (d_in, d_out)))
        self.add_param("bias", _uniform(rng, bound, (d_out,)), decay=False)

    def __call__(self, x) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.add_param("gain", np.ones(dim), decay=False)
        self.add_param("shift", np.zeros(dim), decay=False)

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x) * self.gain + self.shift


# ---------------------------------------------------------------------------
# Set Transformer blocks
# ---------------------------------------------------------------------------


def _split_heads(x: Tensor, heads: int) -> Tensor:
    shape = x.shape
    x = T.reshape(x, shape[:-1] + (heads, shape[-1] // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = T.transpose(x, axes)
    shape = x.shape
    return T.reshape(x, shape[:-2] + (shape[-2] * shape[-1],))


class MAB(Module):
    """Multihead attention block: queries from X attend over the set Y."""

    def __init__(self, dim_q: int, dim_k: int, dim: int, heads: int, rng: np.random.Generator,
                 layer_norm: bool = False, scale_attention: bool = True, slope: float = T.LEAKY_SLOPE):
        super().__init__()
        if dim % heads:
            raise ParameterError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.slope = dim, heads, slope
        self.scale = 1.0 / math.sqrt(dim // heads) if scale_attention else 1.0
        self.add_child("fc_q", Linear(dim_q, dim, rng))
        self.add_child("fc_k", Linear(dim_k, dim, rng))
        self.add_child("fc_v", Linear(dim_k, dim, rng))
        self.add_child("fc_o", Linear(dim, dim, rng))
        self.use_ln = layer_norm
        if layer_norm:
            self.add_child("ln0", LayerNorm(dim))
            self.add_child("ln1", LayerNorm(dim))
        self.record = False
        self.last_attention: Optional[np.ndarray] = None

    def __call__(self, X, Y, mask: Optional[np.ndarray] = None) -> Tensor:
        Q = self.fc_q(X)
        K = self.fc_k(Y)
        V = self.fc_v(Y)
        Qh, Kh, Vh = (_split_heads(t, self.heads) for t in (Q, K, V))
        scores = T.matmul(Qh, T.transpose(Kh, _swap_last(Kh.ndim)))
        if self.scale != 1.0:
            scores = T.scale(scores, self.scale)
        key_mask = None
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            key_mask = mask.reshape(mask.shape[:-1] + (1, 1, mask.shape[-1]))
        A = T.masked_softmax(scores, key_mask)
        if self.record:
            self.last_attention = A.data
        H = Q + _merge_heads(T.matmul(A, Vh))
        if self.use_ln:
            H = self.ln0(H)
        out = H + T.leaky_relu(self.fc_o(H), self.slope)
        if self.use_ln:
            out = self.ln1(out)
        return out


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class SAB(Module):
    """Self attention over a set: SAB(X) = MAB(X, X)."""

    def __init__(self, dim_in: int, dim: int, heads: int, rng, **kw):
        super().__init__()
        self.add_child("mab", MAB(dim_in, dim_in, dim, heads, rng, **kw))

    def __call__(self, X, mask=None) -> Tensor:
        return self.mab(X, X, mask)


class ISAB(Module):
    """Induced set attention: ISAB(X) = MAB(X, MAB(I, X)) through k learned points."""

    def __init__(self, dim_in: int, dim: int, heads: int, n_inducing: int, rng, **kw):
        super().__init__()
        bound = math.sqrt(6.0 / (n_inducing + dim))
        self.add_param("inducing", _uniform(rng, bound, (n_inducing, dim)), decay=False)
        self.add_child("mab0", MAB(dim, dim_in, dim, heads, rng, **kw))
        self.add_child("mab1", MAB(dim_in, dim, dim, heads, rng, **kw))

    def __call__(self, X, mask=None) -> Tensor:
        H = self.mab0(self.inducing, X, mask)
        return self.mab1(X, H, None)


class PMA(Module):
    """Pooling by attention with one learned seed vector; output [B, 1, D]."""

    def __init__(self, dim: int, heads: int, rng, n_seeds: int = 1, **kw):
        super().__init__()
        bound = math.sqrt(6.0 / (n_seeds + dim))
        self.add_param("seed", _uniform(rng, bound, (n_seeds, dim)), decay=False)
        self.add_child("mab", MAB(dim, dim, dim, heads, rng, **kw))

    def __call__(self, X, mask=None) -> Tensor:
        return self.mab(self.seed, X, mask)


# ---------------------------------------------------------------------------
# Classifiers
# ---------------------------------------------------------------------------


class Classifier(Module):
    spec: ModelSpec

    @property
    def input_kind(self) -> str:
        return {"FST": "cloud", "TST3": "cloud", "FB": "vector", "CNN": "spectrogram"}[self.spec.kind]


class SetTransformerClassifier(Classifier):
    """ISAB stack, PMA pooling, linear head.  Used for both FST (2-D) and 3ST (3-D)."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        kw = dict(layer_norm=spec.layer_norm, scale_attention=spec.scale_attention, slope=spec.slope)
        dim_in = spec.d_in
        self.encoders = []
        for i in range(spec.n_isab):
            block = ISAB(dim_in, spec.hidden, spec.heads, spec.inducing, rng, **kw)
            self.encoders.append(self.add_child(f"isab{i}", block))
            dim_in = spec.hidden
        self.add_child("pool", PMA(spec.hidden, spec.heads, rng, **kw))
        self.add_child("head", Linear(spec.hidden, spec.n_classes, rng))

    def __call__(self, coords, mask: Optional[np.ndarray] = None) -> Tensor:
        if isinstance(coords, CloudBatch):
            coords, mask = coords.coords, coords.mask
        X = T.as_tensor(coords)
        if X.ndim != 3 or X.shape[-1] != self.spec.d_in:
            raise ShapeError(f"{self.spec.kind} expects [B, n, {self.spec.d_in}] points, got {X.shape}")
        if X.shape[1] == 0:
            raise EmptyCloudError("empty point cloud")
        if mask is not None and not np.asarray(mask).any(axis=1).all():
            raise EmptyCloudError("batch contains an empty point cloud")
        for block in self.encoders:
            X = block(X, mask)
        pooled = self.pool(X, mask)
        return self.head(T.reshape(pooled, (pooled.shape[0], self.spec.hidden)))


class FeedForwardClassifier(Classifier):
    """Fixed-length magnitude vector -> leaky-ReLU MLP -> logits, optional input dropout."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        sizes = [spec.fb_input, *spec.fb_hidden, spec.n_classes]
        self.layers = [self.add_child(f"fc{i}", Linear(a, b, rng)) for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
        self.dropout_rng = np.random.default_rng(spec.seed + 1)

    def __call__(self, x, mask=None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim == 1:
            x = T.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[1] != self.spec.fb_input:
            raise ShapeError(f"FB expects input vectors of length {self.spec.fb_input}, got shape {x.shape}")
        x = T.dropout(x, self.spec.fb_dropout, self.dropout_rng, self.training)
        for layer in self.layers[:-1]:
            x = T.leaky_relu(layer(x), self.spec.slope)
        return self.layers[-1](x)


class ConvClassifier(Classifier):
    """(10, 1) time convolution collapsing a 10-frame spectrogram, then a linear head."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        fan_in = spec.cnn_frames
        bound = 1.0 / math.sqrt(fan_in)
        self.add_param("kernels", _uniform(rng, bound, (spec.cnn_channels, 1, spec.cnn_frames, 1)))
        self.add_param("conv_bias", _uniform(rng, bound, (spec.cnn_channels,)), decay=False)
        self.add_child("head", Linear(spec.cnn_channels * spec.cnn_bins, spec.n_classes, rng))

    def __call__(self, x, mask=None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        s = self.spec
        if x.ndim != 3 or x.shape[1] != s.cnn_frames or x.shape[2] != s.cnn_bins:
            raise ShapeError(f"CNN expects [B, {s.cnn_frames}, {s.cnn_bins}] spectrograms, got {x.shape}")
        b = x.shape[0]
        h = T.conv_time(T.reshape(x, (b, 1, s.cnn_frames, s.cnn_bins)), self.kernels)
        h = h + T.reshape(self.conv_bias, (1, s.cnn_channels, 1, 1))
        h = T.leaky_relu(h, s.slope)
        return self.head(T.reshape(h, (b, s.cnn_channels * s.cnn_bins)))


def build_model(spec: ModelSpec) -> Classifier:
    if spec.kind in ("FST", "TST3"):
        return SetTransformerClassifier(spec)
    if spec.kind == "FB":
        return FeedForwardClassifier(spec)
    return ConvClassifier(spec)


# ---------------------------------------------------------------------------
# Single-input conveniences
# ---------------------------------------------------------------------------


def _cloud_logits(model: Classifier, cloud: PointCloud, kind: str) -> np.ndarray:
    if model.spec.kind != kind:
        raise ParameterError(f"expected a {kind} model, got {model.spec.kind}")
    if len(cloud) == 0:
        raise EmptyCloudError("empty point cloud")
    with T.no_grad():
        return model(cloud.points[None], None).data[0]


def fst_forward(cloud: PointCloud, model: Classifier) -> np.ndarray:
    return _cloud_logits(model, cloud, "FST")


def tst_forward(cloud: PointCloud, model: Classifier) -> np.ndarray:
    return _cloud_logits(model, cloud, "TST3")


def fb_forward(vec: np.ndarray, model: Classifier) -> np.ndarray:
    with T.no_grad():
        return model(np.asarray(vec, dtype=np.float64)[None]).data[0]


def cnn_forward(spec_input: np.ndarray, model: Classifier) -> np.ndarray:
    with T.no_grad():
        return model(np.asarray(spec_input, dtype=np.float64)[None]).data[0]


@contextlib.contextmanager
def recording_attention(model: SetTransformerClassifier):
    mab = model.pool.mab
    mab.record = True
    try:
        yield mab
    finally:
        mab.record = False


def attention_weights(model: SetTransformerClassifier, cloud: PointCloud) -> np.ndarray:
    """Per-point PMA attention, averaged over heads; sums to 1 over the cloud."""
    if len(cloud) == 0:
        raise EmptyCloudError("empty point cloud")
    if not model.spec.is_cloud_model:
        raise ParameterError("attention weights exist only for Set Transformer models")
    with recording_attention(model) as mab, T.no_grad():
        model(cloud.points[None], None)
        att = mab.last_attention  # [1, heads, 1, n]
    return att[0, :, 0, :].mean(axis=0)


def zero_out(vec: np.ndarray, keep_indices) -> np.ndarray:
    """Keep the listed entries, set every other entry to exactly 0."""
    vec = np.asarray(vec, dtype=np.float64)
    keep = np.asarray(keep_indices, dtype=np.int64).reshape(-1)
    if keep.size and (keep.min() < 0 or keep.max() >= vec.shape[-1]):
        raise ParameterError(f"keep indices out of range for length {vec.shape[-1]}")
    out = np.zeros_like(vec)
    out[..., keep] = vec[..., keep]
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Classifier, path, extra: Optional[dict] = None) -> None:
    """Single ``.npz`` file: named flat weight arrays plus a JSON header."""
    meta = {"format_version": CHECKPOINT_VERSION, "spec": model.spec.to_dict(), "extra": extra or {}}
    arrays = {name: p.data for name, p, _ in model.named_parameters()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[Classifier, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ParameterError(
                f"checkpoint format {meta.get('format_version')} unsupported (expected {CHECKPOINT_VERSION})"
            )
        model = build_model(ModelSpec.from_dict(meta["spec"]))
        model.load_state_dict({k: data[k] for k in data.files if k != "__meta__"})
    return model, meta.get("extra", {})


__all__ = [
    "ModelSpec", "PRESETS", "preset", "build_model", "MAB", "SAB", "ISAB", "PMA",
    "SetTransformerClassifier", "FeedForwardClassifier", "ConvClassifier",
    "fst_forward", "tst_forward", "fb_forward", "cnn_forward", "attention_weights",
    "pad_window_input", "zero_out", "save_checkpoint", "load_checkpoint", "batch",
]
