"""Dense arrays with tape-based reverse-mode differentiation.

Every primitive the models need lives here: batched matmul, elementwise
ops, masked softmax, time convolution, cross-entropy.  Each op records its
parents and an adjoint closure; :func:`backward` orders the recorded graph
into a :class:`Tape` and replays adjoints in reverse.  A tape can be
replayed once; a second backward on the same graph raises
:class:`GradientError` instead of silently accumulating.

Shape bookkeeping for multiply-accumulate counting is also done here, so
op counts come from exactly the shapes that were executed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import EmptyCloudError, GradientError, ParameterError, ShapeError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_COUNTER: Optional["OpCounter"] = None

LEAKY_SLOPE = 0.01


def set_default_dtype(dtype) -> None:
    """Switch new tensors to ``float32`` or back to ``float64``."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ParameterError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class OpCounter:
    """Multiply-accumulate tally filled in by ops while active."""

    def __init__(self):
        self.forward = 0
        self.backward = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, macs: int, backward: bool = False) -> None:
        macs = int(macs)
        if backward:
            self.backward += macs
        else:
            self.forward += macs
            self.by_op[op] = self.by_op.get(op, 0) + macs

    @property
    def total(self) -> int:
        return self.forward + self.backward


@contextlib.contextmanager
def count_ops():
    """Collect MAC counts for everything executed inside the block."""
    global _COUNTER
    previous = _COUNTER
    counter = OpCounter()
    _COUNTER = counter
    try:
        yield counter
    finally:
        _COUNTER = previous


def _tally(op, macs, backward=False):
    if _COUNTER is not None:
        _COUNTER.add(op, macs, backward)


class Tensor:
    """A real array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operators -----------------------------------------------------
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
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], adjoint: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = adjoint
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Tape and backward
# ---------------------------------------------------------------------------


class Tape:
    """Recorded operations reachable from a scalar, in topological order."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        self.consumed = False
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    def replay(self) -> None:
        if self.consumed:
            raise GradientError("tape already replayed")
        root = self.root
        grads = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g
            if node._backward is None:
                continue
            cost = getattr(node._backward, "macs", 0)
            if cost:
                _tally("backward", cost, backward=True)
            pgrads = node._backward(g)
            for parent, pg in zip(node._parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in self.nodes:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True
        self.consumed = True


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every tracked tensor that ``loss`` depends on."""
    if loss._consumed:
        raise GradientError("backward already ran on this graph; rebuild it with a new forward pass")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor with requires_grad=True")
    tape = Tape(loss)
    for node in tape.nodes:
        if node.is_leaf and node.grad is not None:
            raise GradientError(
                f"{node!r} already holds a gradient; call zero_grad() before another backward pass"
            )
    tape.replay()
    return tape


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    _tally("elementwise", out.size)
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    _tally("elementwise", out.size)
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    _tally("elementwise", out.size)
    ad, bd = a.data, b.data

    def adjoint(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(out, (a, b), adjoint)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    out = x.data * c
    _tally("elementwise", out.size)
    return _make(out, (x,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting on the rest)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    macs = int(np.prod(out.shape, dtype=np.int64)) * ad.shape[-1]
    _tally("matmul", macs)

    def adjoint(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    adjoint.macs = macs * (int(a.requires_grad) + int(b.requires_grad))
    return _make(out, (a, b), adjoint)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    _tally("reduce", x.size)
    shape = x.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (x,), adjoint)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis, keepdims), 1.0 / count)


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    pos = xd > 0
    out = np.where(pos, xd, xd * slope)
    _tally("elementwise", out.size)
    return _make(out, (x,), lambda g: (np.where(pos, g, g * slope),))


def relu(x) -> Tensor:
    return leaky_relu(x, 0.0)


def dropout(x, p: float, rng: Optional[np.random.Generator] = None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    _tally("elementwise", x.size)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def masked_softmax(x, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` is boolean and broadcastable to ``x``; ``False`` entries get
    weight exactly 0.  A row with no valid entry means an empty point set
    reached attention and raises :class:`EmptyCloudError`.
    """
    x = as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            full = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise ShapeError(f"mask shape {mask.shape} does not broadcast to {x.shape}") from None
        if not full.any(axis=-1).all():
            raise EmptyCloudError("softmax row with every entry masked (empty point cloud)")
    y = kernels.softmax_forward(x.data, mask)
    _tally("softmax", y.size)
    return _make(y, (x,), lambda g: (kernels.softmax_backward(y, g),))


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine part)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]
    _tally("elementwise", 3 * x.size)

    def adjoint(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = g * xhat
        return (inv * (g - gm - xhat * gx.sum(axis=-1, keepdims=True) / n),)

    return _make(xhat, (x,), adjoint)


def conv_time(x, kernels_w) -> Tensor:
    """Valid correlation along the time axis, unit stride, kernel width 1 in frequency.

    ``x``: [C_in, T, F] or [B, C_in, T, F]; ``kernels_w``: [C_out, C_in, K, 1] or
    [C_out, C_in, K].  Output time length is T - K + 1.
    """
    x, w = as_tensor(x), as_tensor(kernels_w)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    wd = w.data
    if wd.ndim == 4:
        if wd.shape[3] != 1:
            raise ShapeError(f"kernel must have width 1 along frequency, got {wd.shape}")
        wd = wd[..., 0]
    if xd.ndim != 4 or wd.ndim != 3:
        raise ShapeError(f"conv_time expects [B,C,T,F] input and [O,C,K(,1)] kernels, got {x.shape}, {w.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"conv_time channel mismatch: input {x.shape}, kernels {w.shape}")
    k = wd.shape[2]
    if xd.shape[2] < k:
        raise ShapeError(f"input too short: {xd.shape[2]} frames for a kernel of {k}")
    out = kernels.conv_time_forward(xd, wd)
    macs = out.size * wd.shape[1] * k
    _tally("conv", macs)
    wshape = w.shape

    def adjoint(g):
        g4 = g[None] if squeeze else g
        gx, gw = kernels.conv_time_backward(xd, wd, g4)
        return (gx[0] if squeeze else gx), gw.reshape(wshape)

    adjoint.macs = 2 * macs
    return _make(out[0] if squeeze else out, (x, w), adjoint)


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    _tally("softmax", out.size)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` [B, C]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects [B, C] logits and [B] labels, got {logits.shape}, {labels.shape}")
    b = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = -logp[np.arange(b), labels].mean()
    _tally("softmax", logits.size)

    def adjoint(g):
        d = np.exp(logp)
        d[np.arange(b), labels] -= 1.0
        return (d * (g / b),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), adjoint)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``fn`` must rebuild the scalar from ``params`` deterministically on each
    call.  The error per entry is |analytic - cd| / max(|analytic|, |cd|, 1e-12).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ParameterError("grad_check needs contiguous parameter arrays")
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(fn().data)
                flat[i] = orig - eps
                down = float(fn().data)
                flat[i] = orig
                cd = (up - down) / (2.0 * eps)
                a = float(gflat[i])
                err = abs(a - cd) / max(abs(a), abs(cd), 1e-12)
                if err > worst:
                    worst = err
    return worst


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=_DEFAULT_DTYPE), requires_grad=True, name=name)
