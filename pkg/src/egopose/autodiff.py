"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = cross_entropy(matmul(x, w), targets)
    tape.backward(loss)          # fills w.grad

Outside a tape every primitive is a plain numpy computation, which is how
inference runs. Gradients of leaf tensors accumulate into ``.grad`` (sum over
every use) until the caller resets them.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "output", "backward", "name")

    def __init__(self, inputs, output, backward, name):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.name = name


class Tape:
    """Ordered record of operations; recording order is a topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def clear(self) -> None:
        self.nodes.clear()

    def record(self, inputs, output, backward, name) -> None:
        self.nodes.append(_Node(inputs, output, backward, name))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(n.output) for n in self.nodes}
        if id(loss) not in produced:
            if loss.requires_grad:
                loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
                return
            raise ValueError("loss was not computed on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in produced:
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
                else:
                    t.grad = np.array(gi) if t.grad is None else t.grad + gi


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward, name: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{name} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].record(tuple(inputs), out, backward, name)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold batch dims into one GEMM instead of summing per-batch products
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim of {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(xhat * gain.data + bias.data, (a, gain, bias), backward, "layer_norm")


def softmax_lastdim(a: Tensor) -> Tensor:
    e = np.exp(a.data - a.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), backward, "softmax")


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    t = np.tanh(_GELU_K * (x + 0.044715 * (x * x * x)))

    def backward(g):
        dt = (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _make(0.5 * x * (1.0 + t), (a,), backward, "gelu")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def embedding_select(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding index out of range for table {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(table.data[idx], (table,), backward, "embedding_select")


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the second-to-last axis."""
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(base) or t.shape[:-2] != base[:-2] or t.shape[-1] != base[-1]:
            raise ShapeError(f"concat_rows: incompatible shapes {base} and {t.shape}")
    sizes = [t.shape[-2] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-2))

    return _make(np.concatenate([t.data for t in tensors], axis=-2), tuple(tensors), backward, "concat_rows")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[-2]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {a.shape}")

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[..., start:stop, :] = g
        return (ga,)

    return _make(a.data[..., start:stop, :].copy(), (a,), backward, "slice_rows")


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2 needs >= 2 dims, got {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose_last2")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "permute")


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),), "mean")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or not training."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout p must lie in [0, 1), got {p}")
    if p == 0 or not train:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over all leading positions."""
    tgt = np.asarray(target, dtype=np.int64)
    C = logits.shape[-1]
    if tgt.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {tgt.shape} do not match logits {logits.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= C):
        raise ShapeError(f"cross_entropy: target outside [0, {C})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsumexp
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    n = max(1, tgt.size)

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, tgt[..., None], np.take_along_axis(grad, tgt[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (g / n),)

    return _make(np.asarray(-picked.sum() / n), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- checking


def gradcheck(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` is called with ``x`` and must return a scalar; it may also read the
    tensors through a closure, since perturbations are written into ``x.data``
    in place. Error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        y = f(x)
    tape.backward(y)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    def value() -> float:
        v = f(x).data
        if v.size != 1:
            raise ShapeError(f"gradcheck needs a scalar function, got shape {v.shape}")
        v = float(v)
        if not math.isfinite(v):
            raise NumericError("gradcheck: function value is not finite")
        return v

    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.data.flat
        af = a.reshape(-1)
        for i in range(t.data.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            n = (fp - fm) / (2 * h)
            err = abs(af[i] - n) / max(1e-8, abs(af[i]) + abs(n))
            worst = max(worst, err)
    for t, s in zip(xs, saved):
        t.requires_grad = s
        t.grad = None
    return worst
