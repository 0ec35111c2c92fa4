"""Dense tensors with reverse-mode autodiff.

Just enough ops to train a tiny transformer: matmul, elementwise add/mul,
embedding gather, layer norm, GELU, row softmax, and a weighted
cross-entropy on logits, plus the movement ops (reshape/transpose) the
attention layout needs. Arrays are row-major numpy, float64 for
gradient-check builds and float32 for training builds; the dtype of the
parameters drives the dtype of the whole graph.

Graphs are recorded via parent links and per-node backward closures, and
replayed in reverse topological order by ``backward``. Closures receive the
output gradient as an argument (no self-references, so finished graphs are
freed by refcounting), and intermediate gradients are dropped as soon as
their node has propagated. Single-threaded per graph; distinct graphs are
independent.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ShapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / decoding)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy array plus an optional grad and a recorded backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: tuple = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        nm = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{nm})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)  # owned copy
        else:
            self.grad += g

    def backward(self):
        """Populate .grad on every tracked tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            bw = node._backward
            if bw is None:
                continue
            bw(node.grad)
            # interior node: release its grad and graph links right away
            node._backward = None
            node._parents = ()
            node.grad = None

    # -- operator sugar --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self), -1.0))

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mul(sum_all(self), 1.0 / self.data.size)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and not isinstance(x, np.ndarray):
        return Tensor(np.asarray(x, dtype=like.data.dtype))
    return Tensor(x)


def _finish(out: Tensor, parents: tuple, bw) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bw
    return out


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # undo numpy broadcasting: sum the gradient back to the operand's shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    out = Tensor(data)

    def _bw(grad):
        if a.requires_grad:
            a._accumulate(_reduce_to(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(grad, b.data.shape))

    return _finish(out, (a, b), _bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    out = Tensor(data)

    def _bw(grad):
        if a.requires_grad:
            a._accumulate(_reduce_to(grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(grad * a.data, b.data.shape))

    return _finish(out, (a, b), _bw)


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data ** exponent)

    def _bw(grad):
        if a.requires_grad:
            a._accumulate(grad * exponent * a.data ** (exponent - 1))

    return _finish(out, (a,), _bw)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.asarray(a.data.sum(), dtype=a.data.dtype))

    def _bw(grad):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(grad, a.data.shape))

    return _finish(out, (a,), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; accepts stacked (batched) operands on either side."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul requires ndim >= 2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} incompatible")
    out = Tensor(np.matmul(a.data, b.data))

    def _bw(grad):
        if a.requires_grad:
            ga = np.matmul(grad, b.data.swapaxes(-1, -2))
            a._accumulate(_reduce_to(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), grad)
            b._accumulate(_reduce_to(gb, b.data.shape))

    return _finish(out, (a, b), _bw)


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` (V, D) at integer ``ids`` (any shape)."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.data.shape[0]):
        raise ShapeError(
            f"embedding: id out of range for table with {weight.data.shape[0]} rows"
        )
    out = Tensor(weight.data[ids])

    def _bw(grad):
        if weight.requires_grad:
            g = np.zeros_like(weight.data)
            np.add.at(g, ids, grad)
            weight._accumulate(g)

    return _finish(out, (weight,), _bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def _bw(grad):
        if a.requires_grad:
            a._accumulate(grad.reshape(a.data.shape))

    return _finish(out, (a,), _bw)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inv = tuple(np.argsort(axes))

    def _bw(grad):
        if a.requires_grad:
            a._accumulate(grad.transpose(inv))

    return _finish(out, (a,), _bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain/bias {gain.data.shape}/{bias.data.shape} "
            f"do not match last axis of {x.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(xhat * gain.data + bias.data)

    def _bw(grad):
        if gain.requires_grad:
            gain._accumulate((grad * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(grad.reshape(-1, xhat.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = grad * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (dxhat - m1 - xhat * m2))

    return _finish(out, (x, gain, bias), _bw)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (the backward matches this exact forward)."""
    x = _as_tensor(x)
    d = x.data
    x2 = d * d
    th = np.tanh(_GELU_C * (d + _GELU_A * x2 * d))
    out = Tensor(0.5 * d * (1.0 + th))

    def _bw(grad):
        if x.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
            slope = 0.5 * (1.0 + th) + 0.5 * d * (1.0 - th * th) * du
            x._accumulate(grad * slope)

    return _finish(out, (x,), _bw)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis, max-shifted for stability."""
    x = _as_tensor(x)
    p = softmax_np(x.data)
    out = Tensor(p)

    def _bw(grad):
        if x.requires_grad:
            inner = (grad * p).sum(axis=-1, keepdims=True)
            x._accumulate(p * (grad - inner))

    return _finish(out, (x,), _bw)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    """Graph-free row softmax on a raw array (shared by decode paths)."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def masked_cross_entropy(logits: Tensor, targets, weights) -> Tensor:
    """Weighted sum of per-position cross-entropies: sum_i w_i * (-log p_i[y_i]).

    ``targets`` holds integer ids with shape equal to logits.shape[:-1];
    ``weights`` is a constant float array of the same shape (zeros drop
    positions from the loss and from the gradient). Returns a scalar.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.data.dtype)
    if targets.shape != logits.data.shape[:-1] or weights.shape != targets.shape:
        raise ShapeError(
            f"cross_entropy: logits {logits.data.shape}, targets {targets.shape}, "
            f"weights {weights.shape} are inconsistent"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= logits.data.shape[-1]):
        raise ShapeError(
            f"cross_entropy: target id out of range for vocab {logits.data.shape[-1]}"
        )
    ls = log_softmax_np(logits.data)
    nll = -np.take_along_axis(ls, targets[..., None], axis=-1)[..., 0]
    out = Tensor(np.asarray((weights * nll).sum(), dtype=logits.data.dtype))

    def _bw(grad):
        if logits.requires_grad:
            g = np.exp(ls) * weights[..., None]
            flat = g.reshape(-1, g.shape[-1])
            flat[np.arange(flat.shape[0]), targets.reshape(-1)] -= weights.reshape(-1)
            logits._accumulate(grad * g)

    return _finish(out, (logits,), _bw)


def per_position_nll(logits_data: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Graph-free per-position -log p[target], float64."""
    ls = log_softmax_np(logits_data.astype(np.float64))
    return -np.take_along_axis(ls, np.asarray(targets)[..., None], axis=-1)[..., 0]


def grad_check(function: Callable[[], Tensor], params: Iterable[Tensor],
               step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``function`` recomputes the scalar loss from the current values of
    ``params``. Relative error per coordinate is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12); NaN on either
    side makes the check fail (returns inf).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = function()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(function().data)
                flat[i] = orig - step
                down = float(function().data)
                flat[i] = orig
                numeric = (up - down) / (2.0 * step)
                ai = float(aflat[i])
                if math.isnan(numeric) or math.isnan(ai):
                    return math.inf
                err = abs(ai - numeric) / (abs(ai) + abs(numeric) + 1e-12)
                if err > worst:
                    worst = err
    return worst
