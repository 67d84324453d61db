"""Dense 2-D float64 tensors with reverse-mode differentiation.

Every value is a rows x cols matrix. Operations record their inputs on the
output tensor, so the compute graph of one forward pass lives in the tensor
parent links; ``Tensor.backward`` replays it once in reverse topological
order. Batching is "a sequence of matrices" by construction: there are no
rank-3 arrays and no broadcasting beyond the row-vector bias of ``add_row``
and the per-row scalar of ``scale_rows``.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

_grad_enabled = True
_default_attention_scale = False


def set_attention_scaling(enabled: bool) -> None:
    """Module-wide default for the optional 1/sqrt(D) attention-logit
    scaling. Off by default: attention here is plain softmax(QK^T)V."""
    global _default_attention_scale
    _default_attention_scale = bool(enabled)


@contextmanager
def no_grad():
    """Suspend graph construction (inference paths); forward values are
    unchanged, but outputs carry no parents and backward is impossible."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A rows x cols matrix of 64-bit reals, optionally tracking gradients.

    ``grad`` is allocated lazily and accumulates across backward calls until
    the owner resets it; repeated ``backward`` runs therefore add up.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"tensors are rank-2; got rank {arr.ndim}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it."""
        if self.shape != (1, 1):
            raise ValueError(f"backward() needs a 1x1 loss, got {self.shape}")
        self._accum(np.ones((1, 1)))
        for node in reversed(topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def topo_order(root: Tensor) -> list[Tensor]:
    """Topological order of the compute graph below ``root`` (inputs first).

    Iterative so deep decode chains cannot hit the recursion limit. Each node
    appears exactly once; the graph is acyclic because ops only ever link new
    outputs to existing tensors.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _node(data: np.ndarray, parents: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x._accum(g * c)

    return _node(x.data * c, (x,), backward)


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """x[n,d] + b[1,d], the one sanctioned row-vector broadcast."""
    if b.shape != (1, x.shape[1]):
        raise ValueError(f"add_row: bias {b.shape} does not fit {x.shape}")

    def backward(g):
        if x.requires_grad:
            x._accum(g)
        if b.requires_grad:
            b._accum(g.sum(axis=0, keepdims=True))

    return _node(x.data + b.data, (x, b), backward)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of x[n,d] by the scalar s[i,0]."""
    if s.shape != (x.shape[0], 1):
        raise ValueError(f"scale_rows: scales {s.shape} do not fit {x.shape}")

    def backward(g):
        if x.requires_grad:
            x._accum(g * s.data)
        if s.requires_grad:
            s._accum((g * x.data).sum(axis=1, keepdims=True))

    return _node(x.data * s.data, (x, s), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x._accum(g.T)

    return _node(x.data.T.copy(), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x._accum(g * (1.0 - out_data * out_data))

    return _node(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x._accum(g / x.data)

    return _node(np.log(x.data), (x,), backward)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    mask = x.data > floor

    def backward(g):
        if x.requires_grad:
            x._accum(g * mask)

    return _node(np.maximum(x.data, floor), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x._accum(np.full_like(x.data, g[0, 0]))

    return _node(np.array([[x.data.sum()]]), (x,), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Average the n rows of x[n,d] into a 1 x d vector."""
    n = x.shape[0]
    if n == 0:
        raise ValueError("mean_rows: empty tensor")

    def backward(g):
        if x.requires_grad:
            x._accum(np.repeat(g / n, n, axis=0))

    return _node(x.data.mean(axis=0, keepdims=True), (x,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_rows: no parts")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ValueError("concat_rows: column counts differ")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accum(g[lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=0),
                 tuple(parts), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= x.shape[0]):
        raise ValueError(f"slice_rows: [{start}:{stop}] outside {x.shape}")

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            x._accum(gx)

    return _node(x.data[start:stop].copy(), (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= x.shape[1]):
        raise ValueError(f"slice_cols: [{start}:{stop}] outside {x.shape}")

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            x._accum(gx)

    return _node(x.data[:, start:stop].copy(), (x,), backward)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of x by index (embedding lookup); duplicates allowed."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError("take_rows: index out of range")

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x._accum(gx)

    return _node(x.data[idx].copy() if idx.size else
                 np.zeros((0, x.shape[1])), (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Exp-normalize each row, with max subtraction for overflow safety."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=1, keepdims=True)
            x._accum((g - inner) * out_data)

    return _node(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization (variance + eps in the denominator), then
    elementwise gain and bias (both 1 x d, broadcast over rows)."""
    n, d = x.shape
    if d < 2:
        raise ValueError("layer_norm: needs at least 2 columns")
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ValueError("layer_norm: gain/bias must be 1 x d")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            bias._accum(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gh = g * gain.data
            term = gh - gh.mean(axis=1, keepdims=True) \
                - xhat * (gh * xhat).mean(axis=1, keepdims=True)
            x._accum(term * inv)

    return _node(xhat * gain.data + bias.data, (x, gain, bias), backward)


# ---------------------------------------------------------------- composites

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[n,d_in] @ w[d_in,d_out] + b[1,d_out]."""
    return add_row(matmul(x, w), b)


def mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer perceptron: linear, tanh, linear (shape-preserving when
    w2 maps back to the input width)."""
    return linear(tanh(linear(x, w1, b1)), w2, b2)


def cross_attention(q_src: Tensor, kv_src: Tensor, w_q: Tensor, w_k: Tensor,
                    w_v: Tensor, mask: np.ndarray | None = None,
                    scale: bool | None = None) -> tuple[Tensor, Tensor]:
    """softmax((q_src w_q)(kv_src w_k)^T) (kv_src w_v).

    Returns (output, attention weights) so callers can inspect where each
    query row looked. ``mask`` is an additive constant (0 where allowed,
    a large negative number where not) applied to the logits. Scaling by
    1/sqrt(D) follows the module default (off) unless ``scale`` is given.
    """
    if kv_src.shape[0] < 1:
        raise ValueError("cross_attention: needs at least one key/value row")
    if scale is None:
        scale = _default_attention_scale
    q = matmul(q_src, w_q)
    k = matmul(kv_src, w_k)
    v = matmul(kv_src, w_v)
    logits = matmul(q, transpose(k))
    if scale:
        logits = mul_scalar(logits, 1.0 / np.sqrt(q.shape[1]))
    if mask is not None:
        logits = add(logits, Tensor(mask))
    weights = softmax_rows(logits)
    return matmul(weights, v), weights


def causal_mask(n: int) -> np.ndarray:
    """Additive mask blocking attention to later positions. -1e9 underflows
    to an exactly-zero attention weight after max-subtracted softmax, so
    causality is bit-exact."""
    return np.triu(np.full((n, n), -1e9), k=1)


def frobenius_distance_sq(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared elementwise differences, as a scalar graph node."""
    _check_same_shape(a, b, "frobenius_distance_sq")
    d = sub(a, b)
    return sum_all(mul(d, d))


def cross_entropy_loss(probs: Sequence[Tensor], targets: Sequence[int]) -> Tensor:
    """Mean negative log-probability of each target token.

    ``probs`` holds one 1 x V distribution per step. A zero probability at a
    target is clamped at 1e-12 (with a warning) so the loss stays finite.
    """
    probs = list(probs)
    if len(probs) != len(targets) or not probs:
        raise ValueError("cross_entropy_loss: need equal, nonzero counts")
    terms = []
    for step, (p, t) in enumerate(zip(probs, targets)):
        if p.shape[0] != 1:
            raise ValueError("cross_entropy_loss: each step is one 1 x V row")
        if not (0 <= t < p.shape[1]):
            raise ValueError(f"cross_entropy_loss: target {t} out of range "
                             f"for V={p.shape[1]} at step {step}")
        pt = slice_cols(p, t, t + 1)
        if pt.data[0, 0] < LOG_FLOOR:
            logger.warning("cross_entropy_loss: clamping zero probability at "
                           "step %d (target %d)", step, t)
        terms.append(log(clamp_min(pt, LOG_FLOOR)))
    total = sum_all(concat_rows(terms))
    return mul_scalar(total, -1.0 / len(targets))
