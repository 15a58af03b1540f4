"""Dense float64 arrays with tape-based reverse-mode differentiation.

Each op returns a new :class:`Tensor` holding a closure that pushes the
incoming gradient back into its inputs.  Shapes must match exactly; the only
implicit expansion allowed is adding a bias vector along the last axis.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (used for inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name", "id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every trainable leaf on the tape."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        tape = Tape.from_root(self)
        for node in tape.nodes:
            if node.backward_fn is not None:
                node.grad = np.zeros_like(node.data)
        if self.backward_fn is None:
            _accum(self, grad)
        else:
            self.grad = np.array(grad, dtype=np.float64)
        for node in reversed(tape.nodes):
            if node.backward_fn is not None:
                node.backward_fn(node.grad)

    # operator sugar for the common cases
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return hadamard(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Topologically ordered record of the ops that produced a root tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for p in node.parents:
                if p.id not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out.grad = None
    out.name = None
    out.op = op
    out.id = next(_ids)
    if out.requires_grad:
        out.parents = tuple(parents)
        out.backward_fn = backward
    else:
        out.parents = ()
        out.backward_fn = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), "add", backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` of shape ``x.shape[-1:]`` repeated over leading axes."""
    if b.shape != x.shape[-1:]:
        raise ShapeError(f"add_bias: bias shape {b.shape} does not match last axis of {x.shape}")

    def backward(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _make(x.data + b.data, (x, b), "add_bias", backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), "scale", lambda g: _accum(x, g * c))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("hadamard", a, b)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), "hadamard", backward)


def pairwise_hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of every row pair: ``out[..., i, j, :] = a[..., i, :] * b[..., j, :]``."""
    if a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"pairwise_hadamard: incompatible shapes {a.shape} and {b.shape}")
    ad = a.data[..., :, None, :]
    bd = b.data[..., None, :, :]

    def backward(g):
        if a.requires_grad:
            a.grad += (g * bd).sum(axis=-2)
        if b.requires_grad:
            b.grad += (g * ad).sum(axis=-3)

    return _make(ad * bd, (a, b), "pairwise_hadamard", backward)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), "relu", lambda g: _accum(x, g * pos))


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make(y, (x,), "sigmoid", lambda g: _accum(x, g * y * (1.0 - y)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), "tanh", lambda g: _accum(x, g * (1.0 - y * y)))


def mask_rows(x: Tensor, keep: np.ndarray) -> Tensor:
    """Zero every position along the leading axes where ``keep`` is False.

    ``keep`` has shape ``x.shape[:-1]`` and is a constant, not a tensor.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != x.shape[:-1]:
        raise ShapeError(f"mask_rows: mask shape {keep.shape} vs tensor {x.shape}")
    k = keep[..., None]
    return _make(np.where(k, x.data, 0.0), (x,), "mask_rows", lambda g: _accum(x, g * k))


# ---------------------------------------------------------------- reductions

def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    return _make(np.array(x.data.sum()), (x,), "sum",
                 lambda g: _accum(x, np.broadcast_to(g, x.shape)))


def max_over_axis(x: Tensor, axis: int, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Maximum along ``axis`` and the winning indices.

    ``mask`` (same shape as ``x``, True = eligible) excludes entries.  Ties
    go to the lowest index, and the gradient flows only to the winner.
    Slices with no eligible entry yield value 0 and index -1.
    """
    axis = _check_axis(axis, x.ndim)
    vals = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"max_over_axis: mask shape {mask.shape} vs tensor {x.shape}")
        vals = np.where(mask, vals, -np.inf)
    idx = np.argmax(vals, axis=axis)
    out = np.take_along_axis(vals, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    empty = ~np.isfinite(out) if mask is not None else None
    if empty is not None and empty.any():
        out = np.where(empty, 0.0, out)
        idx = np.where(empty, -1, idx)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        safe = np.expand_dims(np.maximum(idx, 0), axis)
        gg = g if empty is None else np.where(empty, 0.0, g)
        np.put_along_axis(gx, safe, np.expand_dims(gg, axis), axis=axis)
        x.grad += gx

    return _make(out, (x,), "max_over_axis", backward), idx


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), "transpose",
                 lambda g: _accum(x, g.transpose(inverse)))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    axis = _check_axis(axis, xs[0].ndim)
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(xs, np.split(g, splits, axis=axis)):
            _accum(t, part)

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), "concat", backward)


def embedding(ids: np.ndarray, table: Tensor) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of ids."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError("embedding ids must be integers")

    def backward(g):
        if table.requires_grad:
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))

    return _make(table.data[ids], (table,), "embedding", backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading (batch) axes must be identical."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a.grad += g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            b.grad += np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``[*, d_in]`` and ``w`` of shape ``[d_in, d_out]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x.grad += g @ w.data.T
        g2 = g.reshape(-1, w.shape[1])
        if w.requires_grad:
            w.grad += x.data.reshape(-1, w.shape[0]).T @ g2
        if b is not None and b.requires_grad:
            b.grad += g2.sum(axis=0)

    return _make(out, parents, "linear", backward)


# ---------------------------------------------------------------- normalisers

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_last(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    With ``mask`` (same shape, True = keep) excluded entries get probability
    zero; a slice with every entry excluded is all zeros.
    """
    if mask is None:
        y = _softmax(x.data)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax_last: mask shape {mask.shape} vs tensor {x.shape}")
        z = np.where(mask, x.data, -np.inf)
        zmax = z.max(axis=-1, keepdims=True)
        zmax = np.where(np.isfinite(zmax), zmax, 0.0)
        e = np.where(mask, np.exp(z - zmax), 0.0)
        s = e.sum(axis=-1, keepdims=True)
        y = e / np.where(s > 0, s, 1.0)

    def backward(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), "softmax", backward)


def log_softmax_last(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        _accum(x, g - p * g.sum(axis=-1, keepdims=True))

    return _make(y, (x,), "log_softmax", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each position over the last axis, then apply ``gain`` and ``bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape}/bias {bias.shape} vs last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            gain.grad += (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            bias.grad += g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gain.data
            x.grad += inv * (gh - gh.mean(axis=-1, keepdims=True)
                             - xhat * (gh * xhat).mean(axis=-1, keepdims=True))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", backward)


# ---------------------------------------------------------------- losses

def cross_entropy_masked(logits: Tensor, gold: np.ndarray, mask: np.ndarray) -> tuple[Tensor, int]:
    """Summed negative log-likelihood of ``gold`` over the selected cells.

    ``logits`` has shape ``[*cells, C]``, ``gold`` integer codes of shape
    ``cells``. ``mask`` is boolean over a prefix of ``cells`` (for example
    the ``[B, n, n]`` token-pair grid of a ``[B, n, n, R]`` cell array) and
    is repeated over the remaining axes.  Returns the loss and the number of
    terms it sums.
    """
    gold = np.asarray(gold)
    cells = logits.shape[:-1]
    num_classes = logits.shape[-1]
    if gold.shape != cells:
        raise ShapeError(f"cross_entropy_masked: gold {gold.shape} vs logits {logits.shape}")
    if gold.size and (gold.min() < 0 or gold.max() >= num_classes):
        raise ValueError(f"gold label codes must lie in [0, {num_classes})")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != cells[:mask.ndim]:
        raise ShapeError(f"cross_entropy_masked: mask {mask.shape} vs cells {cells}")
    full = np.broadcast_to(mask.reshape(mask.shape + (1,) * (len(cells) - mask.ndim)), cells)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, gold[..., None], axis=-1)[..., 0]
    loss = -(picked * full).sum()
    count = int(full.sum())

    def backward(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            np.put_along_axis(grad, gold[..., None],
                              np.take_along_axis(grad, gold[..., None], axis=-1) - 1.0, axis=-1)
            logits.grad += grad * full[..., None] * g

    return _make(np.array(loss), (logits,), "cross_entropy", backward), count


__all__ = [
    "ShapeError", "Tensor", "Tape", "no_grad", "is_grad_enabled", "tensor",
    "add", "add_bias", "scale", "hadamard", "pairwise_hadamard", "relu", "sigmoid", "tanh",
    "mask_rows", "total", "max_over_axis", "reshape", "transpose", "concat", "embedding",
    "matmul", "linear", "softmax_last", "log_softmax_last", "layer_norm", "cross_entropy_masked",
]
