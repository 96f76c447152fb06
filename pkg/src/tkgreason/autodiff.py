"""Tape-based reverse-mode differentiation over float64 numpy arrays, plus Adam.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient. Outside a tape everything runs as plain
numpy with no bookkeeping, which is what evaluation uses.

Subgradient conventions: ``relu'(0) = 0`` and ``d|x|/dx = 0`` at ``x = 0``.
"""

from __future__ import annotations

import numpy as np

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Tape:
    """Ordered record of operations; recording order is a topological order."""

    def __init__(self):
        self.nodes: list = []  # (output, parents, backward_fn)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        for out, _, _ in self.nodes:
            out._node = None
        self.nodes.clear()


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape = _TAPES[-1]
        out._node = tape
        tape.nodes.append((out, parents, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _record(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    """Element-wise product (numpy broadcasting)."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(a.data * b.data, (a, b), back)


def scalar_mul(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _record(a.data * c, (a,), lambda g: _accum(a, g * c))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(a.data @ b.data, (a, b), back)


def concat(xs, axis: int = -1) -> Tensor:
    xs = [_wrap(x) for x in xs]
    data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accum(x, part)

    return _record(data, tuple(xs), back)


def slice_last(x, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    x = _wrap(x)

    def back(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        _accum(x, full)

    return _record(x.data[..., start:stop], (x,), back)


def stack(xs) -> Tensor:
    xs = [_wrap(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ValueError(f"stack: shape mismatch {sorted(shapes)}")

    def back(g):
        for i, x in enumerate(xs):
            _accum(x, g[i])

    return _record(np.stack([x.data for x in xs]), tuple(xs), back)


def take_rows(table, idx) -> Tensor:
    """Gather ``table[idx]``; gradient scatters back with accumulation."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _record(table.data[idx], (table,), back)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    return _record(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(x.shape)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    y = _sigmoid(x.data)
    return _record(y, (x,), lambda g: _accum(x, g * y * (1.0 - y)))


def log_sigmoid(x) -> Tensor:
    """``log(sigmoid(x))`` computed without overflow."""
    x = _wrap(x)
    z = x.data
    y = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))
    return _record(y, (x,), lambda g: _accum(x, g * _sigmoid(-z)))


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: _accum(x, g * (1.0 - y * y)))


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: _accum(x, g * mask))


def softmax(x, axis: int = 0) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(y, (x,), back)


def softmax_over_inputs(xs) -> Tensor:
    """Per-component softmax across a list of same-shaped tensors; returns them stacked."""
    return softmax(stack(xs), axis=0)


def abs_sum(x, axis: int = -1) -> Tensor:
    """L1 norm along ``axis``."""
    x = _wrap(x)
    sign = np.sign(x.data)

    def back(g):
        _accum(x, np.expand_dims(g, axis) * sign)

    return _record(np.abs(x.data).sum(axis=axis), (x,), back)


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _wrap(x)

    def back(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _record(x.data.sum(axis=axis), (x,), back)


def mean(x, axis=None) -> Tensor:
    x = _wrap(x)
    n = x.data.size if axis is None else x.shape[axis]
    return scalar_mul(sum(x, axis), 1.0 / n)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``, then clear its tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._node
    if tape is None:
        raise RuntimeError("loss was not recorded on a tape (run the forward pass inside `with Tape():`)")
    loss.grad = np.ones_like(loss.data)
    for out, parents, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)
            out.grad = None
    tape.clear()


class Adam:
    """Adam with bias correction over a dict of named parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {k!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[k].data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
