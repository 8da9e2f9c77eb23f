"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` only when one is
open and some input requires a gradient; outside a tape they are plain
numpy computations (used for inference).
"""

from __future__ import annotations

import math

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def zero_grad(self):
        self.grad = None


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(v)


class Tape:
    """Append-only record of operations for one forward/backward step."""

    _stack: list = []

    def __init__(self):
        self.nodes: list = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def clear(self):
        self.nodes = []


def active_tape():
    return Tape._stack[-1] if Tape._stack else None


def _record(inputs, outputs, backward_fn):
    """Mark outputs as differentiable and append the node if a tape is recording."""
    tape = active_tape()
    if tape is None or not any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        return
    for o in outputs:
        o.requires_grad = True
    tape.nodes.append((outputs, backward_fn))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _acc(t, g):
    if not isinstance(t, Tensor) or not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d loss / d t into ``t.grad`` for every recorded tensor, then clear the tape."""
    tape = tape or active_tape()
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if tape is None:
        raise RuntimeError("no tape recorded this graph")
    loss.grad = np.ones_like(loss.data)
    for outputs, fn in reversed(tape.nodes):
        grads = [o.grad for o in outputs]
        if all(g is None for g in grads):
            continue
        fn(*[np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, grads)])
    tape.clear()


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    _record((a, b), (out,), bw)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    _record((a, b), (out,), bw)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def bw(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    _record((a, b), (out,), bw)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    _record((a,), (out,), lambda g: _acc(a, g * s))
    return out


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data + s)
    _record((a,), (out,), lambda g: _acc(a, g))
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bw(g):
        if a.requires_grad:
            _acc(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _acc(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    _record((a, b), (out,), bw)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    _record((a,), (out,), lambda g: _acc(a, g * out.data))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    _record((a,), (out,), lambda g: _acc(a, g / a.data))
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    _record((a,), (out,), lambda g: _acc(a, g * (1.0 - out.data ** 2)))
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(_sigmoid(a.data))
    _record((a,), (out,), lambda g: _acc(a, g * out.data * (1.0 - out.data)))
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(a.data * mask)
    _record((a,), (out,), lambda g: _acc(a, g * mask))
    return out


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = Tensor(a.data.sum(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))

    _record((a,), (out,), bw)
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    _record((a,), (out,), lambda g: _acc(a, g.reshape(a.shape)))
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = np.argsort(axes)
    out = Tensor(np.transpose(a.data, axes))
    _record((a,), (out,), lambda g: _acc(a, np.transpose(g, inv)))
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeMismatch(f"concat shapes {[t.shape for t in tensors]} on axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                _acc(t, g[tuple(idx)])

    _record(tensors, (out,), bw)
    return out


def split(a: Tensor, axis: int, parts: int) -> list:
    ax = axis % a.ndim
    if a.shape[ax] % parts:
        raise ShapeMismatch(f"cannot split axis of size {a.shape[ax]} into {parts}")
    pieces = np.split(a.data, parts, axis=ax)
    outs = tuple(Tensor(p) for p in pieces)
    _record((a,), outs, lambda *gs: _acc(a, np.concatenate(gs, axis=ax)))
    return list(outs)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _acc(t, np.take(g, i, axis=axis))

    _record(tensors, (out,), bw)
    return out


def unstack(a: Tensor, axis: int = 0) -> list:
    """Split along ``axis`` into tensors with that axis removed."""
    ax = axis % a.ndim
    outs = tuple(Tensor(np.take(a.data, i, axis=ax)) for i in range(a.shape[ax]))
    _record((a,), outs, lambda *gs: _acc(a, np.stack(gs, axis=ax)))
    return list(outs)


def where(mask, a, b) -> Tensor:
    """Elementwise select with a constant boolean ``mask``: ``a`` where True, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data))

    def bw(g):
        _acc(a, np.where(mask, g, 0.0))
        _acc(b, np.where(mask, 0.0, g))

    _record((a, b), (out,), bw)
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        _acc(table, gt)

    _record((table,), (out,), bw)
    return out


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = Tensor(np.where(mask, value, a.data))
    _record((a,), (out,), lambda g: _acc(a, np.where(mask, 0.0, g)))
    return out


# ---------------------------------------------------------------------------
# normalization and probability


def softmax_array(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    y = softmax_array(a.data, axis)
    out = Tensor(y)

    def bw(g):
        _acc(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    _record((a,), (out,), bw)
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = Tensor(z - lse)

    def bw(g):
        _acc(a, g - np.exp(out.data) * g.sum(axis=axis, keepdims=True))

    _record((a,), (out,), bw)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def bw(g):
        _acc(gamma, g * xhat)
        _acc(beta, g)
        if x.requires_grad:
            gx = g * gamma.data
            d = x.shape[-1]
            _acc(x, inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True)))

    _record((x, gamma, beta), (out,), bw)
    return out


class DropoutKey:
    """Counter-based dropout masks keyed by (seed, step, call index)."""

    def __init__(self, seed: int, step: int):
        self.seed, self.step, self.counter = seed, step, 0

    def mask(self, shape, rate):
        rng = np.random.default_rng([self.seed, self.step, self.counter])
        self.counter += 1
        return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(a: Tensor, rate: float, train: bool, key: DropoutKey | None = None) -> Tensor:
    if not train or rate <= 0.0:
        return a
    if key is None:
        raise ValueError("dropout in training mode needs a DropoutKey")
    m = key.mask(a.shape, rate)
    out = Tensor(a.data * m)
    _record((a,), (out,), lambda g: _acc(a, g * m))
    return out


def softmax_cross_entropy(logits: Tensor, targets, count: float | None = None) -> Tensor:
    """Mean softmax cross-entropy ``-(1/m) sum_ij t_ij log y_ij`` over rows of ``logits``.

    ``targets`` is a one-hot array of the same shape; rows of zeros (padding)
    contribute nothing.  ``count`` overrides the divisor m (defaults to the
    number of rows).
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {t.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logy = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    m = float(count) if count is not None else float(np.prod(logits.shape[:-1]))
    out = Tensor(-(t * logy).sum() / m)

    def bw(g):
        y = np.exp(logy)
        rows = t.sum(axis=-1, keepdims=True)
        _acc(logits, g * (y * rows - t) / m)

    _record((logits,), (out,), bw)
    return out


def one_hot(ids, n: int, mask=None) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros(ids.shape + (n,), dtype=np.float64)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    if mask is not None:
        out *= np.asarray(mask, dtype=np.float64)[..., None]
    return out


# ---------------------------------------------------------------------------
# fused recurrent cell


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor | None, w_hh: Tensor, b: Tensor):
    """One LSTM step with gate order (input, forget, cell, output); returns ``(h', c')``.

    With ``w_ih=None`` the input is taken as already projected to gate width.
    """
    zx = x.data if w_ih is None else x.data @ w_ih.data
    z = zx + h.data @ w_hh.data + b.data
    H = h.shape[-1]
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    gg = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c2 = f * c.data + i * gg
    tc = np.tanh(c2)
    h_out = Tensor(o * tc)
    c_out = Tensor(c2)

    def bw(gh, gc):
        dc = gc + gh * o * (1.0 - tc ** 2)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - gg ** 2),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        _acc(c, dc * f)
        _acc(b, dz.sum(axis=0))
        if x.requires_grad:
            _acc(x, dz if w_ih is None else dz @ w_ih.data.T)
        if h.requires_grad:
            _acc(h, dz @ w_hh.data.T)
        if w_ih is not None:
            _acc(w_ih, x.data.T @ dz)
        _acc(w_hh, h.data.T @ dz)

    _record((x, h, c, w_hh, b) if w_ih is None else (x, h, c, w_ih, w_hh, b), (h_out, c_out), bw)
    return h_out, c_out


# ---------------------------------------------------------------------------
# gradient checking


def numeric_grad(f, param: Tensor, index, h: float) -> float:
    old = param.data[index]
    param.data[index] = old + h
    fp = float(f().data)
    param.data[index] = old - h
    fm = float(f().data)
    param.data[index] = old
    return (fp - fm) / (2.0 * h)


def grad_check(f, params, h: float = 1e-6, tol: float = 1e-4, samples: int | None = None, seed: int = 0) -> dict:
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``params`` maps names to tensors.  For each tensor the reported error is
    ``max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf)``
    over the checked entries (all entries, or ``samples`` random ones).
    Returns ``{"errors": {name: err}, "max_error": float, "passed": bool}``.
    """
    items = list(params.items())
    for _, p in items:
        p.grad = None
    with Tape() as tape:
        loss = f()
        backward(loss, tape)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in items:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = np.arange(p.data.size)
        if samples is not None and samples < p.data.size:
            flat = rng.choice(p.data.size, size=samples, replace=False)
        a_vals, n_vals = [], []
        for k in flat:
            idx = np.unravel_index(k, p.shape)
            a_vals.append(analytic[idx])
            n_vals.append(numeric_grad(f, p, idx, h))
        a_vals, n_vals = np.array(a_vals), np.array(n_vals)
        scale_ = max(np.abs(a_vals).max(initial=0.0), np.abs(n_vals).max(initial=0.0))
        err = 0.0 if scale_ == 0.0 else float(np.abs(a_vals - n_vals).max() / scale_)
        errors[name] = err
    worst = max(errors.values(), default=0.0)
    return {"errors": errors, "max_error": worst, "passed": bool(worst < tol) and math.isfinite(worst)}
