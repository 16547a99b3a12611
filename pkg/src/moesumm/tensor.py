"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything the encoder-decoder and its losses need is built from the
primitives in this module: batched matmul, broadcasting add/mul, softmax,
layer normalization, GELU/ReLU, embedding lookup, reductions, and a few
pointwise functions. Each primitive records a backward rule on the active
tape; ``backward`` replays the tape in reverse, accumulating gradients
into every tensor that requires them. Gradients accumulate across calls;
callers zero them explicitly.

All math is float64. Single-threaded by contract while a tape is active.
"""

from __future__ import annotations

import numpy as np

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


def _shape_err(op, *shapes):
    return ShapeError(f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


class Tensor:
    """A dense real array with shape, flat row-major values, and an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        # float64 everywhere; longdouble is let through so the finite-
        # difference oracle can probe at extended precision
        if arr.dtype != np.longdouble:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Flat row-major view of the stored values."""
        return self.data.ravel()

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def detach(self):
        """A constant copy sharing no graph history."""
        return Tensor(self.data.copy())

    def __repr__(self):
        nm = f", name={self.name!r}" if self.name else ""
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{rg}{nm})"

    # arithmetic sugar; all routed through the recorded primitives below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scalar_mul(_coerce(other), -1.0))

    def __rsub__(self, other):
        return add(_coerce(other), scalar_mul(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPE_STACK = []


class Tape:
    """Ordered record of operations; construction order is topological order."""

    def __init__(self):
        self._nodes = []       # (output tensor, backward rule)
        self._on_tape = set()  # ids of outputs recorded here

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, out, backward_rule):
        self._nodes.append((out, backward_rule))
        self._on_tape.add(id(out))

    def owns(self, t):
        return id(t) in self._on_tape

    def __len__(self):
        return len(self._nodes)


class no_grad:
    """Suspend recording: ops inside compute values only."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(root, tape=None):
    """Accumulate d(root)/d(x) into .grad of every recorded tensor x.

    root must be a scalar produced on the given (default: active) tape.
    Each tape node is visited exactly once, in reverse recording order.
    """
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise RuntimeError("backward: no active tape")
    if root.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not tape.owns(root):
        raise ValueError("backward: root was not produced on the active tape")
    root.grad = np.ones_like(root.data)
    for out, rule in reversed(tape._nodes):
        if out.grad is None:
            continue
        rule(out.grad)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def _record(out, inputs, backward_rule):
    """Mark out differentiable and record the rule if a tape is active."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_rule)
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to an operand shape that was broadcast."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b):
    """Elementwise add with numpy broadcasting (covers row-broadcast bias)."""
    a, b = _coerce(a), _coerce(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise _shape_err("add", a.shape, b.shape) from None

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _record(out, (a, b), rule)


def mul(a, b):
    """Elementwise multiply with broadcasting."""
    a, b = _coerce(a), _coerce(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise _shape_err("mul", a.shape, b.shape) from None

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), rule)


def scalar_mul(a, c):
    a = _coerce(a)
    c = float(c)
    out = Tensor(a.data * c)

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _record(out, (a,), rule)


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise _shape_err("matmul", a.shape, b.shape)
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError:
        raise _shape_err("matmul", a.shape, b.shape) from None

    def rule(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return _record(out, (a, b), rule)


def transpose(a, axes=None):
    """Permute axes; default swaps the last two."""
    a = _coerce(a)
    if axes is None:
        if a.data.ndim < 2:
            raise _shape_err("transpose", a.shape)
        axes = list(range(a.data.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = Tensor(np.transpose(a.data, axes))

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(np.transpose(g, inv))

    return _record(out, (a,), rule)


def reshape(a, shape):
    a = _coerce(a)
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError:
        raise _shape_err("reshape", a.shape, shape) from None

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _record(out, (a,), rule)


def concat_last(tensors):
    """Concatenate along the last axis."""
    tensors = [_coerce(t) for t in tensors]
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.shape[:-1] != lead:
            raise _shape_err("concat_last", tensors[0].shape, t.shape)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=-1))
    widths = [t.data.shape[-1] for t in tensors]

    def rule(g):
        ofs = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t.accumulate_grad(g[..., ofs:ofs + w])
            ofs += w

    return _record(out, tuple(tensors), rule)


def slice_last(a, start, stop):
    """Slice [start:stop] along the last axis."""
    a = _coerce(a)
    n = a.data.shape[-1]
    if not (0 <= start <= stop <= n):
        raise _shape_err("slice_last", a.shape, (start, stop))
    out = Tensor(a.data[..., start:stop])

    def rule(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            a.accumulate_grad(full)

    return _record(out, (a,), rule)


def embedding(table, ids):
    """Row lookup: out[..., :] = table[ids[...], :]."""
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise IndexError(f"embedding: index out of vocabulary range [0, {rows})")
    out = Tensor(table.data[ids])

    def rule(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[-1]))
            table.accumulate_grad(gt)

    return _record(out, (table,), rule)


def scatter_rows(values, idx, n_rows):
    """Inverse of an embedding row-gather: out[idx[k], :] = values[k, :].

    idx must hold distinct row indices; unindexed rows are zero.
    """
    values = _coerce(values)
    idx = np.asarray(idx, dtype=np.int64)
    if values.data.ndim != 2 or idx.shape != (values.data.shape[0],):
        raise _shape_err("scatter_rows", values.shape, idx.shape)
    out_data = np.zeros((n_rows, values.data.shape[1]), dtype=values.data.dtype)
    out_data[idx] = values.data
    out = Tensor(out_data)

    def rule(g):
        if values.requires_grad:
            values.accumulate_grad(g[idx])

    return _record(out, (values,), rule)


def gather_last(a, idx):
    """Pick one entry per row along the last axis: out[...] = a[..., idx[...]]."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.data.shape[:-1]:
        raise _shape_err("gather_last", a.shape, idx.shape)
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0])

    def rule(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
            a.accumulate_grad(ga)

    return _record(out, (a,), rule)


def softmax(a):
    """Row softmax over the last axis, computed with max-subtraction."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def rule(g):
        if a.requires_grad:
            dot = (g * s).sum(axis=-1, keepdims=True)
            a.accumulate_grad(s * (g - dot))

    return _record(out, (a,), rule)


def log_softmax(a):
    """log(softmax) over the last axis without forming tiny intermediates."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    ls = shifted - lse
    out = Tensor(ls)
    s = np.exp(ls)

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g - s * g.sum(axis=-1, keepdims=True))

    return _record(out, (a,), rule)


def layernorm(a, gain, offset, eps=1e-5):
    """Per-row normalization over the last axis with learnable gain/offset.

    eps floors the variance so constant rows stay finite.
    """
    a, gain, offset = _coerce(a), _coerce(gain), _coerce(offset)
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or offset.data.shape != (d,):
        raise _shape_err("layernorm", a.shape, gain.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat * gain.data + offset.data)

    def rule(g):
        if gain.requires_grad:
            gain.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if offset.requires_grad:
            offset.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            a.accumulate_grad(inv * (gx - m1 - xhat * m2))

    return _record(out, (a, gain, offset), rule)


def gelu(a):
    """GELU via the tanh approximation; gelu(0) == 0 exactly."""
    a = _coerce(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_K * x * (1.0 + _GELU_C * x2))
    half_x = 0.5 * x
    out = Tensor(half_x + half_x * t)

    def rule(g):
        if a.requires_grad:
            dinner = _GELU_K * (1.0 + (3.0 * _GELU_C) * x2)
            da = 0.5 * (1.0 + t) + half_x * (1.0 - t * t) * dinner
            a.accumulate_grad(g * da)

    return _record(out, (a,), rule)


def relu(a):
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _record(out, (a,), rule)


ACTIVATIONS = {"gelu": gelu, "relu": relu}


def exp(a):
    a = _coerce(a)
    out = Tensor(np.exp(a.data))

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g * out.data)

    return _record(out, (a,), rule)


def log(a):
    a = _coerce(a)
    out = Tensor(np.log(a.data))

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _record(out, (a,), rule)


def pow_int(a, n):
    """Integer power, elementwise."""
    a = _coerce(a)
    n = int(n)
    out = Tensor(a.data ** n)

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g * n * a.data ** (n - 1))

    return _record(out, (a,), rule)


def sum_(a, axis=None, keepdims=False):
    a = _coerce(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def rule(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _record(out, (a,), rule)


def mean(a, axis=None, keepdims=False):
    a = _coerce(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else a.data.shape[axis]

    def rule(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g / count, a.data.shape).copy())

    return _record(out, (a,), rule)
