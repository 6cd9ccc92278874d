"""Reverse-mode differentiation over a fixed set of array primitives.

The engine is deliberately small: values are float64 ndarrays wrapped in
:class:`Var`, and every primitive records one entry (name, output, inputs,
vjp closure) on the innermost active :class:`Tape`. A tape supports exactly
one backward sweep; the sweep walks the entries in reverse, accumulating
vector-Jacobian products into ``Var.grad``. Nothing mutates a gradient array
in place, so entries may safely share arrays.

The primitive set covers what the renderer, losses, attention operators and
plane placement need: broadcasting arithmetic, exp/log/abs, logistic and
softplus activations, reductions, exclusive cumulative sums, shape ops,
2-D matmul, row softmax, row gather/replace, and the bilinear sampler backed
by the compiled/NumPy kernels.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DimensionMismatch, NonFiniteGradient, TapeReuse

_ACTIVE_TAPES: list["Tape"] = []


class Var:
    """A float64 array with an optional gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; every overload routes through a recorded primitive.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


class Tape:
    """Records primitive applications for one backward sweep.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the scalar loss. ``check_finite`` validates every
    produced gradient and reports the originating primitive on failure.
    """

    def __init__(self, check_finite=True):
        self.entries = []
        self.check_finite = check_finite
        self._consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def backward(self, loss: Var):
        """Run one reverse sweep seeded at ``loss`` (a scalar Var)."""
        if self._consumed:
            raise TapeReuse("this tape has already been consumed by backward()")
        self._consumed = True
        if loss.value.size != 1:
            raise DimensionMismatch(
                f"backward() needs a scalar loss, got shape {loss.value.shape}"
            )
        loss.grad = np.ones_like(loss.value)
        for name, out, inputs, vjp in reversed(self.entries):
            gout = out.grad
            if gout is None:
                continue
            grads = vjp(gout)
            for src, g in zip(inputs, grads):
                if g is None or not src.requires_grad:
                    continue
                if self.check_finite and not np.all(np.isfinite(g)):
                    raise NonFiniteGradient(
                        f"non-finite gradient produced by primitive '{name}'"
                    )
                src.grad = g if src.grad is None else src.grad + g


def _record(name, out_value, inputs, vjp) -> Var:
    out = Var(out_value)
    if _ACTIVE_TAPES and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].entries.append((name, out, inputs, vjp))
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the reverse of NumPy broadcasting)."""
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
# Arithmetic


def add(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _record(
        "add",
        av + bv,
        (a, b),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)),
    )


def sub(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _record(
        "sub",
        av - bv,
        (a, b),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)),
    )


def mul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _record(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _record(
        "div",
        av / bv,
        (a, b),
        lambda g: (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        ),
    )


def neg(a):
    a = as_var(a)
    return _record("neg", -a.value, (a,), lambda g: (-g,))


def exp(a):
    a = as_var(a)
    ev = np.exp(a.value)
    return _record("exp", ev, (a,), lambda g: (g * ev,))


def log(a):
    a = as_var(a)
    av = a.value
    return _record("log", np.log(av), (a,), lambda g: (g / av,))


def absolute(a):
    """|a| with subgradient 0 at 0."""
    a = as_var(a)
    sgn = np.sign(a.value)
    return _record("abs", np.abs(a.value), (a,), lambda g: (g * sgn,))


def sigmoid(a):
    a = as_var(a)
    av = a.value
    s = np.empty_like(av)
    pos = av >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    e = np.exp(av[~pos])
    s[~pos] = e / (1.0 + e)
    return _record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a):
    """log(1 + exp(a)), numerically stable; derivative is sigmoid(a)."""
    a = as_var(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    sig = 1.0 / (1.0 + np.exp(-np.clip(av, -700, 700)))
    return _record("softplus", out, (a,), lambda g: (g * sig,))


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    take_a = av >= bv
    return _record(
        "maximum",
        np.maximum(av, bv),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, av.shape),
            _unbroadcast(g * ~take_a, bv.shape),
        ),
    )


# ---------------------------------------------------------------------------
# Reductions and scans


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    av = a.value

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape),)

    return _record("sum", av.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    av = a.value
    count = av.size if axis is None else av.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, av.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, av.shape),)

    return _record("mean", av.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def cumsum_exclusive(a, axis=0):
    """out_i = sum_{j < i} a_j along ``axis`` (first slice is zero)."""
    a = as_var(a)
    av = a.value
    out = np.zeros_like(av)
    src = [slice(None)] * av.ndim
    dst = [slice(None)] * av.ndim
    src[axis] = slice(0, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = np.cumsum(av, axis=axis)[tuple(src)]

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g,)

    return _record("cumsum_exclusive", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Shape ops


def reshape(a, shape):
    a = as_var(a)
    av = a.value
    return _record("reshape", av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def stack(vars_, axis=0):
    vars_ = [as_var(v) for v in vars_]
    out = np.stack([v.value for v in vars_], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vars_)))

    return _record("stack", out, tuple(vars_), vjp)


def concat(vars_, axis=0):
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.value.shape[axis] for v in vars_]
    out = np.concatenate([v.value for v in vars_], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tuple(vars_), vjp)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along ``axis``."""
    a = as_var(a)
    av = a.value
    sl = [slice(None)] * av.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def vjp(g):
        out = np.zeros_like(av)
        out[sl] = g
        return (out,)

    return _record("narrow", av[sl].copy(), (a,), vjp)


def element(a, idx):
    """Scalar element of a 1-D Var."""
    a = as_var(a)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        out[idx] = g
        return (out,)

    return _record("element", av[idx], (a,), vjp)


# ---------------------------------------------------------------------------
# Linear algebra and attention building blocks


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise DimensionMismatch("matmul expects 2-D operands")
    return _record(
        "matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g)
    )


def transpose2d(a):
    a = as_var(a)
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def softmax_rows(a):
    """Row-wise softmax of a 2-D Var, with max subtraction for stability."""
    a = as_var(a)
    av = a.value
    shifted = av - av.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _record("softmax_rows", s, (a,), vjp)


def take_rows(a, idx):
    a = as_var(a)
    av = a.value
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _record("take_rows", av[idx].copy(), (a,), vjp)


def put_rows(base, rows, idx):
    """Copy of ``base`` with ``rows`` written at row indices ``idx``."""
    base, rows = as_var(base), as_var(rows)
    idx = np.asarray(idx, dtype=np.int64)
    out = base.value.copy()
    out[idx] = rows.value

    def vjp(g):
        gbase = g.copy()
        gbase[idx] = 0.0
        return (gbase, g[idx].copy())

    return _record("put_rows", out, (base, rows), vjp)


# ---------------------------------------------------------------------------
# Bilinear sampling


def bilinear(values, xs, ys, mode="clamp"):
    """Differentiable bilinear sampling of an (H, W) or (H, W, C) grid.

    ``xs``/``ys`` may have any common shape; the output has that shape plus
    the channel axis when present. Gradients flow to the grid values and to
    both coordinate fields.
    """
    values, xs, ys = as_var(values), as_var(xs), as_var(ys)
    vv = values.value
    squeeze = vv.ndim == 2
    if squeeze:
        vv = vv[:, :, None]
    if vv.ndim != 3:
        raise DimensionMismatch(f"grid must be (H, W) or (H, W, C), got {values.shape}")
    if xs.value.shape != ys.value.shape:
        raise DimensionMismatch(
            f"coordinate shapes differ: {xs.value.shape} vs {ys.value.shape}"
        )
    mode_id = {"clamp": kernels.MODE_CLAMP, "zero": kernels.MODE_ZERO}[mode]
    coord_shape = xs.value.shape
    xf = np.ascontiguousarray(xs.value.reshape(-1))
    yf = np.ascontiguousarray(ys.value.reshape(-1))
    vc = np.ascontiguousarray(vv)
    out = kernels.bilinear_forward(vc, xf, yf, mode_id)
    c = vc.shape[2]
    out_shape = coord_shape if squeeze else coord_shape + (c,)

    def vjp(g):
        gf = np.ascontiguousarray(g.reshape(-1, c))
        gval, gx, gy = kernels.bilinear_backward(vc, xf, yf, gf, mode_id)
        if squeeze:
            gval = gval[:, :, 0]
        return (gval, gx.reshape(coord_shape), gy.reshape(coord_shape))

    return _record("bilinear", out.reshape(out_shape), (values, xs, ys), vjp)


# ---------------------------------------------------------------------------
# Finite differences (the oracle used by the gradient tests and cmd_check)


def finite_difference(fn, arrays, eps=1e-6):
    """Central finite-difference gradients of scalar ``fn(*arrays)``.

    Returns one array per input, same shapes. Intended for small inputs.
    """
    grads = []
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(*arrays))
            flat[i] = orig - eps
            fm = float(fn(*arrays))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads
