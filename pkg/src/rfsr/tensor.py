"""Dense tensors with reverse-mode automatic differentiation.

numpy arrays hold the data; a recording tape holds backward closures. Ops
append records in execution order, so walking the tape in reverse is a
reverse-topological traversal. Gradients are always accumulated (never
overwritten), which makes repeated use of a tensor sum its contributions.

Precision is controlled globally: float32 by default, float64 for
verification (finite-difference checks are unreliable in 32-bit).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_DEFAULT_DTYPE = np.dtype(np.float32)
_tls = threading.local()


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default precision (e.g. float64 for grad checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def _tape_stack() -> list:
    stack = getattr(_tls, "tape_stack", None)
    if stack is None:
        stack = []
        _tls.tape_stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional real array, optionally participating in the active tape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() on tensor of shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    # arithmetic — all routed through the module-level primitives
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("outputs", "inputs", "backward")

    def __init__(self, outputs, inputs, backward):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Records are appended in execution order; backward() walks them in
    reverse, accumulating each op's input gradients. A tape is consumed by
    its backward pass and cannot be replayed.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ValueError(f"backward target must be scalar, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self._records):
            out_grads = [o.grad for o in rec.outputs]
            if all(g is None for g in out_grads):
                continue
            in_grads = rec.backward(out_grads)
            for t, g in zip(rec.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(g, dtype=t.data.dtype, copy=True)
                else:
                    t.grad += g


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def make_outputs(datas, inputs, backward):
    """Create output tensors for a primitive and register it on the active tape.

    `backward(out_grads) -> in_grads`: one gradient array (or None) per
    output in, one per input out. Public so fused primitives can live in
    other modules.
    """
    tape = active_tape()
    rg = tape is not None and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor(d, requires_grad=rg) for d in datas)
    if rg:
        tape._records.append(_Record(outs, tuple(inputs), backward))
    return outs


def _make_out(data, inputs, backward_single):
    """Single-output helper; backward_single(g) -> tuple of input grads."""
    (out,) = make_outputs((data,), inputs, lambda gs: backward_single(gs[0]))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    return _make_out(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    return _make_out(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    return _make_out(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    out_data = a.data / b.data
    return _make_out(
        out_data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out_data / b.data, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _coerce(a)
    return _make_out(-a.data, (a,), lambda g: (-g,))


def tsin(a) -> Tensor:
    a = _coerce(a)
    return _make_out(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def tcos(a) -> Tensor:
    a = _coerce(a)
    return _make_out(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def texp(a) -> Tensor:
    a = _coerce(a)
    out_data = np.exp(a.data)
    return _make_out(out_data, (a,), lambda g: (g * out_data,))


def relu(a) -> Tensor:
    a = _coerce(a)
    return _make_out(
        np.maximum(a.data, 0), (a,),
        lambda g: (g * (a.data > 0),),
    )


def elu(a) -> Tensor:
    a = _coerce(a)
    pos = a.data > 0
    e = np.exp(np.minimum(a.data, 0.0))
    return _make_out(
        np.where(pos, a.data, e - 1.0), (a,),
        lambda g: (g * np.where(pos, 1.0, e),),
    )


def tabs(a) -> Tensor:
    a = _coerce(a)
    return _make_out(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    return _make_out(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _coerce(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape),)

    return _make_out(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _coerce(a)
    count = a.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape),)

    return _make_out(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    return _make_out(
        a.data.reshape(shape), (a,),
        lambda g: (g.reshape(a.shape),),
    )


def permute(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make_out(
        a.data.transpose(axes), (a,),
        lambda g: (g.transpose(inverse),),
    )


def concat(tensors, axis=0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    data = np.concatenate([t.data for t in ts], axis=axis)
    (out,) = make_outputs((data,), ts, lambda gs: backward(gs[0]))
    return out


def narrow(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward zero-pads."""
    a = _coerce(a)
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError(f"narrow [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = (slice(None),) * axis + (slice(start, stop),)

    def backward(g):
        z = np.zeros(a.shape, dtype=g.dtype)
        z[index] = g
        return (z,)

    return _make_out(a.data[index], (a,), backward)


def gather_rows(a, idx) -> Tensor:
    """Row gather a[idx]; backward scatter-adds (duplicate indices accumulate)."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows needs a 1-D index, got shape {idx.shape}")

    def backward(g):
        z = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(z, idx, g)
        return (z,)

    return _make_out(a.data[idx], (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        return (dx, dgain, dbias)

    return _make_out(out_data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# convolution (3x3, stride 1, zero pad 1 — the only shape the encoder needs)

def _im2col3(xp: np.ndarray, H: int, W: int) -> np.ndarray:
    """(B, C, H+2, W+2) -> (C*9, B*H*W), window order (C, dy, dx)."""
    B, C = xp.shape[0], xp.shape[1]
    cols = np.empty((B, C, 9, H, W), dtype=xp.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, :, k] = xp[:, :, dy:dy + H, dx:dx + W]
    return cols.reshape(B, C * 9, H * W).transpose(1, 0, 2).reshape(C * 9, B * H * W)


def conv2d(x, w) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1; spatial extents preserved.

    x: (C_in, H, W) or (B, C_in, H, W); w: (C_out, C_in, 3, 3).
    """
    x, w = _coerce(x), _coerce(w)
    squeeze = x.ndim == 3
    xv = reshape(x, (1,) + x.shape) if squeeze else x
    if xv.ndim != 4:
        raise ShapeError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be (C_out, C_in, 3, 3), got {w.shape}")
    B, Cin, H, W = xv.shape
    Cout = w.shape[0]
    if w.shape[1] != Cin:
        raise ShapeError(f"conv2d channel mismatch: input has {Cin}, kernel expects {w.shape[1]}")

    xp = np.pad(xv.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col3(xp, H, W)
    w2 = w.data.reshape(Cout, Cin * 9)
    out_data = (w2 @ cols).reshape(Cout, B, H, W).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(Cout, B * H * W)
        # cols is recomputed lazily only if x needs grad is unknowable here;
        # it is cheap relative to the matmuls, so reuse the closure copy.
        dw = (g2 @ cols.T).reshape(w.shape)
        dcols = (w2.T @ g2).reshape(Cin, 9, B, H, W)
        dxp = np.zeros_like(xp)
        for k in range(9):
            dy, dx = divmod(k, 3)
            dxp[:, :, dy:dy + H, dx:dx + W] += dcols[:, k].transpose(1, 0, 2, 3)
        return (dxp[:, :, 1:-1, 1:-1], dw)

    out = _make_out(out_data, (xv, w), backward)
    return reshape(out, out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------------------
# constructors and verification

def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def randn(rng: np.random.Generator, shape, scale=1.0, requires_grad=False) -> Tensor:
    return Tensor(
        (rng.standard_normal(shape) * scale).astype(_DEFAULT_DTYPE),
        requires_grad=requires_grad,
    )


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Per-coordinate error is |autodiff - numeric| / max(|numeric|, 1e-8).
    Requires float64 data; central differences are meaningless in float32.
    """
    if x.dtype != np.float64:
        raise ValueError("grad_check requires a float64 tensor")
    if not (1e-7 <= eps <= 1e-4):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-4]")
    probe = Tensor(x.data.copy(), requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = f(probe)
        if y.size != 1:
            raise ValueError(f"grad_check target must be scalar, got shape {y.shape}")
        tape.backward(y)
    auto = probe.grad.reshape(-1).copy() if probe.grad is not None else np.zeros(x.size)

    base = x.data.reshape(-1).copy()
    numeric = np.empty_like(base)
    for i in range(base.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            pert = base.copy()
            pert[i] += sign * eps
            val = f(Tensor(pert.reshape(x.shape), dtype=np.float64)).item()
            if slot == 0:
                hi = val
            else:
                lo = val
        numeric[i] = (hi - lo) / (2.0 * eps)
    return float(np.max(np.abs(auto - numeric) / np.maximum(np.abs(numeric), 1e-8)))
