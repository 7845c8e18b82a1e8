"""Dense tensors with tape-based reverse-mode differentiation.

Every op takes and returns ``Tensor``. When a ``Tape`` is active in the current
context and at least one input requires grad, the op appends a record holding
its local backward rule; ``Tape.backward`` replays those records in reverse.
With no active tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from mmvp.errors import ShapeError


Scalar = Union[int, float]
Axes = Union[int, Sequence[int], None]
BackwardFn = Callable[[np.ndarray], tuple]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "mmvp_active_tape", default=None
)


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional float32/float64 array that can take part in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_float_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        """Fresh leaf with the same values in another precision."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ValueError("tensor was not produced on a tape")
        self._tape.backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other: Scalar):
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Record:
    inputs: tuple
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered log of differentiable operations for one forward pass.

    Use as a context manager; ops executed inside the ``with`` block record
    onto it. Gradients land on leaves (tensors no record produced) and
    accumulate across calls until the caller resets them.
    """

    def __init__(self):
        self.records: list[Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> None:
        output._tape = self
        self.records.append(Record(tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is None:
                    gi = np.array(gi, dtype=inp.data.dtype)
                    inp.grad = gi if inp.grad is None else inp.grad + gi
                else:
                    gi = np.asarray(gi, dtype=inp.data.dtype)
                    key = id(inp)
                    pending[key] = gi if key not in pending else pending[key] + gi


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = _ACTIVE_TAPE.get()
    if requires and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _axes_tuple(axes: Axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


# ─── Elementwise ────────────────────────────────────────────────────────────


ELEMENTWISE_KINDS = ("add", "sub", "mul", "scale")


def elementwise(a: Tensor, b: Union[Tensor, Scalar], kind: str) -> Tensor:
    """Pointwise add / sub / mul of equal-shape tensors, or with a scalar."""
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")

    if isinstance(b, Tensor):
        if kind == "scale":
            raise ValueError("scale takes a scalar factor")
        if a.shape != b.shape:
            raise ShapeError(f"elementwise {kind}: shapes {a.shape} and {b.shape} differ")
        if kind == "add":
            return _make(a.data + b.data, (a, b), lambda g: (g, g))
        if kind == "sub":
            return _make(a.data - b.data, (a, b), lambda g: (g, -g))
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))

    c = float(b)
    if kind == "add":
        return _make(a.data + c, (a,), lambda g: (g,))
    if kind == "sub":
        return _make(a.data - c, (a,), lambda g: (g,))
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    return elementwise(a, b, "mul")


def scale(a: Tensor, factor: Scalar) -> Tensor:
    return elementwise(a, factor, "scale")


def neg(a: Tensor) -> Tensor:
    return elementwise(a, -1.0, "scale")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """x where x >= 0, slope * x elsewhere; the subgradient at 0 is 1."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    keep = x.data >= 0
    data = np.where(keep, x.data, x.data * slope)
    return _make(data, (x,), lambda g: (np.where(keep, g, g * slope),))


# ─── Linear algebra ─────────────────────────────────────────────────────────


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading (batch) axes must match."""
    if (
        a.ndim < 2
        or a.ndim != b.ndim
        or a.shape[:-2] != b.shape[:-2]
        or a.shape[-1] != b.shape[-2]
    ):
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), backward)


def _conv(x: Tensor, w: Tensor, bias: Optional[Tensor], stride: int, padding: int, nd: int) -> Tensor:
    op = f"conv{nd}d"
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeError(f"{op}: input {x.shape} and weight {w.shape} must have rank {nd + 2}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"{op}: input has {x.shape[1]} channels, weight {w.shape} expects {w.shape[1]}")
    kernel = w.shape[2:]
    if any(k % 2 == 0 for k in kernel):
        raise ShapeError(f"{op}: kernel {kernel} must have odd sizes")
    if stride < 1 or padding < 0:
        raise ShapeError(f"{op}: bad stride {stride} / padding {padding}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"{op}: bias {bias.shape} does not match {w.shape[0]} output channels")

    spatial = x.shape[2:]
    out_size = []
    for size, k in zip(spatial, kernel):
        span = size + 2 * padding - k
        if span < 0:
            raise ShapeError(f"{op}: kernel {kernel} does not fit input {spatial} with padding {padding}")
        out_size.append(span // stride + 1)

    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(padding, padding)] * nd) if padding else x.data
    lead = (slice(None), slice(None))
    windows = [
        (offs, lead + tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offs, out_size)))
        for offs in np.ndindex(*kernel)
    ]

    out = np.zeros((x.shape[0], w.shape[0], *out_size), dtype=np.result_type(x.data, w.data))
    for offs, window in windows:
        out += np.moveaxis(np.tensordot(xp[window], w.data[lead + offs], axes=([1], [1])), -1, 1)
    if bias is not None:
        out += bias.data.reshape((1, -1) + (1,) * nd)

    summed = [0] + list(range(2, 2 + nd))

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for offs, window in windows:
            gw[lead + offs] = np.tensordot(g, xp[window], axes=(summed, summed))
            gxp[window] += np.moveaxis(np.tensordot(g, w.data[lead + offs], axes=([1], [0])), -1, 1)
        gx = gxp[lead + tuple(slice(padding, padding + s) for s in spatial)]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=tuple(summed))

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make(out, inputs, backward)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, C_in, H, W) with (C_out, C_in, kH, kW), zero padded."""
    return _conv(x, w, bias, stride, padding, nd=2)


def conv3d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Like conv2d with a leading depth axis: (N, C_in, D, H, W)."""
    return _conv(x, w, bias, stride, padding, nd=3)


# ─── Reductions and normalisation ───────────────────────────────────────────


def softmax(x: Tensor, axes: Axes) -> Tensor:
    """Exp-normalise over ``axes`` jointly, max-shifted for stability."""
    if axes is not None and not isinstance(axes, int) and len(axes) == 0:
        raise ValueError("softmax needs at least one axis")
    axes = _axes_tuple(axes, x.ndim)
    e = np.exp(x.data - x.data.max(axis=axes, keepdims=True))
    s = e / e.sum(axis=axes, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axes, keepdims=True)),)

    return _make(s, (x,), backward)


def sum(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _axes_tuple(axes, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)
    kept = x.data.sum(axis=axes, keepdims=True).shape

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), x.shape).copy(),)

    return _make(data, (x,), backward)


def mean(x: Tensor, axes: Axes = None, keepdims: bool = False) -> Tensor:
    axes = _axes_tuple(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axes, keepdims), 1.0 / count)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over every element."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    count = diff.size

    def backward(g):
        d = diff * (2.0 * g / count)
        return d, -d

    return _make(np.mean(diff * diff), (pred, target), backward)


def normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit length; vectors shorter than eps become 0."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    keep = norm >= eps
    safe = np.where(keep, norm, 1.0).astype(x.dtype)
    unit = np.where(keep, x.data / safe, 0.0).astype(x.dtype)

    def backward(g):
        radial = (unit * g).sum(axis=axis, keepdims=True)
        return (np.where(keep, (g - unit * radial) / safe, 0.0),)

    return _make(unit, (x,), backward)


# ─── Movement ───────────────────────────────────────────────────────────────


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}: {exc}") from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in tensors]}")
    data = np.stack([t.data for t in tensors], axis=axis)
    return _make(data, tensors, lambda g: tuple(np.moveaxis(g, axis, 0)))


def index(x: Tensor, key) -> Tensor:
    """Basic (slice / integer) indexing."""
    data = np.array(x.data[key])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        return (gx,)

    return _make(data, (x,), backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat every pixel of (N, C, H, W) into a factor x factor block."""
    n, c, h, w = x.shape
    data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return _make(data, (x,), lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),))


def avg_pool(x: Tensor, factor: int) -> Tensor:
    """Mean over non-overlapping factor x factor blocks of (N, C, H, W)."""
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool: {h}x{w} not divisible by {factor}")
    data = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g):
        return (g.repeat(factor, axis=2).repeat(factor, axis=3) / (factor * factor),)

    return _make(data, (x,), backward)


# ─── Verification ───────────────────────────────────────────────────────────


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    *,
    floor: float = 1e-8,
    samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` must map a tensor shaped like ``x`` to a scalar tensor. With
    ``samples`` set, only that many randomly chosen elements are checked.
    """
    if h <= 0:
        raise ValueError("step h must be positive")

    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(leaf)
    if y.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar function, got shape {y.shape}")
    if y._tape is tape:
        tape.backward(y)
    analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).reshape(-1)

    positions = np.arange(x.size)
    if samples is not None and samples < x.size:
        positions = np.random.default_rng(seed).choice(x.size, size=samples, replace=False)

    worst = 0.0
    for i in positions:
        shifted = x.data.copy()
        flat = shifted.reshape(-1)
        origin = flat[i]
        flat[i] = origin + h
        upper = f(Tensor(shifted)).item()
        flat[i] = origin - h
        lower = f(Tensor(shifted)).item()
        numeric = (upper - lower) / (2.0 * h)
        g = float(analytic[i])
        worst = max(worst, abs(numeric - g) / max(abs(g), floor))
    return worst
