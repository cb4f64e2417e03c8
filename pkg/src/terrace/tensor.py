"""Dense tensors with a reverse-mode differentiation tape.

Only the handful of primitives the segmentation network and its loss need
are provided. Arrays are numpy, layout is NCHW. Float32 is used for
training and inference; pass float64 arrays in for gradient checks.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """An array value plus an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "tape_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        values = np.asarray(values)
        if values.dtype.kind != "f":
            values = values.astype(np.float64)
        self.values = values
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar for the loss code
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind, inputs, output, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Records primitive applications in execution order.

    Use as a context manager; primitives evaluated inside it whose inputs
    require gradients are appended. ``backward`` replays the record in
    reverse exactly once per node.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> None:
        output.tape_id = len(self.nodes)
        output.requires_grad = True
        self.nodes.append(_Node(kind, tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.values.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id is None or loss.tape_id >= len(self.nodes) or self.nodes[loss.tape_id].output is not loss:
            raise ContractError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for node in reversed(self.nodes[: loss.tape_id + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t.tape_id is None:
                    # leaf: accumulate into its buffer
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                    del grads[key]
            node.output.grad = g


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


@contextlib.contextmanager
def no_grad():
    saved = list(_ACTIVE_TAPES)
    _ACTIVE_TAPES.clear()
    try:
        yield
    finally:
        _ACTIVE_TAPES.extend(saved)


def _emit(kind: str, inputs: Sequence[Tensor], out_values: np.ndarray, backward_fn) -> Tensor:
    out = Tensor(out_values)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# convolution


def _check_conv(x: Tensor, w: Tensor, k: int, kind: str) -> None:
    if x.values.ndim != 4:
        raise ShapeError(f"{kind}: input must be NCHW, got shape {x.shape}")
    if w.values.ndim != 4 or w.shape[2:] != (k, k):
        raise ShapeError(f"{kind}: kernel must be (Cout, Cin, {k}, {k}), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"{kind}: kernel expects {w.shape[1]} input channels, input has {x.shape[1]}")


def _im2col3(xv: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*9), zero padding 1."""
    n, c, h, w = xv.shape
    xp = np.pad(xv, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, h, w, c, 9), dtype=xv.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[..., k] = xp[:, :, dy : dy + h, dx : dx + w].transpose(0, 2, 3, 1)
    return cols.reshape(n * h * w, c * 9)


def _col2im3(gcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    gcols = gcols.reshape(n, h, w, c, 9)
    gxp = np.zeros((n, c, h + 2, w + 2), dtype=gcols.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        gxp[:, :, dy : dy + h, dx : dx + w] += gcols[..., k].transpose(0, 3, 1, 2)
    return gxp[:, :, 1:-1, 1:-1]


def conv3x3(x: Tensor, w: Tensor, channel_ordered: bool = False) -> Tensor:
    """Stride-1, zero-padded 3x3 convolution (cross-correlation), no bias.

    With ``channel_ordered`` the contribution of each input channel is
    computed separately and accumulated in ascending channel order. That
    makes appending zero-weight input channels leave the output
    bit-identical, which the input-channel extension relies on.
    """
    _check_conv(x, w, 3, "conv3x3")
    n, c, h, wd = x.shape
    cout = w.shape[0]
    xv, wv = x.values, w.values
    if channel_ordered:
        acc = None
        per_channel = []
        for ci in range(c):
            cols = _im2col3(xv[:, ci : ci + 1])
            per_channel.append(cols)
            part = cols @ wv[:, ci].reshape(cout, 9).T
            acc = part if acc is None else acc + part
        out2 = acc
    else:
        cols = _im2col3(xv)
        out2 = cols @ wv.reshape(cout, c * 9).T
    out = np.ascontiguousarray(out2.reshape(n, h, wd, cout).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * wd, cout)
        if channel_ordered:
            gw = np.empty_like(wv)
            gx = np.empty_like(xv)
            for ci in range(c):
                cols_c = per_channel[ci]
                gw[:, ci] = (g2.T @ cols_c).reshape(cout, 3, 3)
                gx[:, ci : ci + 1] = _col2im3(g2 @ wv[:, ci].reshape(cout, 9), (n, 1, h, wd))
        else:
            gw = (g2.T @ cols).reshape(wv.shape)
            gx = _col2im3(g2 @ wv.reshape(cout, c * 9), xv.shape)
        return gx, gw

    return _emit("conv3x3", (x, w), out, backward)


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    _check_conv(x, w, 1, "conv1x1")
    n, c, h, wd = x.shape
    cout = w.shape[0]
    xv = x.values
    w2 = w.values.reshape(cout, c)
    x2 = xv.transpose(0, 2, 3, 1).reshape(-1, c)
    out = np.ascontiguousarray((x2 @ w2.T).reshape(n, h, wd, cout).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ x2).reshape(w.shape)
        gx = np.ascontiguousarray((g2 @ w2).reshape(n, h, wd, c).transpose(0, 3, 1, 2))
        return gx, gw

    return _emit("conv1x1", (x, w), out, backward)


def conv2d_direct(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Reference convolution by explicit loops over kernel taps and channels.

    Zero padding ``k // 2``; used to cross-check the im2col path.
    """
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    if cin != c:
        raise ShapeError(f"conv2d_direct: kernel expects {cin} channels, input has {c}")
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, cout, h, wd), dtype=np.result_type(x, w))
    for co in range(cout):
        for ci in range(c):
            for dy in range(k):
                for dx in range(k):
                    out[:, co] += w[co, ci, dy, dx] * xp[:, ci, dy : dy + h, dx : dx + wd]
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.values.ndim != 1 or x.values.ndim != 4 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match channels of {x.shape}")
    out = x.values + b.values[None, :, None, None]
    return _emit("add_bias", (x, b), out, lambda g: (g, g.sum(axis=(0, 2, 3))))


# ---------------------------------------------------------------------------
# activations, resampling, wiring


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    out = np.where(mask, x.values, 0).astype(x.dtype)
    return _emit("relu", (x,), out, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    # stable for both signs
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    v = x.values
    e = np.exp(-np.abs(v))
    out = np.maximum(v, 0) + np.log1p(e)
    sig = np.where(v >= 0, 1 / (1 + e), e / (1 + e))
    return _emit("softplus", (x,), out, lambda g: (g * sig,))


def maxpool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got H={h}, W={w}")
    blocks = x.values.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # first maximal element of each window receives the gradient
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _emit("maxpool2", (x,), out, backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.values, 2, axis=2), 2, axis=3)
    return _emit(
        "upsample_nearest2",
        (x,),
        out,
        lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),),
    )


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_channels: nothing to concatenate")
    ref = tensors[0].shape
    for t in tensors:
        if t.values.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: N,H,W mismatch {ref} vs {t.shape}")
    out = np.concatenate([t.values for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _emit("concat_channels", tuple(tensors), out, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.values[:, start:stop].copy()

    def backward(g):
        gx = np.zeros_like(x.values)
        gx[:, start:stop] = g
        return (gx,)

    return _emit("slice_channels", (x,), out, backward)


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions (loss building blocks)


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    out = a.values + b.values
    return _emit("add", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    out = a.values - b.values
    return _emit("sub", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    av, bv = a.values, b.values
    out = av * bv
    return _emit("mul", (a, b), out, lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def div(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    av, bv = a.values, b.values
    out = av / bv
    return _emit(
        "div",
        (a, b),
        out,
        lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * av / (bv * bv), b.shape)),
    )


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = np.asarray(x.values.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(x.dtype),)
        axes = (axis,) if isinstance(axis, int) else axis
        return (np.broadcast_to(np.expand_dims(g, tuple(axes)), shape).astype(x.dtype),)

    return _emit("sum", (x,), out, backward)


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.values.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# finite differences


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    eps: float = 1e-4,
    indices: Sequence[tuple[int, ...]] | None = None,
    floor: float = 1.0,
) -> float:
    """Max of |analytic - central difference| / max(floor, |analytic|, |numeric|).

    The default ``floor`` of 1 turns tiny gradients into an absolute test;
    a small floor gives a true relative error.

    ``indices`` restricts the check to a subset of elements of ``x``;
    by default every element is probed.
    """
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    base = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    t = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(t)
    if not np.isfinite(out.values).all():
        return float("nan")
    tape.backward(out)
    analytic = t.grad if t.grad is not None else np.zeros_like(base)
    if indices is None:
        indices = list(np.ndindex(base.shape))
    worst = 0.0
    for idx in indices:
        probe = base.copy()
        probe[idx] += eps
        with no_grad():
            hi = float(f(Tensor(probe)).values)
        probe[idx] -= 2 * eps
        with no_grad():
            lo = float(f(Tensor(probe)).values)
        numeric = (hi - lo) / (2 * eps)
        a = float(analytic[idx])
        err = abs(a - numeric) / max(floor, abs(a), abs(numeric))
        if np.isnan(err):
            return float("nan")
        worst = max(worst, err)
    return worst
