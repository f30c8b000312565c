"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded whenever at
least one input requires a gradient.  ``Tape.backward`` replays the recorded
operations in reverse, so every operation is visited exactly once and the
recording order is already topological.

Backward rules live in the module-level ``BACKWARD`` registry, keyed by the
operation name.  They are looked up at replay time.

No broadcasting is performed except between a tensor and a Python scalar;
use :func:`expand` to repeat a tensor along a new axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

DTYPE = np.float64

# shifted logits are floored here so every softmax probability stays > 0
_SOFTMAX_FLOOR = -700.0


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE, copy=True, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=DTYPE)
        t.requires_grad = False
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return self.shape[0]

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Operation:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict = field(default_factory=dict)


BACKWARD: dict[str, Callable[[dict, np.ndarray], Sequence[np.ndarray | None]]] = {}

_TAPES: list["Tape"] = []


def backward_rule(name: str):
    def register(fn):
        BACKWARD[name] = fn
        return fn
    return register


class Tape:
    """Ordered record of differentiable operations.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = sum_(x * x)
    >>> tape.backward(y)
    >>> x.grad.tolist()
    [2.0, 4.0]
    """

    def __init__(self):
        self.operations: list[Operation] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.operations)

    def record(self, op: Operation) -> None:
        self.operations.append(op)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if seed is None:
            if loss.data.size != 1:
                raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=DTYPE)}
        produced = {id(op.output) for op in self.operations}
        if id(loss) not in produced:
            if loss.requires_grad:
                _accumulate(loss, grads[id(loss)])
            return
        for op in reversed(self.operations):
            g = grads.pop(id(op.output), None)
            if g is None:
                continue
            in_grads = BACKWARD[op.name](op.ctx, g)
            for t, gi in zip(op.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key not in produced:
                    _accumulate(t, gi)
                elif key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(name: str, data: np.ndarray, inputs: Sequence[Tensor], ctx: dict | None = None) -> Tensor:
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Operation(name, tuple(inputs), out, ctx if ctx is not None else {}))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _emit("add_scalar", a.data + float(b), [a])
    if not isinstance(a, Tensor):
        return add(b, a)
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, [a, b])


@backward_rule("add")
def _add_bw(ctx, g):
    return g, g


@backward_rule("add_scalar")
def _add_scalar_bw(ctx, g):
    return (g,)


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    a = as_tensor(a)
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, [a, b])


@backward_rule("sub")
def _sub_bw(ctx, g):
    return g, -g


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, [a])


@backward_rule("neg")
def _neg_bw(ctx, g):
    return (-g,)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        s = float(b)
        return _emit("mul_scalar", a.data * s, [a], {"s": s})
    if not isinstance(a, Tensor):
        return mul(b, a)
    _same_shape("mul", a, b)
    return _emit("mul", a.data * b.data, [a, b], {"a": a.data, "b": b.data})


@backward_rule("mul")
def _mul_bw(ctx, g):
    return g * ctx["b"], g * ctx["a"]


@backward_rule("mul_scalar")
def _mul_scalar_bw(ctx, g):
    return (g * ctx["s"],)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, [x], {"y": y})


@backward_rule("tanh")
def _tanh_bw(ctx, g):
    y = ctx["y"]
    return (g * (1.0 - y * y),)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _emit("sigmoid", y, [x], {"y": y})


@backward_rule("sigmoid")
def _sigmoid_bw(ctx, g):
    y = ctx["y"]
    return (g * y * (1.0 - y),)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    d = np.where(x.data > 0, 1.0, slope)
    return _emit("leaky_relu", x.data * d, [x], {"d": d})


@backward_rule("leaky_relu")
def _leaky_relu_bw(ctx, g):
    return (g * ctx["d"],)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", y, [x], {"y": y})


@backward_rule("exp")
def _exp_bw(ctx, g):
    return (g * ctx["y"],)


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; zero gradient where the floor binds."""
    clipped = np.maximum(x.data, floor) if floor > 0 else x.data
    with np.errstate(divide="ignore"):
        y = np.log(clipped)
    return _emit("log", y, [x], {"x": clipped, "live": x.data >= floor})


@backward_rule("log")
def _log_bw(ctx, g):
    return (np.where(ctx["live"], g / ctx["x"], 0.0),)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum_(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    return _emit("sum", np.asarray(x.data.sum(axis=axis)), [x], {"shape": x.shape, "axis": axis})


@backward_rule("sum")
def _sum_bw(ctx, g):
    shape, axis = ctx["shape"], ctx["axis"]
    if axis is None:
        return (np.broadcast_to(g, shape).copy(),)
    axes = (axis,) if isinstance(axis, int) else axis
    axes = tuple(a % len(shape) for a in axes)
    return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit("reshape", x.data.reshape(shape), [x], {"shape": x.shape})


@backward_rule("reshape")
def _reshape_bw(ctx, g):
    return (g.reshape(ctx["shape"]),)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    return _emit("transpose", np.ascontiguousarray(x.data.transpose(axes)), [x], {"axes": axes})


@backward_rule("transpose")
def _transpose_bw(ctx, g):
    return (g.transpose(np.argsort(ctx["axes"])),)


def getitem(x: Tensor, index) -> Tensor:
    return _emit("getitem", np.array(x.data[index]), [x], {"shape": x.shape, "index": index})


@backward_rule("getitem")
def _getitem_bw(ctx, g):
    out = np.zeros(ctx["shape"], dtype=DTYPE)
    np.add.at(out, ctx["index"], g)
    return (out,)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat: shape mismatch {ref} vs {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    return _emit("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors,
                 {"axis": ax, "sizes": sizes})


@backward_rule("concat")
def _concat_bw(ctx, g):
    cuts = np.cumsum(ctx["sizes"])[:-1]
    return np.split(g, cuts, axis=ctx["axis"])


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    return _emit("stack", np.stack([t.data for t in tensors], axis=axis), tensors, {"axis": axis})


@backward_rule("stack")
def _stack_bw(ctx, g):
    return [np.take(g, i, axis=ctx["axis"]) for i in range(g.shape[ctx["axis"]])]


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``x`` ``n`` times along it."""
    data = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _emit("expand", data, [x], {"axis": axis})


@backward_rule("expand")
def _expand_bw(ctx, g):
    return (g.sum(axis=ctx["axis"]),)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Accepted forms: ``[M,K] @ [K,N]``; ``[...,K] @ [K,N]`` (map over the last
    axis); ``[B,M,K] @ [B,K,N]`` (batched, equal batch sizes).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ {a.shape} vs {b.shape}")
    if b.ndim == 2:
        mode = "2d"
    elif a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0]:
        mode = "batched"
    else:
        raise DimensionError(f"matmul: unsupported operand shapes {a.shape} and {b.shape}")
    return _emit("matmul", np.matmul(a.data, b.data), [a, b], {"a": a.data, "b": b.data, "mode": mode})


@backward_rule("matmul")
def _matmul_bw(ctx, g):
    a, b = ctx["a"], ctx["b"]
    if ctx["mode"] == "batched":
        return g @ b.transpose(0, 2, 1), a.transpose(0, 2, 1) @ g
    da = g @ b.T
    k = a.shape[-1]
    db = a.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
    return da, db


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis of ``x``; ``w`` is ``[out, in]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    inputs = [x, w] if b is None else [x, w, b]
    return _emit("linear", y, inputs, {"x": x.data, "w": w.data, "bias": b is not None})


@backward_rule("linear")
def _linear_bw(ctx, g):
    x, w = ctx["x"], ctx["w"]
    g2 = g.reshape(-1, g.shape[-1])
    dx = g @ w
    dw = g2.T @ x.reshape(-1, x.shape[-1])
    if ctx["bias"]:
        return dx, dw, g2.sum(axis=0)
    return dx, dw


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    floored = shifted < _SOFTMAX_FLOOR
    e = np.exp(np.maximum(shifted, _SOFTMAX_FLOOR))
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, [x], {"y": y, "axis": axis, "floored": floored})


@backward_rule("softmax")
def _softmax_bw(ctx, g):
    y, axis = ctx["y"], ctx["axis"]
    gy = g * y
    dx = gy - y * gy.sum(axis=axis, keepdims=True)
    if ctx["floored"].any():
        dx = np.where(ctx["floored"], 0.0, dx)
    return (dx,)


# ---------------------------------------------------------------------------
# convolution and pooling
#
# Kernels are always [O, C, kh, kw].  Feature maps are [B, C, H, W] by default;
# ``layout="NHWC"`` takes [B, H, W, C], which the encoder uses internally to
# avoid transposes.


def _same_pads(size: int, k: int, s: int) -> tuple[int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-size // s)
    return (size - k) // s + 1


def _pad_nhwc(x: np.ndarray, kh, kw, sh, sw, padding, value=0.0):
    if padding == "valid":
        return x, (0, 0, 0, 0)
    ph = _same_pads(x.shape[1], kh, sh)
    pw = _same_pads(x.shape[2], kw, sw)
    if ph == (0, 0) and pw == (0, 0):
        return x, (0, 0, 0, 0)
    # np.pad is general but slow for the small arrays seen here
    b, h, w, c = x.shape
    xp = np.full((b, h + ph[0] + ph[1], w + pw[0] + pw[1], c), value, dtype=x.dtype)
    xp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + w, :] = x
    return xp, (ph[0], ph[1], pw[0], pw[1])


def _crop(dxp: np.ndarray, pads) -> np.ndarray:
    t, bt, l, r = pads
    return dxp[:, t:dxp.shape[1] - bt, l:dxp.shape[2] - r, :]


def _check_layout(layout: str) -> None:
    if layout not in ("NCHW", "NHWC"):
        raise ContractError(f"unknown layout {layout!r}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride=(1, 1), padding: str = "valid",
           layout: str = "NCHW") -> Tensor:
    """Cross-correlation (no kernel flip) of ``x`` with ``w [O, C, kh, kw]`` plus bias.

    ``same`` padding puts the extra row/column of an odd total at the end.
    """
    _check_layout(layout)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    channels = x.shape[1] if layout == "NCHW" else x.shape[3]
    if channels != w.shape[1]:
        raise DimensionError(f"conv2d: input channels of {x.shape} ({layout}) do not match kernel {w.shape}")
    if padding not in ("valid", "same"):
        raise ContractError(f"conv2d: unknown padding {padding!r}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
    o, c, kh, kw = w.shape
    sh, sw = stride
    xd = x.data if layout == "NHWC" else x.data.transpose(0, 2, 3, 1)
    xp, pads = _pad_nhwc(xd, kh, kw, sh, sw, padding)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise DimensionError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    bsz = xp.shape[0]
    ho = (xp.shape[1] - kh) // sh + 1
    wo = (xp.shape[2] - kw) // sw + 1
    if kh == 1 and kw == 1 and sh == 1 and sw == 1:
        cols = xp.reshape(-1, c)
    else:
        s0, s1, s2, s3 = xp.strides
        win = np.lib.stride_tricks.as_strided(xp, (bsz, ho, wo, c, kh, kw),
                                              (s0, s1 * sh, s2 * sw, s3, s1, s2), writeable=False)
        cols = win.reshape(bsz * ho * wo, c * kh * kw)
    w2 = w.data.reshape(o, c * kh * kw)
    out = cols @ w2.T
    if b is not None:
        out += b.data
    out = out.reshape(bsz, ho, wo, o)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    inputs = [x, w] if b is None else [x, w, b]
    ctx = {"cols": cols, "w": w.data, "xp_shape": xp.shape, "pads": pads, "stride": stride,
           "bias": b is not None, "layout": layout, "out_hw": (ho, wo)}
    return _emit("conv2d", out, inputs, ctx)


@backward_rule("conv2d")
def _conv2d_bw(ctx, g):
    cols, w = ctx["cols"], ctx["w"]
    sh, sw = ctx["stride"]
    o, c, kh, kw = w.shape
    ho, wo = ctx["out_hw"]
    if ctx["layout"] == "NCHW":
        g = g.transpose(0, 2, 3, 1)
    g2 = np.ascontiguousarray(g).reshape(-1, o)
    w2 = w.reshape(o, c * kh * kw)
    dw = (g2.T @ cols).reshape(w.shape)
    dcols = g2 @ w2
    bsz = ctx["xp_shape"][0]
    if kh == 1 and kw == 1 and sh == 1 and sw == 1:
        dxp = dcols.reshape(ctx["xp_shape"])
    else:
        dcols = dcols.reshape(bsz, ho, wo, c, kh, kw)
        dxp = np.zeros(ctx["xp_shape"], dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += dcols[..., i, j]
    dx = _crop(dxp, ctx["pads"])
    if ctx["layout"] == "NCHW":
        dx = dx.transpose(0, 3, 1, 2)
    if ctx["bias"]:
        return dx, dw, g2.sum(axis=0)
    return dx, dw


def max_pool2d(x: Tensor, size=(3, 1), padding: str = "same", layout: str = "NCHW") -> Tensor:
    """Stride-1 max pooling; ``same`` pads with -inf so padding never wins."""
    _check_layout(layout)
    kh, kw = size
    xd = x.data if layout == "NHWC" else x.data.transpose(0, 2, 3, 1)
    xp, pads = _pad_nhwc(xd, kh, kw, 1, 1, padding, value=-np.inf)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise DimensionError(f"max_pool2d: window {size} larger than input {x.shape}")
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    out = xp[:, :ho, :wo, :]
    arg = np.zeros(out.shape, dtype=np.intp)
    for i in range(kh):
        for j in range(kw):
            if i == 0 and j == 0:
                continue
            cand = xp[:, i:i + ho, j:j + wo, :]
            better = cand > out
            out = np.where(better, cand, out)
            arg[better] = i * kw + j
    out = np.ascontiguousarray(out)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return _emit("max_pool2d", out, [x], {"arg": arg, "size": size, "xp_shape": xp.shape,
                                          "pads": pads, "layout": layout})


@backward_rule("max_pool2d")
def _max_pool2d_bw(ctx, g):
    kh, kw = ctx["size"]
    arg = ctx["arg"]
    if ctx["layout"] == "NCHW":
        g = g.transpose(0, 2, 3, 1)
    _, ho, wo, _ = g.shape
    dxp = np.zeros(ctx["xp_shape"], dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + ho, j:j + wo, :] += np.where(arg == i * kw + j, g, 0.0)
    dx = _crop(dxp, ctx["pads"])
    if ctx["layout"] == "NCHW":
        dx = dx.transpose(0, 3, 1, 2)
    return (dx,)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5, order: int = 2) -> float:
    """Max relative error between the tape gradient of scalar ``f`` at ``x`` and
    central differences.

    ``x`` is perturbed in place, so ``f`` may equally close over ``x`` (for
    example a layer parameter) and ignore its argument.  The step is the
    smallest power of two not below ``eps``, so ``x +- step`` is exact for
    entries of moderate magnitude.  ``order=4`` uses the five-point stencil,
    whose truncation error is O(step^4) instead of O(step^2).
    """
    if not eps > 0:
        raise ContractError(f"grad_check: eps must be positive, got {eps}")
    if order not in (2, 4):
        raise ContractError(f"grad_check: order must be 2 or 4, got {order}")
    eps = 2.0 ** math.ceil(math.log2(eps))
    was = x.requires_grad
    x.requires_grad = True
    saved = x.grad
    x.grad = None
    try:
        with Tape() as tape:
            out = f(x)
        if out.data.size != 1:
            raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
        tape.backward(out)
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        numeric = np.empty_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]

            def at(step):
                flat[i] = orig + step
                return float(f(x).data.reshape(-1)[0])

            d1 = at(eps) - at(-eps)
            if order == 2:
                numeric.reshape(-1)[i] = d1 / (2.0 * eps)
            else:
                d2 = at(2 * eps) - at(-2 * eps)
                numeric.reshape(-1)[i] = (8.0 * d1 - d2) / (12.0 * eps)
            flat[i] = orig
    finally:
        x.requires_grad = was
        x.grad = saved
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


def nonsmooth_margin(tape: Tape) -> float:
    """Distance of the recorded forward pass from the nearest kink.

    Smallest ``|input|`` over leaky-ReLU operations and smallest gap between
    the two largest values of any max-pool window.  Central differences are
    only meaningful when this is large compared with the step size.
    """
    margin = np.inf
    for op in tape.operations:
        if op.name == "leaky_relu":
            margin = min(margin, float(np.abs(op.inputs[0].data).min()))
        elif op.name == "max_pool2d":
            kh, kw = op.ctx["size"]
            if kh * kw < 2:
                continue
            x = op.inputs[0].data
            if op.ctx["layout"] == "NCHW":
                x = x.transpose(0, 2, 3, 1)
            t, bt, l, r = op.ctx["pads"]
            xp = np.pad(x, ((0, 0), (t, bt), (l, r), (0, 0)), constant_values=-np.inf)
            win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
            top2 = np.sort(win.reshape(win.shape[:4] + (kh * kw,)), axis=-1)[..., -2:]
            gap = top2[..., 1] - top2[..., 0]
            margin = min(margin, float(gap.min()))
    return margin


def parameter_count(tensors) -> int:
    return int(sum(math.prod(t.shape) for t in tensors))
