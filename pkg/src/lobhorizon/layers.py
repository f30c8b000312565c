"""Parameterised layers: convolution, dense, LSTM cell, inception block."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError
from .tensor import Tensor


class Module:
    """Parameter container.

    Parameters are the ``Tensor`` attributes with ``requires_grad`` set;
    sub-modules (attributes or lists of modules) are walked recursively in
    attribute order, giving stable dotted names.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: tuple[int, int],
                 stride: tuple[int, int] = (1, 1), padding: str = "valid",
                 rng: np.random.Generator | None = None, layout: str = "NCHW"):
        if min(in_channels, out_channels, *kernel, *stride) < 1:
            raise ContractError(f"Conv2d: non-positive dimension in {in_channels, out_channels, kernel, stride}")
        if padding not in ("valid", "same"):
            raise ContractError(f"Conv2d: unknown padding {padding!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel
        self.kernel = glorot(rng, (out_channels, in_channels, kh, kw),
                             in_channels * kh * kw, out_channels * kh * kw)
        self.bias = zeros(out_channels)
        self.stride = tuple(stride)
        self.padding = padding
        self.layout = layout

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        _, _, kh, kw = self.kernel.shape
        return (tn.conv_output_size(height, kh, self.stride[0], self.padding),
                tn.conv_output_size(width, kw, self.stride[1], self.padding))

    def __call__(self, x: Tensor) -> Tensor:
        return tn.conv2d(x, self.kernel, self.bias, self.stride, self.padding, self.layout)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot(rng, (out_features, in_features), in_features, out_features)
        self.bias = zeros(out_features)

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(self.weight, self.bias, x)


def dense_forward(w: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """``x @ w.T + b`` for ``x [B, I]``, ``w [O, I]``, ``b [O]``."""
    return tn.linear(x, w, b)


class LstmCell(Module):
    """Single LSTM cell.

    ``weight`` is ``[4H, H + I]``: row blocks are the input, forget, cell and
    output gates in that order; columns are the previous hidden state followed
    by the input.  The forget-gate bias starts at 1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        h = hidden_size
        limit = math.sqrt(1.0 / h)
        self.weight = Tensor(rng.uniform(-limit, limit, size=(4 * h, h + input_size)), requires_grad=True)
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0
        self.bias = Tensor(bias, requires_grad=True)
        self.hidden_size = h
        self.input_size = input_size

    def _check(self, x: Tensor, h: Tensor, c: Tensor) -> None:
        hs = self.hidden_size
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise DimensionError(f"lstm_step: input {x.shape} does not match input size {self.input_size}")
        if h.shape != (x.shape[0], hs) or c.shape != (x.shape[0], hs):
            raise DimensionError(f"lstm_step: states {h.shape}, {c.shape} do not match [{x.shape[0]}, {hs}]")

    def _gates(self, z: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hs = self.hidden_size
        i = tn.sigmoid(z[:, :hs])
        f = tn.sigmoid(z[:, hs:2 * hs])
        g = tn.tanh(z[:, 2 * hs:3 * hs])
        o = tn.sigmoid(z[:, 3 * hs:])
        c_new = f * c + i * g
        return o * tn.tanh(c_new), c_new

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        self._check(x, h, c)
        z = tn.linear(tn.concat([h, x], axis=1), self.weight, self.bias)
        return self._gates(z, c)

    def run(self, seq: Tensor, h: Tensor, c: Tensor) -> tuple[list[Tensor], Tensor, Tensor]:
        """Unroll over ``seq [B, T, I]``; the input projection is computed once."""
        if seq.ndim != 3 or seq.shape[2] != self.input_size:
            raise DimensionError(f"lstm: sequence {seq.shape} does not match input size {self.input_size}")
        hs = self.hidden_size
        if h.shape != (seq.shape[0], hs) or c.shape != (seq.shape[0], hs):
            raise DimensionError(f"lstm: states {h.shape}, {c.shape} do not match [{seq.shape[0]}, {hs}]")
        w_rec = self.weight[:, :hs]
        w_in = self.weight[:, hs:]
        proj = tn.linear(seq, w_in, self.bias)
        w_rec_t = tn.transpose(w_rec)
        outputs = []
        for t in range(seq.shape[1]):
            z = proj[:, t] + h @ w_rec_t
            h, c = self._gates(z, c)
            outputs.append(h)
        return outputs, h, c


def lstm_step(cell: LstmCell, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    return cell.step(x, h, c)


def conv2d_forward(layer: Conv2d, x: Tensor) -> Tensor:
    return layer(x)


class InceptionBlock(Module):
    """Three parallel time-convolution branches concatenated on channels.

    Branches: 1x1 -> 3x1, 1x1 -> 5x1, and 3x1 max-pool -> 1x1.  Every conv is
    followed by leaky ReLU; all time padding is ``same``.  Input is
    ``[B, C, T, 1]`` (or ``[B, T, 1, C]`` with ``layout="NHWC"``).
    """

    def __init__(self, in_channels: int, filters: int, rng: np.random.Generator | None = None,
                 slope: float = 0.01, layout: str = "NCHW"):
        rng = rng if rng is not None else np.random.default_rng(0)
        f = filters
        conv = lambda i, o, k, pad="valid": Conv2d(i, o, k, padding=pad, rng=rng, layout=layout)  # noqa: E731
        self.branch3 = [conv(in_channels, f, (1, 1)), conv(f, f, (3, 1), "same")]
        self.branch5 = [conv(in_channels, f, (1, 1)), conv(f, f, (5, 1), "same")]
        self.pool_proj = conv(in_channels, f, (1, 1))
        self.filters = f
        self.slope = slope
        self.layout = layout

    @property
    def out_channels(self) -> int:
        return 3 * self.filters

    def __call__(self, x: Tensor) -> Tensor:
        width_axis, channel_axis = (3, 1) if self.layout == "NCHW" else (2, 3)
        if x.ndim != 4 or x.shape[width_axis] != 1:
            raise ContractError(f"inception: expected a singleton-width {self.layout} feature map, got {x.shape}")
        act = lambda t: tn.leaky_relu(t, self.slope)  # noqa: E731
        a = act(self.branch3[1](act(self.branch3[0](x))))
        b = act(self.branch5[1](act(self.branch5[0](x))))
        c = act(self.pool_proj(tn.max_pool2d(x, (3, 1), "same", self.layout)))
        return tn.concat([a, b, c], axis=channel_axis)


def inception_forward(block: InceptionBlock, x: Tensor) -> Tensor:
    return block(x)
