"""DeepLOB-style feature extractor: conv block -> inception -> LSTM."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .layers import Conv2d, InceptionBlock, LstmCell, Module
from .tensor import Tensor


@dataclass
class EncoderConfig:
    conv_filters: int = 16
    inception_filters: int = 32
    lstm_hidden: int = 64
    window: int = 50
    features: int = 40
    lstm_layers: int = 1
    slope: float = 0.01

    def validate(self) -> None:
        if self.features % 4 != 0 or self.features < 4:
            raise ConfigError(
                f"features={self.features} must be a positive multiple of 4 "
                "(price/volume x ask/bid per level)")
        if self.window < 1:
            raise ConfigError(f"window={self.window} must be >= 1")
        for name in ("conv_filters", "inception_filters", "lstm_hidden", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}={getattr(self, name)} must be >= 1")

    @property
    def levels(self) -> int:
        return self.features // 4

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    hidden_seq: Tensor  # [B, T, H]
    last_h: Tensor  # [B, H]
    last_c: Tensor  # [B, H]


class DeepLobEncoder(Module):
    """Maps ``x [B, T, m]`` to per-step LSTM hidden states.

    Feature layout per level is (ask price, ask volume, bid price, bid volume),
    so the first stride-2 conv pairs each price with its volume and the second
    pairs the ask side with the bid side.  The third conv spans all levels.
    Each stage is followed by two 4x1 ``same`` time convolutions.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c = cfg.conv_filters
        self.conv_blocks = []
        for in_c, kernel, stride in ((1, (1, 2), (1, 2)), (c, (1, 2), (1, 2)), (c, (1, cfg.levels), (1, 1))):
            self.conv_blocks.append(Conv2d(in_c, c, kernel, stride, "valid", rng, "NHWC"))
            self.conv_blocks.append(Conv2d(c, c, (4, 1), (1, 1), "same", rng, "NHWC"))
            self.conv_blocks.append(Conv2d(c, c, (4, 1), (1, 1), "same", rng, "NHWC"))
        self.inception = InceptionBlock(c, cfg.inception_filters, rng, cfg.slope, "NHWC")
        sizes = [self.inception.out_channels] + [cfg.lstm_hidden] * (cfg.lstm_layers - 1)
        self.lstms = [LstmCell(i, cfg.lstm_hidden, rng) for i in sizes]
        self.plan = self.shape_plan()

    def shape_plan(self) -> list[tuple[str, int, int, int]]:
        """(stage, channels, time, width) after every conv, checked at construction."""
        t, w = self.cfg.window, self.cfg.features
        plan = [("input", 1, t, w)]
        for i, conv in enumerate(self.conv_blocks):
            t, w = conv.output_shape(t, w)
            plan.append((f"conv{i}", conv.kernel.shape[0], t, w))
        if t != self.cfg.window or w != 1:
            raise ConfigError(f"conv block maps ({self.cfg.window}, {self.cfg.features}) to ({t}, {w}); "
                              "expected the time axis intact and width 1")
        plan.append(("inception", self.inception.out_channels, t, 1))
        plan.append(("lstm", self.cfg.lstm_hidden, t, 1))
        return plan

    def conv_features(self, x: Tensor) -> Tensor:
        """Conv block plus inception, returned as a ``[B, T, 3F]`` sequence."""
        b, t, m = x.shape
        h = tn.reshape(x, (b, t, m, 1))  # channels-last
        for conv in self.conv_blocks:
            h = tn.leaky_relu(conv(h), self.cfg.slope)
        h = self.inception(h)  # [B, T, 1, 3F]
        return tn.reshape(h, (b, t, self.inception.out_channels))

    def __call__(self, x: Tensor) -> EncoderOutput:
        return self.encode(x)

    def encode(self, x: Tensor) -> EncoderOutput:
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1:] != (cfg.window, cfg.features):
            raise DimensionError(f"encode: expected [B, {cfg.window}, {cfg.features}], got {x.shape}")
        seq = self.conv_features(x)
        b = x.shape[0]
        for cell in self.lstms:
            h0 = Tensor(np.zeros((b, cfg.lstm_hidden)))
            c0 = Tensor(np.zeros((b, cfg.lstm_hidden)))
            outputs, h, c = cell.run(seq, h0, c0)
            seq = tn.stack(outputs, axis=1)
        return EncoderOutput(hidden_seq=seq, last_h=h, last_c=c)
