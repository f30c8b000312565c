"""Encoder + decoder bundle: one forward pass yields every horizon step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoders import AttentionMap, DecoderConfig, ForecastPath, build_decoder
from .encoder import DeepLobEncoder, EncoderConfig
from .layers import Module
from .tensor import Tensor


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    decoder: DecoderConfig

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]))


class ForecastModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.encoder.validate()
        cfg.decoder.validate(cfg.encoder.lstm_hidden)
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = DeepLobEncoder(cfg.encoder, rng)
        self.decoder = build_decoder(cfg.decoder, cfg.encoder.lstm_hidden, rng)

    @property
    def horizon_steps(self) -> int:
        return self.cfg.decoder.horizon_steps

    def __call__(self, x, targets=None, teacher_forcing: bool | None = None
                 ) -> tuple[ForecastPath, AttentionMap | None]:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        enc = self.encoder.encode(x)
        return self.decoder(enc, targets, teacher_forcing)

    def predict_proba(self, x, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray | None]:
        """Free-running probabilities ``[N, K, 3]`` (and attention ``[N, K, T]`` if any)."""
        x = np.asarray(x)
        probs, attn = [], []
        for start in range(0, len(x), batch_size):
            path, amap = self(x[start:start + batch_size], teacher_forcing=False)
            probs.append(path.probs.data)
            if amap is not None:
                attn.append(amap.weights)
        if not probs:
            k, t = self.horizon_steps, self.cfg.encoder.window
            return np.zeros((0, k, 3)), (np.zeros((0, k, t)) if self.cfg.decoder.kind == "attention" else None)
        return np.concatenate(probs), (np.concatenate(attn) if attn else None)
