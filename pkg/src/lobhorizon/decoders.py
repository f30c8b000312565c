"""Multi-horizon decoders: Seq2Seq and attention heads producing a K-step path.

Both decoders start from the encoder's final ``(h, c)``, feed the previous
output back as an embedded class (a learned start row at step one), and emit a
softmax over ``num_classes`` per step.  With teacher forcing the previous
output is the true label; otherwise it is the one-hot argmax of the previous
step's prediction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .encoder import EncoderOutput
from .errors import ConfigError, ContractError, DimensionError
from .layers import Dense, LstmCell, Module, glorot
from .tensor import Tensor

SCORES = ("dot", "general", "concat")


@dataclass
class DecoderConfig:
    kind: str = "attention"  # "seq2seq" | "attention"
    hidden: int = 64
    num_classes: int = 3
    horizon_steps: int = 5
    score: str = "dot"
    teacher_forcing: bool = True
    embedding: int = 8
    attention_dim: int = 0  # concat score only; 0 means "same as hidden"

    def validate(self, encoder_hidden: int | None = None) -> None:
        if self.kind not in ("seq2seq", "attention"):
            raise ConfigError(f"decoder kind must be 'seq2seq' or 'attention', got {self.kind!r}")
        if self.horizon_steps < 1:
            raise ConfigError(f"horizon_steps={self.horizon_steps} must be >= 1")
        if self.num_classes != 3:
            raise ConfigError(f"num_classes must be 3 (down/stationary/up), got {self.num_classes}")
        if self.score not in SCORES:
            raise ConfigError(f"score must be one of {SCORES}, got {self.score!r}")
        if self.hidden < 1 or self.embedding < 1:
            raise ConfigError("hidden and embedding sizes must be >= 1")
        if encoder_hidden is not None and encoder_hidden != self.hidden:
            raise ConfigError(
                f"decoder hidden={self.hidden} must equal encoder hidden={encoder_hidden}: "
                "the decoder state is initialised from the encoder's final state")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForecastPath:
    probs: Tensor  # [B, K, n]

    def classes(self) -> np.ndarray:
        return self.probs.data.argmax(axis=-1)


@dataclass
class AttentionMap:
    weights: np.ndarray  # [B, K, T]


def one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (n,))
    np.put_along_axis(out, labels[..., None].astype(np.intp), 1.0, axis=-1)
    return out


def attention_score(score: str, h_dec_prev: Tensor, h_enc: Tensor, w_a: Tensor | None = None,
                    v: Tensor | None = None) -> Tensor:
    """Alignment scores ``[B, T]`` between the previous decoder state and every encoder state.

    dot: ``h_i . h'``; general: ``h_i . (W_a h')``; concat: ``v . tanh(W_a [h_i ; h'])``.
    """
    b, t, h = h_enc.shape
    hd = h_dec_prev.shape[1]
    if score == "dot":
        if h != hd:
            raise ConfigError(f"dot score needs equal encoder/decoder sizes, got {h} and {hd}")
        query = h_dec_prev
    elif score == "general":
        if w_a is None or w_a.shape != (h, hd):
            raise DimensionError(f"general score needs W_a of shape {(h, hd)}, got {None if w_a is None else w_a.shape}")
        query = tn.linear(h_dec_prev, w_a)
    elif score == "concat":
        if w_a is None or v is None or w_a.shape[1] != h + hd or v.shape != (w_a.shape[0], 1):
            raise DimensionError("concat score needs W_a [A, H + H'] and v [A, 1]")
        joined = tn.concat([h_enc, tn.expand(h_dec_prev, 1, t)], axis=2)
        energy = tn.tanh(tn.linear(joined, w_a))
        return tn.reshape(tn.matmul(energy, v), (b, t))
    else:
        raise ConfigError(f"unknown score {score!r}")
    return tn.reshape(tn.matmul(h_enc, tn.reshape(query, (b, hd, 1))), (b, t))


class _Decoder(Module):
    def __init__(self, cfg: DecoderConfig, context_size: int, rng: np.random.Generator):
        cfg.validate()
        n = cfg.num_classes
        self.cfg = cfg
        # rows 0..n-1 embed the classes, row n is the start token
        self.embedding = glorot(rng, (n + 1, cfg.embedding), n + 1, cfg.embedding)
        self.cell = LstmCell(cfg.embedding + context_size, cfg.hidden, rng)
        self.out = Dense(cfg.hidden + context_size, n, rng)

    def _previous(self, step: int, batch: int, targets, probs_prev) -> Tensor:
        n = self.cfg.num_classes
        if step == 0:
            idx = np.full(batch, n)
        elif targets is not None:
            idx = targets[:, step - 1]
        else:
            idx = probs_prev.data.argmax(axis=1)
        return tn.matmul(Tensor(one_hot(idx, n + 1)), self.embedding)

    def _prepare(self, enc: EncoderOutput, targets, teacher_forcing):
        tf = self.cfg.teacher_forcing if teacher_forcing is None else teacher_forcing
        if tf and targets is None:
            raise ContractError("teacher forcing requires targets")
        if enc.last_h.shape[1] != self.cfg.hidden:
            raise DimensionError(f"decoder hidden {self.cfg.hidden} does not match encoder state {enc.last_h.shape}")
        if not tf:
            return None
        targets = np.asarray(targets)
        b = enc.last_h.shape[0]
        if targets.shape != (b, self.cfg.horizon_steps):
            raise DimensionError(f"targets shape {targets.shape} != {(b, self.cfg.horizon_steps)}")
        if targets.min() < 0 or targets.max() >= self.cfg.num_classes:
            raise ContractError("targets must be class ids in {0, 1, 2}")
        return targets

    def _emit_step(self, h: Tensor, context: Tensor) -> Tensor:
        return tn.softmax(self.out(tn.concat([h, context], axis=1)), axis=1)


class Seq2SeqDecoder(_Decoder):
    """Context is the encoder's last hidden state, fed to every step's input and output."""

    def __init__(self, cfg: DecoderConfig, encoder_hidden: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg.validate(encoder_hidden)
        super().__init__(cfg, encoder_hidden, rng)

    def decode(self, enc: EncoderOutput, targets=None, teacher_forcing: bool | None = None) -> ForecastPath:
        targets = self._prepare(enc, targets, teacher_forcing)
        b = enc.last_h.shape[0]
        ctx = enc.last_h
        h, c = enc.last_h, enc.last_c
        probs = None
        steps = []
        for k in range(self.cfg.horizon_steps):
            prev = self._previous(k, b, targets, probs)
            h, c = self.cell.step(tn.concat([prev, ctx], axis=1), h, c)
            probs = self._emit_step(h, ctx)
            steps.append(probs)
        return ForecastPath(tn.stack(steps, axis=1))

    def __call__(self, enc, targets=None, teacher_forcing=None):
        return self.decode(enc, targets, teacher_forcing), None


class AttentionDecoder(_Decoder):
    """Per-step context is a softmax-weighted sum of all encoder states."""

    def __init__(self, cfg: DecoderConfig, encoder_hidden: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg.validate(encoder_hidden)
        super().__init__(cfg, encoder_hidden, rng)
        h = encoder_hidden
        if cfg.score == "general":
            self.w_a = glorot(rng, (h, cfg.hidden), h, cfg.hidden)
        elif cfg.score == "concat":
            a = cfg.attention_dim or cfg.hidden
            self.w_a = glorot(rng, (a, h + cfg.hidden), h + cfg.hidden, a)
            self.v = glorot(rng, (a, 1), a, 1)

    def decode(self, enc: EncoderOutput, targets=None,
               teacher_forcing: bool | None = None) -> tuple[ForecastPath, AttentionMap]:
        targets = self._prepare(enc, targets, teacher_forcing)
        b, t, hs = enc.hidden_seq.shape
        w_a = getattr(self, "w_a", None)
        v = getattr(self, "v", None)
        h, c = enc.last_h, enc.last_c
        probs = None
        steps, alphas = [], []
        for k in range(self.cfg.horizon_steps):
            scores = attention_score(self.cfg.score, h, enc.hidden_seq, w_a, v)
            alpha = tn.softmax(scores, axis=1)
            ctx = tn.reshape(tn.matmul(tn.reshape(alpha, (b, 1, t)), enc.hidden_seq), (b, hs))
            prev = self._previous(k, b, targets, probs)
            h, c = self.cell.step(tn.concat([prev, ctx], axis=1), h, c)
            probs = self._emit_step(h, ctx)
            steps.append(probs)
            alphas.append(alpha.data)
        return ForecastPath(tn.stack(steps, axis=1)), AttentionMap(np.stack(alphas, axis=1))

    def __call__(self, enc, targets=None, teacher_forcing=None):
        return self.decode(enc, targets, teacher_forcing)


def build_decoder(cfg: DecoderConfig, encoder_hidden: int, rng: np.random.Generator | None = None):
    cls = Seq2SeqDecoder if cfg.kind == "seq2seq" else AttentionDecoder
    return cls(cfg, encoder_hidden, rng)


def seq2seq_decode(decoder: Seq2SeqDecoder, enc: EncoderOutput, targets=None,
                   teacher_forcing: bool | None = None) -> ForecastPath:
    return decoder.decode(enc, targets, teacher_forcing)


def attention_decode(decoder: AttentionDecoder, enc: EncoderOutput, targets=None,
                     teacher_forcing: bool | None = None) -> tuple[ForecastPath, AttentionMap]:
    return decoder.decode(enc, targets, teacher_forcing)
