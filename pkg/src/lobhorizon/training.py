"""Path cross-entropy, optimisers, and the training loop with early stopping."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as tn
from .checkpoint import ModelCheckpoint
from .data import NormStats, WindowSet
from .decoders import one_hot
from .errors import ConfigError, ContractError, NumericError, TrainingDivergence
from .evaluation import metrics
from .model import ForecastModel
from .tensor import Tape, Tensor

PROB_FLOOR = 1e-12


def cross_entropy_path_loss(probs: Tensor, targets) -> Tensor:
    """``-1/(B K) sum log p[b, k, target]`` with probabilities floored at 1e-12."""
    targets = np.asarray(targets)
    if probs.ndim != 3 or targets.shape != probs.shape[:2]:
        raise ContractError(f"targets {targets.shape} do not match predictions {probs.shape}")
    n = probs.shape[2]
    if targets.size and (targets.min() < 0 or targets.max() >= n or not np.issubdtype(targets.dtype, np.integer)):
        raise ContractError("targets must be integer class ids in {0, 1, 2}")
    b, k = targets.shape
    picked = tn.sum_(tn.log(probs, PROB_FLOOR) * Tensor(one_hot(targets, n)))
    return tn.mul(picked, -1.0 / (b * k))


def path_loss_value(probs: np.ndarray, targets: np.ndarray) -> float:
    p = np.take_along_axis(probs, targets[..., None].astype(np.intp), axis=-1)
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 5
    clip_norm: float = 5.0  # <= 0 disables clipping

    def validate(self) -> None:
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("adam needs 0 <= beta1, beta2 < 1 and eps > 0")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")

    def to_dict(self) -> dict:
        return asdict(self)


class Sgd:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params, self.lr = params, lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data -= self.lr * grads[name]


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params: dict[str, Tensor], cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale in place so the joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def loss_and_grads(model: ForecastModel, x: np.ndarray, y: np.ndarray,
                   teacher_forcing: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    params = model.parameters()
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        path, _ = model(x, targets=y if teacher_forcing else None, teacher_forcing=teacher_forcing)
        loss = cross_entropy_path_loss(path.probs, y)
    value = loss.item()
    if not math.isfinite(value):
        return value, {}
    tape.backward(loss)
    return value, {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: list[float]

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.val_f1))


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    log: list[EpochRecord]
    best_epoch: int
    model: ForecastModel = field(repr=False, default=None)


def validate_model(model: ForecastModel, val: WindowSet, batch_size: int = 256) -> tuple[float, list[float]]:
    probs, _ = model.predict_proba(val.inputs(), batch_size)
    with warnings.catch_warnings():
        # an early epoch that never predicts some class is routine; its F1 counts as 0
        warnings.simplefilter("ignore", UserWarning)
        report = metrics(probs.argmax(axis=-1), val.labels, "weighted")
    return path_loss_value(probs, val.labels), report.f1()


def train(model: ForecastModel, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig,
          norm_stats: NormStats, metadata: dict | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Mini-batch training; returns the checkpoint with the best validation weighted F1."""
    cfg.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractError(f"need non-empty train and validation sets, got {len(train_set)} and {len(val_set)}")
    if train_set.labels.shape[1] != model.horizon_steps:
        raise ContractError(f"labels have {train_set.labels.shape[1]} horizons, model emits {model.horizon_steps}")
    if train_set.books is val_set.books and np.intersect1d(train_set.ends, val_set.ends).size:
        raise ContractError("train and validation windows overlap")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = make_optimizer(params, cfg)
    tf = model.cfg.decoder.teacher_forcing
    meta = dict(metadata or {})
    meta.update(seed=cfg.seed, train=cfg.to_dict())

    log: list[EpochRecord] = []
    best_f1, best_epoch, stale = -math.inf, 0, 0
    best_params = {k: p.data.copy() for k, p in params.items()}
    batch_index = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                value, grads = loss_and_grads(model, train_set.inputs(idx), train_set.labels[idx], tf)
            except NumericError as exc:
                raise TrainingDivergence(f"{exc} at batch {batch_index} (epoch {epoch})", batch_index) from exc
            if not math.isfinite(value):
                raise TrainingDivergence(f"loss became {value} at batch {batch_index} (epoch {epoch})", batch_index)
            clip_global_norm(grads, cfg.clip_norm)
            opt.step(grads)
            losses.append(value)
            batch_index += 1
        val_loss, val_f1 = validate_model(model, val_set)
        rec = EpochRecord(epoch, float(np.mean(losses)), val_loss, val_f1)
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if rec.mean_f1 > best_f1:
            best_f1, best_epoch, stale = rec.mean_f1, epoch, 0
            best_params = {k: p.data.copy() for k, p in params.items()}
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    for k, p in params.items():
        p.data = best_params[k]
    meta.update(epoch=best_epoch, val_f1=best_f1 if log else None,
                val_f1_per_horizon=log[best_epoch - 1].val_f1 if best_epoch else None)
    return TrainResult(ModelCheckpoint.capture(model, norm_stats, meta), log, best_epoch, model)


def write_epoch_log(log: list[EpochRecord], path) -> None:
    k = len(log[0].val_f1) if log else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"] + [f"val_f1_h{j + 1}" for j in range(k)] + ["val_f1_mean"])
        for r in log:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)] + [repr(f) for f in r.val_f1]
                       + [repr(r.mean_f1)])
