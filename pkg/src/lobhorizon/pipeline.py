"""Glue shared by the CLI, the experiment scripts and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (DataConfig, LobSeries, NormStats, WindowSet, balanced_alphas, load_norm_stats,
                   make_label_paths, zscore_normalize)
from .decoders import DecoderConfig
from .encoder import EncoderConfig
from .model import ForecastModel, ModelConfig
from .training import TrainConfig, TrainResult, train


@dataclass
class PreparedData:
    train: WindowSet
    val: WindowSet
    norm_stats: NormStats
    alphas: list[float]
    horizons: list[int]


def resolve_alphas(series: LobSeries, dcfg: DataConfig) -> list[float]:
    return list(dcfg.alphas) if dcfg.alphas is not None else balanced_alphas(series, dcfg.horizons)


def resolve_norm_stats(series: LobSeries, dcfg: DataConfig) -> NormStats:
    if dcfg.normalization == "train":
        return NormStats.from_series(series, source=f"train:{series.instrument}[0:{len(series)}]")
    return load_norm_stats(dcfg.normalization)


def windows(series: LobSeries, dcfg: DataConfig, alphas, norm: NormStats, stride: int | None = None) -> WindowSet:
    paths = make_label_paths(series, dcfg.horizons, alphas)
    return WindowSet.build(zscore_normalize(series, norm), paths, dcfg.window,
                           dcfg.stride if stride is None else stride)


def split_series(series: LobSeries, val_fraction: float = 0.2) -> tuple[LobSeries, LobSeries]:
    """Chronological split: the tail is held out, never shuffled in."""
    cut = int(round(len(series) * (1.0 - val_fraction)))
    return series.slice(0, cut), series.slice(cut, len(series))


def prepare(train_series: LobSeries, val_series: LobSeries, dcfg: DataConfig,
            val_stride: int | None = None) -> PreparedData:
    """Alphas and NormStats come from the training series only."""
    dcfg.validate()
    alphas = resolve_alphas(train_series, dcfg)
    norm = resolve_norm_stats(train_series, dcfg)
    return PreparedData(windows(train_series, dcfg, alphas, norm),
                        windows(val_series, dcfg, alphas, norm, val_stride),
                        norm, alphas, list(dcfg.horizons))


def reduced_model_config(kind: str = "attention", score: str = "dot", horizons: int = 5,
                         window: int = 50, features: int = 40, conv_filters: int = 8,
                         inception_filters: int = 8, hidden: int = 16) -> ModelConfig:
    """Desk-scale architecture used by the synthetic experiments."""
    return ModelConfig(
        EncoderConfig(conv_filters=conv_filters, inception_filters=inception_filters, lstm_hidden=hidden,
                      window=window, features=features),
        DecoderConfig(kind=kind, hidden=hidden, horizon_steps=horizons, score=score))


def fit(model_cfg: ModelConfig, data: PreparedData, tcfg: TrainConfig, on_epoch=None,
        extra_meta: dict | None = None) -> TrainResult:
    model = ForecastModel(model_cfg, seed=tcfg.seed)
    meta = {"horizons": data.horizons, "alphas": [float(a) for a in data.alphas]}
    meta.update(extra_meta or {})
    return train(model, data.train, data.val, tcfg, data.norm_stats, meta, on_epoch)


def attention_recency(attention: np.ndarray, span: int = 10) -> tuple[float, float]:
    """Mean attention mass on the last and the first ``span`` encoder positions."""
    return float(attention[..., -span:].sum(axis=-1).mean()), float(attention[..., :span].sum(axis=-1).mean())
