"""Synthetic-signal recovery runs shared by the acceptance suite and scripts/."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

from . import pipeline
from .data import DEFAULT_HORIZONS, DataConfig, SynthConfig, synth_lob
from .evaluation import Evaluation, evaluate
from .oracle import ProbeResult, imbalance_probe
from .training import EpochRecord, TrainConfig


@dataclass
class RecoveryConfig:
    signal_strength: float = 0.8
    n_train: int = 50_000
    n_test: int = 10_000
    data_seed: int = 11
    kind: str = "attention"
    score: str = "dot"
    train_seed: int = 0
    stride: int = 10  # training windows; validation and test use every window
    val_stride: int = 4
    max_epochs: int = 30
    early_stop_patience: int = 6
    conv_filters: int = 8
    inception_filters: int = 8
    hidden: int = 16
    horizons: list[int] = field(default_factory=lambda: list(DEFAULT_HORIZONS))


@dataclass
class RecoveryResult:
    config: RecoveryConfig
    evaluation: Evaluation
    probe: ProbeResult
    log: list[EpochRecord]
    best_epoch: int
    seconds: float

    @property
    def f1(self) -> list[float]:
        return self.evaluation.report.f1()

    def recency(self, span: int = 10) -> tuple[float, float] | None:
        att = self.evaluation.attention
        return None if att is None else pipeline.attention_recency(att, span)

    def summary(self) -> dict:
        out = {"config": asdict(self.config), "test_f1": self.f1, "probe_f1": self.probe.weighted.f1(),
               "best_epoch": self.best_epoch, "epochs_run": len(self.log), "seconds": round(self.seconds, 1)}
        rec = self.recency()
        if rec is not None:
            out["attention_last10"], out["attention_first10"] = rec
        return out


def synthetic_split(cfg: RecoveryConfig):
    """Train (first ``n_train`` events) and test (the next ``n_test``) from one synthetic market."""
    series, _ = synth_lob(SynthConfig(n_events=cfg.n_train + cfg.n_test, signal_strength=cfg.signal_strength,
                                      seed=cfg.data_seed))
    return series.slice(0, cfg.n_train), series.slice(cfg.n_train, cfg.n_train + cfg.n_test)


def run_recovery(cfg: RecoveryConfig, on_epoch=None) -> RecoveryResult:
    """Train on the first 80% of the training span, select on the rest, score on the test span."""
    t0 = time.perf_counter()
    train_part, test = synthetic_split(cfg)
    fit_part, val_part = pipeline.split_series(train_part, 0.2)
    dcfg = DataConfig(horizons=list(cfg.horizons), stride=cfg.stride)
    prep = pipeline.prepare(fit_part, val_part, dcfg, val_stride=cfg.val_stride)
    model_cfg = pipeline.reduced_model_config(cfg.kind, cfg.score, len(cfg.horizons), dcfg.window,
                                              conv_filters=cfg.conv_filters,
                                              inception_filters=cfg.inception_filters, hidden=cfg.hidden)
    tcfg = TrainConfig(max_epochs=cfg.max_epochs, seed=cfg.train_seed,
                       early_stop_patience=cfg.early_stop_patience)
    result = pipeline.fit(model_cfg, prep, tcfg, on_epoch)
    test_windows = pipeline.windows(test, dcfg, prep.alphas, prep.norm_stats, stride=1)
    ev = evaluate(result.checkpoint, test_windows)
    # the probe sees the whole training span and is scored on the same test windows
    probe = imbalance_probe(train_part, test, cfg.horizons, prep.alphas, dcfg.window, seed=cfg.train_seed)
    return RecoveryResult(cfg, ev, probe, result.log, result.best_epoch, time.perf_counter() - t0)
