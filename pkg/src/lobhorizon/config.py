"""Run configuration: JSON file merged with command-line flags.

Schema (every section optional, unknown keys rejected)::

    {
      "data":  {"horizons": [...], "alphas": [...] | null, "window": 50, "stride": 1,
                "normalization": "train" | "<norm_stats.json>", "seed": 0},
      "model": {"encoder": {EncoderConfig fields}, "decoder": {DecoderConfig fields}},
      "train": {TrainConfig fields},
      "synth": {SynthConfig fields},
      "gradcheck": {GradcheckConfig fields}
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DataConfig, SynthConfig
from .decoders import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .gradcheck import GradcheckConfig
from .model import ModelConfig
from .training import TrainConfig

SECTIONS = ("data", "model", "train", "synth", "gradcheck")


def _build(cls, values: dict | None, where: str):
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {unknown}; allowed: {sorted(names)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad '{where}' section: {exc}") from None


def read_json(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {list(SECTIONS)}")
    return raw


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(EncoderConfig(), DecoderConfig()))
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def to_dict(self) -> dict:
        return {"data": dataclasses.asdict(self.data), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "synth": dataclasses.asdict(self.synth),
                "gradcheck": dataclasses.asdict(self.gradcheck)}


def _overlay(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def resolve(raw: dict, overrides: dict[str, dict] | None = None) -> RunConfig:
    """File values first, then non-None flag values on top; validated before returning."""
    overrides = overrides or {}
    model_raw = raw.get("model", {}) or {}
    unknown = sorted(set(model_raw) - {"encoder", "decoder"})
    if unknown:
        raise ConfigError(f"unknown key(s) in 'model': {unknown}; allowed: ['decoder', 'encoder']")
    data = _build(DataConfig, _overlay(raw.get("data", {}), overrides.get("data", {})), "data")
    enc = _build(EncoderConfig, _overlay(model_raw.get("encoder", {}), overrides.get("encoder", {})),
                 "model.encoder")
    dec_raw = _overlay(model_raw.get("decoder", {}), overrides.get("decoder", {}))
    k = len(data.horizons)
    if "horizon_steps" in dec_raw and dec_raw["horizon_steps"] != k:
        raise ConfigError(f"decoder horizon_steps={dec_raw['horizon_steps']} but {k} horizons are configured")
    dec_raw["horizon_steps"] = k
    dec_raw.setdefault("hidden", enc.lstm_hidden)
    dec = _build(DecoderConfig, dec_raw, "model.decoder")
    if enc.window != data.window:
        if "window" in (model_raw.get("encoder") or {}):
            raise ConfigError(f"encoder window={enc.window} differs from data window={data.window}")
        enc = dataclasses.replace(enc, window=data.window)
    cfg = RunConfig(
        data=data, model=ModelConfig(enc, dec),
        train=_build(TrainConfig, _overlay(raw.get("train", {}), overrides.get("train", {})), "train"),
        synth=_build(SynthConfig, _overlay(raw.get("synth", {}), overrides.get("synth", {})), "synth"),
        gradcheck=_build(GradcheckConfig, _overlay(raw.get("gradcheck", {}), overrides.get("gradcheck", {})),
                         "gradcheck"))
    cfg.data.validate()
    cfg.model.encoder.validate()
    cfg.model.decoder.validate(cfg.model.encoder.lstm_hidden)
    cfg.train.validate()
    cfg.synth.validate()
    cfg.gradcheck.validate()
    return cfg
