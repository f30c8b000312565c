"""Versioned checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive.  Each parameter is stored
under ``param/<dotted name>``; the entry ``__meta__`` holds UTF-8 JSON with
the format version, model configuration, parameter order, normalisation
statistics and training metadata.  float64 arrays survive the round trip
bit for bit.
"""
from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import CheckpointError, ContractError
from .model import ForecastModel, ModelConfig

FORMAT = "lobhorizon-checkpoint"
VERSION = 1


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    norm_stats: NormStats
    metadata: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: ForecastModel, norm_stats: NormStats, metadata: dict | None = None) -> "ModelCheckpoint":
        if norm_stats is None:
            raise ContractError("a checkpoint must carry the NormStats used to prepare its training data")
        params = {k: v.data.copy() for k, v in model.named_parameters()}
        return cls(model.cfg, params, norm_stats, dict(metadata or {}))

    def build_model(self) -> ForecastModel:
        model = ForecastModel(self.config, seed=0)
        live = model.parameters()
        if set(live) != set(self.params):
            missing = sorted(set(live) - set(self.params))
            extra = sorted(set(self.params) - set(live))
            raise CheckpointError(f"parameter names do not match the architecture: missing {missing[:5]}, "
                                  f"unexpected {extra[:5]}")
        for name, tensor in live.items():
            arr = self.params[name]
            if arr.shape != tensor.data.shape:
                raise CheckpointError(f"parameter {name}: stored shape {arr.shape}, expected {tensor.data.shape}")
            tensor.data = arr.copy()
        return model


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": ckpt.config.to_dict(),
        "param_names": list(ckpt.params),
        "norm_stats": ckpt.norm_stats.to_dict(),
        "metadata": ckpt.metadata,
    }
    arrays = {f"param/{k}": np.ascontiguousarray(v, dtype=np.float64) for k, v in ckpt.params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def _field(meta: dict, name: str):
    if name not in meta:
        raise CheckpointError(f"checkpoint metadata lacks field '{name}'")
    return meta[name]


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if not raw:
        raise CheckpointError(f"{path}: empty file")
    try:
        with np.load(io.BytesIO(raw), allow_pickle=False) as z:
            entries = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt container ({exc})") from None
    if "__meta__" not in entries:
        raise CheckpointError(f"{path}: missing field '__meta__'")
    try:
        meta = json.loads(entries["__meta__"].tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: field '__meta__' is not valid JSON ({exc})") from None
    if _field(meta, "format") != FORMAT:
        raise CheckpointError(f"{path}: field 'format' is {meta['format']!r}, expected {FORMAT!r}")
    if _field(meta, "version") != VERSION:
        raise CheckpointError(f"{path}: field 'version' is {meta['version']!r}, this build reads {VERSION}")
    try:
        config = ModelConfig.from_dict(_field(meta, "config"))
        norm = NormStats.from_dict(_field(meta, "norm_stats"))
    except (TypeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed configuration ({exc})") from None
    params = {}
    for name in _field(meta, "param_names"):
        key = f"param/{name}"
        if key not in entries:
            raise CheckpointError(f"{path}: missing parameter field '{key}'")
        params[name] = entries[key]
    ckpt = ModelCheckpoint(config, params, norm, meta.get("metadata", {}))
    ckpt.build_model()  # validates names and shapes before handing anything back
    return ckpt
