"""Command-line interface.

Exit codes: 0 success, 2 input or configuration error, 3 numeric divergence,
4 gradient-check failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from . import pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import read_json, resolve
from .data import parse_lob_csv, synth_lob, write_lob_csv
from .decoders import SCORES
from .errors import LobHorizonError, TrainingDivergence
from .evaluation import evaluate, prepare_windows, write_report
from .gradcheck import run_gradcheck
from .training import write_epoch_log

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4


class InputError(LobHorizonError):
    """Bad path or argument detected by the CLI itself."""


def _say(msg: str = "") -> None:
    print(msg, flush=True)


def _writable(path) -> Path:
    p = Path(path)
    if not p.parent.exists() or not p.parent.is_dir():
        raise InputError(f"cannot write {p}: directory {p.parent} does not exist")
    return p


def _sidecar(out: Path) -> Path:
    return out.with_name(out.stem + ".state.csv")


def cmd_synth(args) -> int:
    raw = read_json(args.config)
    cfg = resolve(raw, {"synth": {"n_events": args.events, "signal_strength": args.signal, "seed": args.seed}}).synth
    out = _writable(args.out)
    series, record = synth_lob(cfg)
    try:
        write_lob_csv(series, out)
        record.write_csv(_sidecar(out), series.timestamps)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc}") from None
    _say(f"wrote {len(series)} events to {out} (hidden states in {_sidecar(out)})")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = read_json(args.config)
    overrides = {"decoder": {"kind": args.model, "score": args.score},
                 "train": {"seed": args.seed, "max_epochs": args.epochs, "learning_rate": args.lr,
                           "batch_size": args.batch_size},
                 "data": {"stride": args.stride}}
    cfg = resolve(raw, overrides)
    out = _writable(args.out)
    series = parse_lob_csv(args.data)
    if args.val:
        train_series, val_series = series, parse_lob_csv(args.val)
    else:
        train_series, val_series = pipeline.split_series(series, args.val_fraction)
        _say(f"no --val given: holding out the last {args.val_fraction:.0%} of {args.data} "
             f"({len(val_series)} events) for validation")
    prep = pipeline.prepare(train_series, val_series, cfg.data)
    _say(f"{len(prep.train)} training windows, {len(prep.val)} validation windows; "
         f"alphas {[float(f'{a:.3g}') for a in prep.alphas]}")
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")

    def on_epoch(rec):
        _say(f"epoch {rec.epoch:3d}  train_loss {rec.train_loss:.4f}  val_loss {rec.val_loss:.4f}  "
             f"val_f1 {' '.join(f'{f:.1f}' for f in rec.val_f1)}")

    result = pipeline.fit(cfg.model, prep, cfg.train, on_epoch,
                          extra_meta={"data": str(args.data), "run_config": cfg.to_dict()})
    save_checkpoint(result.checkpoint, out)
    write_epoch_log(result.log, log_path)
    best = result.checkpoint.metadata.get("val_f1_per_horizon") or []
    _say(f"best epoch {result.best_epoch}; validation weighted F1 per horizon:")
    for k, f in zip(prep.horizons, best):
        _say(f"  k={k:<4d} {f:6.2f}")
    _say(f"checkpoint: {out}\nepoch log: {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    series = parse_lob_csv(args.data)
    own = type(ckpt.norm_stats).from_series(series)
    drift = np.abs(own.mean - ckpt.norm_stats.mean) / ckpt.norm_stats.std
    if drift.max() > 3.0:
        warnings.warn(f"evaluation data sits {drift.max():.1f} training std away from the checkpoint's "
                      f"NormStats on some feature", stacklevel=1)
    meta = ckpt.metadata
    data = prepare_windows(series, ckpt.norm_stats, meta["horizons"], meta["alphas"], ckpt.config.encoder.window)
    ev = evaluate(ckpt, data, args.averaging)
    written = write_report(ev, args.report)
    _say(ev.report.table())
    _say(f"wrote {len(written)} files to {args.report}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    series = parse_lob_csv(args.data)
    meta = ckpt.metadata
    data = prepare_windows(series, ckpt.norm_stats, meta["horizons"], meta["alphas"], ckpt.config.encoder.window)
    model = ckpt.build_model()
    probs, _ = model.predict_proba(data.inputs())
    out = _writable(args.out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["end_index", "ts"]
        for k in meta["horizons"]:
            head += [f"p_down_k{k}", f"p_stationary_k{k}", f"p_up_k{k}", f"class_k{k}"]
        w.writerow(head)
        for i, end in enumerate(data.ends):
            row = [int(end), series.timestamps[end]]
            for j in range(probs.shape[1]):
                row += [repr(float(p)) for p in probs[i, j]] + [int(probs[i, j].argmax())]
            w.writerow(row)
    _say(f"wrote {len(data)} forecasts to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = resolve(read_json(args.config)).gradcheck
    report = run_gradcheck(cfg, args.seed, on_result=lambda r: None)
    for line in report.lines():
        _say(line)
    if not report.passed:
        names = ", ".join(r.name for r in report.failures())
        _say(f"gradient check FAILED: {names}")
        return EXIT_GRADCHECK
    _say(f"gradient check passed ({len(report.results)} components, seeds {args.seed}..{args.seed + cfg.seeds - 1})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lobhorizon", description="Multi-horizon limit order book forecasting")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic LOB CSV plus hidden-state sidecar")
    s.add_argument("--events", type=int)
    s.add_argument("--signal", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON config; its 'synth' section supplies defaults")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a forecaster and write a checkpoint")
    t.add_argument("--data", required=True, help="training LOB CSV")
    t.add_argument("--val", help="validation LOB CSV (default: chronological tail of --data)")
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--model", choices=("seq2seq", "attention"))
    t.add_argument("--score", choices=SCORES)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="epoch log CSV (default: <out>.log.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--stride", type=int, help="training window stride")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a LOB CSV")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="output directory")
    e.add_argument("--averaging", choices=("weighted", "macro"), default="weighted")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write per-window class probabilities")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference audit of every layer and model")
    g.add_argument("--config", help="JSON config; its 'gradcheck' section must stay reduced (T, H <= 8)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (LobHorizonError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
