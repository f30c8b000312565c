"""Classification metrics, confusion matrices, the two-sample KS test, and report export."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CLASS_NAMES, LobSeries, NormStats, WindowSet, make_label_paths, zscore_normalize
from .errors import ContractError

AVERAGING = ("weighted", "macro")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [3, 3], rows true, cols predicted
    horizon: str = ""

    @classmethod
    def from_labels(cls, truth, preds, horizon: str = "", n: int = 3) -> "ConfusionMatrix":
        truth, preds = np.asarray(truth), np.asarray(preds)
        counts = np.zeros((n, n), dtype=np.int64)
        np.add.at(counts, (truth, preds), 1)
        return cls(counts, horizon)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(100.0 * np.trace(self.counts) / self.total) if self.total else 0.0


@dataclass
class HorizonMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class MetricReport:
    horizons: list[str]
    rows: list[HorizonMetrics]
    averaging: str = "weighted"

    def f1(self) -> list[float]:
        return [r.f1 for r in self.rows]

    def mean_f1(self) -> float:
        return float(np.mean(self.f1()))

    def table(self) -> str:
        head = f"{'horizon':>8} {'acc':>7} {'prec':>7} {'rec':>7} {'f1':>7}   ({self.averaging})"
        lines = [head] + [f"{h:>8} {r.accuracy:7.2f} {r.precision:7.2f} {r.recall:7.2f} {r.f1:7.2f}"
                          for h, r in zip(self.horizons, self.rows)]
        return "\n".join(lines)


def _safe_div(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
    zero = den == 0
    if zero.any():
        warnings.warn(f"{what} undefined for classes {np.flatnonzero(zero).tolist()}; counted as 0",
                      stacklevel=3)
    return np.where(zero, 0.0, num / np.where(zero, 1, den))


def class_scores(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall, F1 (fractions)."""
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0), "precision")
    recall = _safe_div(tp, cm.sum(axis=1), "recall")
    f1 = _safe_div(2 * precision * recall, precision + recall, "F1")
    return precision, recall, f1


def horizon_metrics(cm: np.ndarray, averaging: str = "weighted") -> HorizonMetrics:
    if averaging not in AVERAGING:
        raise ContractError(f"averaging must be one of {AVERAGING}, got {averaging!r}")
    p, r, f = class_scores(cm)
    support = cm.sum(axis=1)
    w = support / support.sum() if averaging == "weighted" else np.full(len(p), 1.0 / len(p))
    acc = float(100.0 * np.trace(cm) / cm.sum())  # same expression as ConfusionMatrix.accuracy
    return HorizonMetrics(acc, 100.0 * float(w @ p), 100.0 * float(w @ r), 100.0 * float(w @ f))


def metrics(preds, truth, averaging: str = "weighted", horizons: Sequence[str] | None = None) -> MetricReport:
    """Per-horizon accuracy / precision / recall / F1 in percent.

    ``preds`` and ``truth`` are ``[N]`` or ``[N, K]`` class ids.
    """
    preds, truth = np.asarray(preds), np.asarray(truth)
    if preds.shape != truth.shape:
        raise ContractError(f"predictions {preds.shape} and truth {truth.shape} differ in shape")
    if preds.size == 0:
        raise ContractError("metrics of an empty sample")
    if preds.ndim == 1:
        preds, truth = preds[:, None], truth[:, None]
    for arr, what in ((preds, "predictions"), (truth, "truth")):
        if arr.min() < 0 or arr.max() > 2:
            raise ContractError(f"{what} contain class ids outside {{0, 1, 2}}")
    k = preds.shape[1]
    names = list(horizons) if horizons is not None else [f"h{j + 1}" for j in range(k)]
    rows = [horizon_metrics(ConfusionMatrix.from_labels(truth[:, j], preds[:, j]).counts, averaging)
            for j in range(k)]
    return MetricReport(names, rows, averaging)


def normalized_confusion(cm: ConfusionMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic matrix plus a flag per row that had no samples (left as zeros)."""
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    empty = sums[:, 0] == 0
    return np.where(sums == 0, 0.0, counts / np.where(sums == 0, 1.0, sums)), empty


def _kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """P(K > lam) for the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        return 1.0  # series converges poorly; the tail is 1 to double precision here
    total = 0.0
    for j in range(1, terms + 1):
        term = 2.0 * (-1) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam)
        total += term
        if abs(term) < 1e-17:
            break
    return min(1.0, max(0.0, total))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    D is the largest gap between the two empirical CDFs, evaluated at every
    pooled sample point; p uses ``sqrt(n_eff) * D`` with
    ``n_eff = n_a n_b / (n_a + n_b)``.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ContractError("ks_two_sample needs two non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    return d, _kolmogorov_sf(math.sqrt(n_eff) * d)


# ---------------------------------------------------------------------------
# model evaluation


@dataclass
class Evaluation:
    report: MetricReport
    confusions: list[ConfusionMatrix]
    correct: np.ndarray  # [N, K] booleans
    predictions: np.ndarray  # [N, K]
    truth: np.ndarray  # [N, K]
    attention: np.ndarray | None = None  # [N, K, T]
    end_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def prepare_windows(series: LobSeries, norm_stats: NormStats | None, horizons: Sequence[int],
                    alphas: Sequence[float], window: int, stride: int = 1) -> WindowSet:
    if norm_stats is None:
        raise ContractError("evaluation needs the checkpoint's NormStats; none were supplied")
    paths = make_label_paths(series, horizons, alphas)
    return WindowSet.build(zscore_normalize(series, norm_stats), paths, window, stride)


def evaluate(checkpoint, data, averaging: str = "weighted", batch_size: int = 256) -> Evaluation:
    """Free-running evaluation of a checkpoint.

    ``data`` is a raw ``LobSeries`` (labelled and normalised here with the
    checkpoint's horizons, alphas and NormStats) or an already prepared
    ``WindowSet``.
    """
    if getattr(checkpoint, "norm_stats", None) is None:
        raise ContractError("checkpoint carries no NormStats; refusing to evaluate")
    meta = checkpoint.metadata
    horizons = meta.get("horizons")
    if isinstance(data, LobSeries):
        if horizons is None or meta.get("alphas") is None:
            raise ContractError("checkpoint metadata lacks horizons/alphas needed to label raw data")
        data = prepare_windows(data, checkpoint.norm_stats, horizons, meta["alphas"],
                               checkpoint.config.encoder.window)
    if len(data) == 0:
        raise ContractError("no evaluable windows in the supplied data")
    model = checkpoint.build_model()
    probs, attn = [], []
    for start in range(0, len(data), batch_size):
        p, a = model.predict_proba(data.inputs(np.arange(start, min(start + batch_size, len(data)))), batch_size)
        probs.append(p)
        if a is not None:
            attn.append(a)
    probs = np.concatenate(probs)
    preds = probs.argmax(axis=-1)
    truth = data.labels
    names = [f"k={h}" for h in horizons] if horizons else None
    report = metrics(preds, truth, averaging, names)
    confusions = [ConfusionMatrix.from_labels(truth[:, j], preds[:, j], report.horizons[j])
                  for j in range(truth.shape[1])]
    return Evaluation(report, confusions, preds == truth, preds, truth,
                      np.concatenate(attn) if attn else None, data.ends.copy())


# ---------------------------------------------------------------------------
# export


def write_metrics_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "averaging", "accuracy", "precision", "recall", "f1"])
        for h, r in zip(report.horizons, report.rows):
            w.writerow([h, report.averaging, repr(r.accuracy), repr(r.precision), repr(r.recall), repr(r.f1)])


def write_confusion_csv(cm: ConfusionMatrix, path, normalized: bool = False) -> None:
    grid, empty = normalized_confusion(cm) if normalized else (cm.counts, np.zeros(3, dtype=bool))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *CLASS_NAMES] + (["empty_row"] if normalized else []))
        for i, name in enumerate(CLASS_NAMES):
            cells = [repr(float(v)) if normalized else str(int(v)) for v in grid[i]]
            w.writerow([name, *cells] + ([int(empty[i])] if normalized else []))


def write_attention_csv(attention: np.ndarray, path, horizons: Sequence[str] | None = None,
                        end_index: np.ndarray | None = None) -> None:
    """One row per (sample, decoder step): weights over the T encoder positions, oldest first."""
    n, k, t = attention.shape
    names = list(horizons) if horizons is not None else [f"h{j + 1}" for j in range(k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "end_index", "step", "horizon"] + [f"w{i}" for i in range(t)])
        for s in range(n):
            end = int(end_index[s]) if end_index is not None else s
            for j in range(k):
                w.writerow([s, end, j + 1, names[j]] + [repr(float(v)) for v in attention[s, j]])


def write_report(ev: Evaluation, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv"]
    write_metrics_csv(ev.report, written[0])
    for j, cm in enumerate(ev.confusions):
        tag = cm.horizon.replace("=", "") or f"h{j + 1}"
        for norm in (False, True):
            p = out / f"confusion_{tag}{'_normalized' if norm else ''}.csv"
            write_confusion_csv(cm, p, normalized=norm)
            written.append(p)
    np.savetxt(out / "predictions.csv", np.column_stack([ev.end_index, ev.truth, ev.predictions]),
               fmt="%d", delimiter=",", comments="",
               header="end_index," + ",".join([f"truth_{h}" for h in ev.report.horizons]
                                              + [f"pred_{h}" for h in ev.report.horizons]))
    written.append(out / "predictions.csv")
    if ev.attention is not None:
        p = out / "attention.csv"
        write_attention_csv(ev.attention, p, ev.report.horizons, ev.end_index)
        written.append(p)
    return written
