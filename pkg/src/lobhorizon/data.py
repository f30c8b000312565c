"""Order-book series: CSV I/O, normalisation, labelling, windowing, synthesis.

Book layout is fixed: for levels 1..L the columns are ask price, ask volume,
bid price, bid volume.  Time is event index ("tick time").

Labels compare a backward and a forward k-event mid-price average::

    m_minus(t) = mean(p[t-k+1 .. t])
    m_plus(t)  = mean(p[t+1 .. t+k])
    l(t)       = (m_plus - m_minus) / m_minus

and map ``l > alpha`` to up (2), ``l < -alpha`` to down (0), else stationary (1).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ParseError

DOWN, STATIONARY, UP = 0, 1, 2
CLASS_NAMES = ("down", "stationary", "up")
DEFAULT_HORIZONS = (10, 20, 30, 50, 100)
LEVELS = 10


def feature_columns(levels: int = LEVELS) -> list[str]:
    cols = []
    for j in range(1, levels + 1):
        cols += [f"ap{j}", f"av{j}", f"bp{j}", f"bv{j}"]
    return cols


@dataclass
class LobSeries:
    timestamps: np.ndarray
    books: np.ndarray  # [N, 4L]
    instrument: str = ""

    def __post_init__(self):
        self.books = np.asarray(self.books, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps)
        if self.books.ndim != 2 or self.books.shape[1] % 4:
            raise ContractError(f"books must be [N, 4L], got {self.books.shape}")
        if len(self.timestamps) != len(self.books):
            raise ContractError(f"{len(self.timestamps)} timestamps for {len(self.books)} book rows")

    def __len__(self):
        return len(self.books)

    @property
    def levels(self) -> int:
        return self.books.shape[1] // 4

    @property
    def ask_prices(self):
        return self.books[:, 0::4]

    @property
    def ask_volumes(self):
        return self.books[:, 1::4]

    @property
    def bid_prices(self):
        return self.books[:, 2::4]

    @property
    def bid_volumes(self):
        return self.books[:, 3::4]

    @property
    def mid(self) -> np.ndarray:
        return (self.books[:, 0] + self.books[:, 2]) / 2.0

    def slice(self, start: int, stop: int) -> "LobSeries":
        return LobSeries(self.timestamps[start:stop].copy(), self.books[start:stop].copy(), self.instrument)

    def violations(self) -> list[tuple[int, str]]:
        """(1-based row, reason) for every row breaking a book invariant."""
        ap, av, bp, bv = self.ask_prices, self.ask_volumes, self.bid_prices, self.bid_volumes
        checks = [
            (~np.isfinite(self.books).all(axis=1), "non-finite value"),
            (bp[:, 0] > ap[:, 0], "crossed book: best bid above best ask"),
            ((np.diff(ap, axis=1) <= 0).any(axis=1), "ask prices not strictly increasing by level"),
            ((np.diff(bp, axis=1) >= 0).any(axis=1), "bid prices not strictly decreasing by level"),
            (((av <= 0) | (bv <= 0)).any(axis=1), "non-positive volume"),
        ]
        bad_ts = np.zeros(len(self), dtype=bool)
        if len(self) > 1:
            bad_ts[1:] = np.diff(self.timestamps) < 0
        checks.append((bad_ts, "timestamp decreases"))
        found = []
        for mask, reason in checks:
            found += [(int(i) + 1, reason) for i in np.flatnonzero(mask)]
        return sorted(found)

    def validate(self) -> "LobSeries":
        bad = self.violations()
        if bad:
            row, reason = bad[0]
            listing = "; ".join(f"row {r}: {why}" for r, why in bad[:5])
            more = f" (+{len(bad) - 5} more)" if len(bad) > 5 else ""
            raise ParseError(f"invalid order book: {listing}{more}", row=row)
        return self


# ---------------------------------------------------------------------------
# CSV


def _fmt_ts(v) -> str:
    return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_lob_csv(series: LobSeries, path) -> None:
    cols = ["ts"] + feature_columns(series.levels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for ts, row in zip(series.timestamps.tolist(), series.books.tolist()):
            w.writerow([_fmt_ts(ts)] + [repr(v) for v in row])


def parse_lob_csv(path, instrument: str | None = None, validate: bool = True) -> LobSeries:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        levels = (len(header) - 1) // 4
        expected = ["ts"] + feature_columns(max(levels, 1))
        if header != expected or levels < 1:
            missing = [c for c in ["ts"] + feature_columns(LEVELS) if c not in header]
            detail = f"missing columns {missing[:6]}" if missing else f"unexpected header {header[:6]}..."
            raise ParseError(f"{path}: {detail}; expected 'ts,ap1,av1,bp1,bv1,...'", row=0)
        ts, rows = [], []
        for line_no, rec in enumerate(reader, start=2):
            row_no = line_no - 1
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: row {row_no} (line {line_no}) has {len(rec)} fields, "
                                 f"expected {len(header)}", row=row_no)
            try:
                t = rec[0].strip()
                ts.append(int(t) if t.lstrip("-").isdigit() else float(t))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}: row {row_no} (line {line_no}): {exc}", row=row_no) from None
    all_int = all(isinstance(t, int) for t in ts)
    stamps = np.array(ts, dtype=np.int64 if all_int else np.float64)
    series = LobSeries(stamps, np.array(rows, dtype=np.float64).reshape(len(rows), 4 * levels),
                       instrument if instrument is not None else path.stem)
    if validate:
        try:
            series.validate()
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}", row=exc.row) from None
    return series


# ---------------------------------------------------------------------------
# normalisation


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ConfigError(f"NormStats mean/std shapes differ: {self.mean.shape} vs {self.std.shape}")
        if not np.all(self.std > 0):
            bad = np.flatnonzero(~(self.std > 0)).tolist()
            raise ConfigError(f"NormStats: zero or negative std for features {bad}")

    @classmethod
    def from_series(cls, series: LobSeries, source: str | None = None) -> "NormStats":
        return cls(series.books.mean(axis=0), series.books.std(axis=0),
                   source if source is not None else f"{series.instrument}[0:{len(series)}]")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"]), np.array(d["std"]), d.get("source", ""))


def zscore_normalize(series: LobSeries, stats: NormStats) -> LobSeries:
    if stats.mean.shape[0] != series.books.shape[1]:
        raise ConfigError(f"NormStats cover {stats.mean.shape[0]} features, series has {series.books.shape[1]}")
    return LobSeries(series.timestamps, (series.books - stats.mean) / stats.std, series.instrument)


def zscore_denormalize(series: LobSeries, stats: NormStats) -> LobSeries:
    return LobSeries(series.timestamps, series.books * stats.std + stats.mean, series.instrument)


# ---------------------------------------------------------------------------
# labels


def _mid(series_or_mid) -> np.ndarray:
    if isinstance(series_or_mid, LobSeries):
        return series_or_mid.mid
    return np.asarray(series_or_mid, dtype=np.float64)


def smoothed_change(series_or_mid, k: int) -> np.ndarray:
    """``l(t)`` for every event; NaN where either average is undefined."""
    p = _mid(series_or_mid)
    n = len(p)
    if k < 1 or n < 2 * k:
        raise ContractError(f"horizon k={k} needs at least {2 * max(k, 1)} events, series has {n}")
    sums = np.lib.stride_tricks.sliding_window_view(p, k).sum(axis=1)  # sums[s] = p[s..s+k-1]
    out = np.full(n, np.nan)
    t = np.arange(k - 1, n - k)
    m_minus = sums[t - k + 1] / k
    m_plus = sums[t + 1] / k
    out[t] = (m_plus - m_minus) / m_minus
    return out


def classify(change: np.ndarray, alpha: float) -> np.ndarray:
    """Map smoothed changes to {0, 1, 2}; NaN becomes -1."""
    lab = np.full(change.shape, -1, dtype=np.int8)
    ok = ~np.isnan(change)
    c = change[ok]
    lab[ok] = np.where(c > alpha, UP, np.where(c < -alpha, DOWN, STATIONARY))
    return lab


def make_labels(series_or_mid, k: int, alpha: float) -> np.ndarray:
    """Per-event labels (length N); -1 where the label is undefined."""
    if alpha < 0:
        raise ContractError(f"alpha must be non-negative, got {alpha}")
    return classify(smoothed_change(series_or_mid, k), alpha)


def make_label_paths(series_or_mid, horizons: Sequence[int], alphas: Sequence[float]) -> np.ndarray:
    """``[N, K]`` labels; a row is -1 throughout unless every horizon is defined."""
    horizons = list(horizons)
    if len(horizons) != len(alphas):
        raise ContractError(f"{len(horizons)} horizons but {len(alphas)} alphas")
    if not horizons or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ContractError(f"horizons must be non-empty and strictly increasing, got {horizons}")
    paths = np.stack([make_labels(series_or_mid, k, a) for k, a in zip(horizons, alphas)], axis=1)
    paths[(paths < 0).any(axis=1)] = -1
    return paths


def balance_alpha(change: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Bisect for the alpha that leaves one third of the defined labels stationary."""
    c = np.abs(change[~np.isnan(change)])
    if c.size == 0:
        raise ContractError("balance_alpha: no defined changes")
    target = 1.0 / 3.0
    lo, hi = 0.0, float(c.max()) + 1e-300
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        frac = float(np.mean(c <= mid))
        if frac < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(hi, 1e-300):
            break
    return hi


def balanced_alphas(series_or_mid, horizons: Sequence[int]) -> list[float]:
    return [balance_alpha(smoothed_change(series_or_mid, k)) for k in horizons]


def class_balance(paths: np.ndarray) -> np.ndarray:
    """``[K, 3]`` counts per horizon over rows with a defined path."""
    ok = paths[(paths >= 0).all(axis=1)]
    return np.stack([np.bincount(ok[:, j], minlength=3) for j in range(paths.shape[1])])


# ---------------------------------------------------------------------------
# windows


@dataclass
class LobWindow:
    x: np.ndarray  # [T, m]
    end_index: int


def window_ends(paths: np.ndarray, window: int, stride: int = 1) -> np.ndarray:
    """Event indices where a window of ``window`` rows ends on a defined label path."""
    if window < 1 or stride < 1:
        raise ContractError("window and stride must be >= 1")
    ok = (paths >= 0).all(axis=1)
    ok[:window - 1] = False
    return np.flatnonzero(ok)[::stride]


def window_dataset(series: LobSeries, paths: np.ndarray, window: int = 50,
                   stride: int = 1) -> Iterator[tuple[LobWindow, np.ndarray]]:
    if len(paths) != len(series):
        raise ContractError(f"{len(paths)} label rows for a series of {len(series)} events")
    ends = window_ends(paths, window, stride)
    if ends.size == 0:
        warnings.warn(f"series of {len(series)} events yields no complete windows "
                      f"(window={window}); emitting nothing", stacklevel=2)
    for t in ends:
        yield LobWindow(series.books[t - window + 1:t + 1], int(t)), paths[t]


@dataclass
class WindowSet:
    """Windows materialised lazily from one normalised series."""

    books: np.ndarray  # [N, m], normalised
    ends: np.ndarray  # [S]
    labels: np.ndarray  # [S, K]
    window: int

    @classmethod
    def build(cls, series: LobSeries, paths: np.ndarray, window: int, stride: int = 1) -> "WindowSet":
        ends = window_ends(paths, window, stride)
        if ends.size == 0:
            warnings.warn(f"series of {len(series)} events yields no complete windows", stacklevel=2)
        return cls(series.books, ends, paths[ends].astype(np.int64), window)

    def __len__(self):
        return len(self.ends)

    def inputs(self, idx=None) -> np.ndarray:
        ends = self.ends if idx is None else self.ends[idx]
        rows = ends[:, None] + np.arange(-self.window + 1, 1)
        return self.books[rows]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.books, self.ends[idx], self.labels[idx], self.window)


# ---------------------------------------------------------------------------
# synthetic market


@dataclass
class SynthConfig:
    n_events: int = 10_000
    signal_strength: float = 0.5
    seed: int = 0
    levels: int = LEVELS
    start_price: float = 100.0
    tick: float = 0.01
    noise: float = 0.006  # per-event mid-price std, price units
    drift: float = 0.004  # per-event drift at full signal, price units
    persistence: float = 0.995  # probability the hidden regime is kept each event
    imbalance: float = 1.2  # log-volume tilt at full signal
    volume_noise: float = 0.9
    instrument: str = "SYNTH"

    def validate(self) -> None:
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError(f"signal_strength must lie in [0, 1], got {self.signal_strength}")
        if self.n_events < 1:
            raise ConfigError(f"n_events must be >= 1, got {self.n_events}")
        if not 0.0 <= self.persistence <= 1.0:
            raise ConfigError(f"persistence must lie in [0, 1], got {self.persistence}")


@dataclass
class DriftRecord:
    """Hidden regime per event: 0 down, 1 flat, 2 up, and the drift applied."""

    state: np.ndarray
    drift: np.ndarray

    def write_csv(self, path, timestamps) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ts", "state", "drift"])
            for t, s, d in zip(np.asarray(timestamps).tolist(), self.state.tolist(), self.drift.tolist()):
                w.writerow([_fmt_ts(t), s, repr(d)])


def synth_lob(cfg: SynthConfig) -> tuple[LobSeries, DriftRecord]:
    """Regime-switching mid-price with an order-imbalance tell.

    A hidden Markov regime (down/flat/up) sets the mid-price drift.  Queue
    volumes are log-normal; in regime ``s`` bid volumes are scaled by
    ``exp(+g * (s - 1) / j)`` and ask volumes by ``exp(-g * (s - 1) / j)`` at
    level ``j``.  Both the drift and ``g`` scale with ``signal_strength``,
    so at zero the mid-price is a driftless random walk and volumes carry no
    information.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, lv = cfg.n_events, cfg.levels
    s = cfg.signal_strength

    switch = rng.random(n) > cfg.persistence
    hop = rng.integers(1, 3, size=n)
    state = np.empty(n, dtype=np.int64)
    cur = int(rng.integers(0, 3))
    for i in range(n):
        if switch[i]:
            cur = (cur + int(hop[i])) % 3
        state[i] = cur
    direction = (state - 1).astype(np.float64)
    drift = s * cfg.drift * direction
    steps = drift + cfg.noise * rng.standard_normal(n)
    steps[0] = 0.0
    mid = cfg.start_price + np.cumsum(steps)

    spread = cfg.tick * rng.choice([1.0, 1.0, 1.0, 2.0, 3.0], size=n)
    offsets = np.arange(lv) * cfg.tick
    ask_p = (mid + spread / 2)[:, None] + offsets
    bid_p = (mid - spread / 2)[:, None] - offsets

    tilt = (s * cfg.imbalance * direction)[:, None] / np.arange(1, lv + 1)
    base = np.log(100.0)
    ask_v = np.exp(base - tilt + cfg.volume_noise * rng.standard_normal((n, lv)))
    bid_v = np.exp(base + tilt + cfg.volume_noise * rng.standard_normal((n, lv)))

    books = np.empty((n, 4 * lv))
    books[:, 0::4], books[:, 1::4], books[:, 2::4], books[:, 3::4] = ask_p, ask_v, bid_p, bid_v
    series = LobSeries(np.arange(n, dtype=np.int64), books, cfg.instrument)
    return series, DriftRecord(state, drift)


def order_imbalance(series: LobSeries) -> np.ndarray:
    """Per-level (bid - ask) / (bid + ask) queue imbalance, ``[N, L]``."""
    bv, av = series.bid_volumes, series.ask_volumes
    return (bv - av) / (bv + av)


# ---------------------------------------------------------------------------
# config


@dataclass
class DataConfig:
    horizons: list[int] = field(default_factory=lambda: list(DEFAULT_HORIZONS))
    alphas: list[float] | None = None  # None: balance on the training split
    window: int = 50
    stride: int = 1
    normalization: str = "train"  # "train" or a path to a NormStats JSON
    seed: int = 0

    def validate(self) -> None:
        if not self.horizons or any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError(f"horizons must be non-empty and strictly increasing, got {self.horizons}")
        if any(k < 1 for k in self.horizons):
            raise ConfigError("horizons must be positive")
        if self.alphas is not None and len(self.alphas) != len(self.horizons):
            raise ConfigError(f"{len(self.alphas)} alphas for {len(self.horizons)} horizons")
        if self.alphas is not None and any(not math.isfinite(a) or a < 0 for a in self.alphas):
            raise ConfigError("alphas must be finite and non-negative")
        if self.window < 1 or self.stride < 1:
            raise ConfigError("window and stride must be >= 1")


def load_norm_stats(path) -> NormStats:
    with open(path) as fh:
        return NormStats.from_dict(json.load(fh))
