"""Logistic-regression probe on current-event order imbalance.

This is the floor a sequence model must clear on synthetic data: it sees
only the per-level queue imbalance of the window's last event.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression

from .data import LobSeries, make_label_paths, order_imbalance, window_ends
from .evaluation import MetricReport, metrics


@dataclass
class ProbeResult:
    weighted: MetricReport
    macro: MetricReport


def _rows(series: LobSeries, horizons, alphas, window: int):
    paths = make_label_paths(series, horizons, alphas)
    ends = window_ends(paths, window)
    return order_imbalance(series)[ends], paths[ends]


def imbalance_probe(train: LobSeries, test: LobSeries, horizons, alphas, window: int = 50,
                    seed: int = 0) -> ProbeResult:
    """Fit one probe per horizon on ``train`` windows, score on ``test`` windows.

    Rows are the same window end points the sequence models use, so both
    are scored on identical samples.
    """
    x_tr, y_tr = _rows(train, horizons, alphas, window)
    x_te, y_te = _rows(test, horizons, alphas, window)
    preds = np.empty_like(y_te)
    for j in range(y_tr.shape[1]):
        clf = LogisticRegression(max_iter=2000, random_state=seed)
        preds[:, j] = clf.fit(x_tr, y_tr[:, j]).predict(x_te)
    names = [f"k={k}" for k in horizons]
    return ProbeResult(metrics(preds, y_te, "weighted", names), metrics(preds, y_te, "macro", names))
