
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from lobhorizon import data as D
from lobhorizon.checkpoint import ModelCheckpoint
from lobhorizon.decoders import DecoderConfig
from lobhorizon.encoder import EncoderConfig
from lobhorizon.errors import ContractError
from lobhorizon.evaluation import (ConfusionMatrix, evaluate, ks_two_sample, metrics, normalized_confusion,
                                   prepare_windows, write_report)
from lobhorizon.model import ForecastModel, ModelConfig

quiet = pytest.mark.filterwarnings("ignore:.*undefined for classes")


def brute_metrics(pred, true, averaging):
    """Per-class definitions spelled out with plain loops."""
    n = len(true)
    acc = sum(p == t for p, t in zip(pred, true)) / n
    prec, rec, f1, support = [], [], [], []
    for c in range(3):
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        pp = sum(1 for p in pred if p == c)
        tt = sum(1 for t in true if t == c)
        pr = tp / pp if pp else 0.0
        rc = tp / tt if tt else 0.0
        prec.append(pr)
        rec.append(rc)
        f1.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
        support.append(tt)
    w = [s / n for s in support] if averaging == "weighted" else [1 / 3] * 3
    avg = lambda v: 100 * sum(a * b for a, b in zip(w, v))
    return 100 * acc, avg(prec), avg(rec), avg(f1)


# ---------------------------------------------------------------------------
# metrics


def test_perfect_predictions():
    y = np.array([0, 1, 2, 2, 1])
    r = metrics(y, y).rows[0]
    assert (r.accuracy, r.precision, r.recall, r.f1) == (100.0, 100.0, 100.0, 100.0)


def test_hand_computed_macro_example():
    with pytest.warns(UserWarning, match="undefined for classes"):
        r = metrics(np.array([0, 0, 0]), np.array([0, 1, 2]), "macro").rows[0]
    assert r.accuracy == pytest.approx(33.33, abs=0.005)
    assert r.recall == pytest.approx(33.33, abs=0.005)
    assert r.precision == pytest.approx(11.11, abs=0.005)
    assert r.f1 == pytest.approx(16.67, abs=0.005)


def test_length_mismatch():
    with pytest.raises(ContractError):
        metrics(np.zeros(3, int), np.zeros(4, int))


@quiet
def test_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for i in range(1000):
        n = int(rng.integers(1, 40))
        true = rng.integers(0, 3, n)
        pred = np.where(rng.random(n) < 0.5, true, rng.integers(0, 3, n))
        averaging = "weighted" if i % 2 else "macro"
        r = metrics(pred, true, averaging).rows[0]
        np.testing.assert_allclose([r.accuracy, r.precision, r.recall, r.f1],
                                   brute_metrics(pred.tolist(), true.tolist(), averaging), atol=1e-9)


@quiet
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=200))
def test_weighted_recall_is_accuracy(pairs):
    pred, true = np.array(pairs).T
    r = metrics(pred, true).rows[0]
    assert abs(r.recall - r.accuracy) < 1e-12
    cm = ConfusionMatrix.from_labels(true, pred)
    assert r.accuracy == 100.0 * np.trace(cm.counts) / cm.counts.sum() == cm.accuracy()
    assert all(0 <= v <= 100 for v in (r.accuracy, r.precision, r.recall, r.f1))


@quiet
def test_multi_horizon_columns(rng):
    true = rng.integers(0, 3, (50, 4))
    pred = true.copy()
    pred[:, 2] = (pred[:, 2] + 1) % 3
    rep = metrics(pred, true, horizons=["a", "b", "c", "d"])
    assert rep.f1()[2] == 0.0 and rep.f1()[0] == 100.0
    assert "c" in rep.table()


# ---------------------------------------------------------------------------
# confusion


def test_normalised_confusion_examples():
    m, empty = normalized_confusion(np.eye(3, dtype=int) * 4)
    np.testing.assert_array_equal(m, np.eye(3))
    assert not empty.any()
    m, empty = normalized_confusion(np.array([[2, 1, 1], [0, 0, 0], [0, 3, 1]]))
    np.testing.assert_allclose(m[0], [0.5, 0.25, 0.25])
    assert m[1].tolist() == [0, 0, 0] and empty.tolist() == [False, True, False]


@given(st.lists(st.integers(1, 10 ** 6), min_size=9, max_size=9))
def test_normalised_rows_sum_to_one(cells):
    m, _ = normalized_confusion(np.array(cells).reshape(3, 3))
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# KS


def test_ks_examples():
    assert ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])[0] == 0.0
    assert ks_two_sample([0.0], [1.0])[0] == 1.0
    assert ks_two_sample([1, 2, 3, 4], [3, 4, 5, 6])[0] == 0.5
    with pytest.raises(ContractError):
        ks_two_sample([], [1.0])


def test_ks_against_scipy():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = rng.normal(size=int(rng.integers(5, 300)))
        b = rng.normal(float(rng.uniform(0, 0.5)), 1, int(rng.integers(5, 300)))
        d, p = ks_two_sample(a, b)
        assert d == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)
        n_eff = len(a) * len(b) / (len(a) + len(b))
        assert p == pytest.approx(stats.kstwobign.sf(np.sqrt(n_eff) * d), abs=1e-10)


def test_ks_on_correctness_indicators():
    rng = np.random.default_rng(2)
    a, b = rng.random(2000) < 0.6, rng.random(2000) < 0.5
    d, p = ks_two_sample(a, b)
    assert d == pytest.approx(abs(a.mean() - b.mean()), abs=1e-12)
    assert p < 1e-6


@given(st.lists(st.integers(-8000, 8000), min_size=1, max_size=60),
       st.lists(st.integers(-8000, 8000), min_size=1, max_size=60))
def test_ks_symmetry_and_monotone_invariance(a, b):
    # a 1/8 grid keeps the transforms below injective in floating point
    a, b = np.array(a) / 8.0, np.array(b) / 8.0
    d = ks_two_sample(a, b)
    assert ks_two_sample(b, a) == d
    assert ks_two_sample(np.arctan(a / 1e3), np.arctan(b / 1e3))[0] == pytest.approx(d[0], abs=1e-12)
    assert ks_two_sample(3 * a + 1, 3 * b + 1)[0] == pytest.approx(d[0], abs=1e-12)


# ---------------------------------------------------------------------------
# evaluate


def tiny_checkpoint(kind="attention", score="general", seed=0):
    cfg = ModelConfig(EncoderConfig(conv_filters=4, inception_filters=4, lstm_hidden=8, window=10, features=8),
                      DecoderConfig(kind=kind, hidden=8, horizon_steps=3, score=score, embedding=4))
    series, _ = D.synth_lob(D.SynthConfig(n_events=600, levels=2, seed=seed))
    norm = D.NormStats.from_series(series)
    meta = {"horizons": [2, 4, 6], "alphas": D.balanced_alphas(series, [2, 4, 6])}
    return ModelCheckpoint.capture(ForecastModel(cfg, seed=seed), norm, meta), series


@quiet
def test_evaluate_is_idempotent():
    ck, series = tiny_checkpoint()
    a, b = evaluate(ck, series), evaluate(ck, series)
    assert a.report == b.report
    assert a.predictions.tobytes() == b.predictions.tobytes()
    assert a.attention.tobytes() == b.attention.tobytes()


@quiet
@pytest.mark.parametrize("averaging", ["weighted", "macro"])
def test_evaluate_matches_metrics_on_dump(tmp_path, averaging):
    ck, series = tiny_checkpoint("seq2seq", "dot", seed=3)
    ev = evaluate(ck, series, averaging)
    write_report(ev, tmp_path)
    dump = np.loadtxt(tmp_path / "predictions.csv", delimiter=",", skiprows=1, dtype=np.int64)
    truth, preds = dump[:, 1:4], dump[:, 4:7]
    assert metrics(preds, truth, averaging).f1() == ev.report.f1()
    assert ev.correct.tolist() == (preds == truth).tolist()
    assert not (tmp_path / "attention.csv").exists()


@quiet
def test_all_stationary_data():
    ck, series = tiny_checkpoint()
    flat = series.books.copy()
    flat[:, 0::4] = flat[0, 0::4]
    flat[:, 2::4] = flat[0, 2::4]
    ev = evaluate(ck, D.LobSeries(series.timestamps, flat))
    for cm in ev.confusions:
        assert cm.counts[1].sum() == cm.total > 0
        assert cm.counts[[0, 2]].sum() == 0


def test_missing_norm_stats():
    ck, series = tiny_checkpoint()
    ck.norm_stats = None
    with pytest.raises(ContractError, match="NormStats"):
        evaluate(ck, series)
    with pytest.raises(ContractError, match="NormStats"):
        prepare_windows(series, None, [2], [1e-4], 10)


@quiet
def test_attention_export_rows(tmp_path):
    ck, series = tiny_checkpoint()
    ev = evaluate(ck, series)
    write_report(ev, tmp_path)
    lines = (tmp_path / "attention.csv").read_text().splitlines()
    assert lines[0].split(",")[:5] == ["sample", "end_index", "step", "horizon", "w0"]
    assert len(lines) == 1 + 3 * len(ev.predictions)
    row = np.array(lines[1].split(",")[4:], dtype=float)
    assert len(row) == 10 and abs(row.sum() - 1) < 1e-9
