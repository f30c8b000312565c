import math

import numpy as np
import pytest

from lobhorizon import data as D
from lobhorizon import tensor as tn
from lobhorizon.checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from lobhorizon.decoders import DecoderConfig
from lobhorizon.encoder import EncoderConfig
from lobhorizon.errors import CheckpointError, ConfigError, ContractError, TrainingDivergence
from lobhorizon.model import ForecastModel, ModelConfig
from lobhorizon.tensor import Tensor
from lobhorizon.training import (Adam, Sgd, TrainConfig, clip_global_norm, cross_entropy_path_loss,
                                  loss_and_grads, path_loss_value, train, write_epoch_log)


def tiny_config(kind="attention", score="dot", window=10, k=3):
    return ModelConfig(EncoderConfig(conv_filters=4, inception_filters=4, lstm_hidden=8, window=window,
                                     features=8),
                       DecoderConfig(kind=kind, hidden=8, horizon_steps=k, score=score, embedding=4))


def toy_windows(n=400, seed=0, window=10, stride=1, k=(2, 4, 6)):
    series, _ = D.synth_lob(D.SynthConfig(n_events=n, levels=2, seed=seed, signal_strength=0.8))
    alphas = D.balanced_alphas(series, list(k))
    paths = D.make_label_paths(series, list(k), alphas)
    norm = D.NormStats.from_series(series)
    return D.WindowSet.build(D.zscore_normalize(series, norm), paths, window, stride), norm


def params_of(model):
    return {k: v.data.copy() for k, v in model.parameters().items()}


# ---------------------------------------------------------------------------
# loss


def test_certain_correct_path_costs_zero():
    y = np.array([[0, 2, 1]])
    probs = np.eye(3)[y]
    assert cross_entropy_path_loss(Tensor(probs), y).item() == 0.0


def test_uniform_path_costs_ln3():
    y = np.array([[0, 1, 2, 1, 0]] * 4)
    loss = cross_entropy_path_loss(Tensor(np.full((4, 5, 3), 1 / 3)), y).item()
    assert loss == pytest.approx(math.log(3), abs=1e-12)


def test_floor_keeps_loss_finite():
    y = np.array([[0]])
    loss = cross_entropy_path_loss(Tensor(np.array([[[0.0, 0.5, 0.5]]])), y).item()
    assert loss == pytest.approx(-math.log(1e-12))
    assert path_loss_value(np.array([[[0.0, 0.5, 0.5]]]), y) == pytest.approx(loss)


@pytest.mark.parametrize("bad", [np.array([[3, 0]]), np.array([[-1, 0]]), np.array([[0.5, 1.0]])])
def test_bad_targets_rejected(bad):
    with pytest.raises(ContractError):
        cross_entropy_path_loss(Tensor(np.full((1, 2, 3), 1 / 3)), bad)


def test_target_shape_mismatch():
    with pytest.raises(ContractError):
        cross_entropy_path_loss(Tensor(np.full((2, 2, 3), 1 / 3)), np.zeros((2, 3), dtype=int))


def test_loss_gradient_matches_differences(rng):
    logits = Tensor(rng.normal(size=(3, 4, 3)))
    y = rng.integers(0, 3, (3, 4))
    err = tn.grad_check(lambda z: cross_entropy_path_loss(tn.softmax(z), y), logits, 1e-5)
    assert err < 1e-6


# ---------------------------------------------------------------------------
# optimisation


def test_overfits_eight_samples():
    # default architecture and Adam defaults, one fixed batch
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(8, 50, 40)), rng.integers(0, 3, (8, 5))
    model = ForecastModel(ModelConfig(EncoderConfig(), DecoderConfig()), seed=0)
    cfg = TrainConfig()
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    for _ in range(200):
        loss, grads = loss_and_grads(model, x, y)
        clip_global_norm(grads, cfg.clip_norm)
        opt.step(grads)
    final, _ = loss_and_grads(model, x, y)
    assert final < 0.05


def test_zero_learning_rate_leaves_parameters(tmp_path):
    ws, norm = toy_windows()
    val, _ = toy_windows(seed=2, stride=20)
    model = ForecastModel(tiny_config(), seed=0)
    before = params_of(model)
    for opt in ("adam", "sgd"):
        train(model, ws, val,
              TrainConfig(learning_rate=0.0, max_epochs=2, batch_size=32, optimizer=opt), norm)
        for k, v in params_of(model).items():
            assert v.tobytes() == before[k].tobytes(), k


def test_same_seed_same_parameters():
    ws, norm = toy_windows(stride=3)
    val, _ = toy_windows(seed=9, stride=5)
    runs = []
    for _ in range(2):
        res = train(ForecastModel(tiny_config(), seed=4), ws, val,
                    TrainConfig(max_epochs=2, batch_size=16, seed=4), norm)
        runs.append(res)
    a, b = runs[0].checkpoint.params, runs[1].checkpoint.params
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert [r.train_loss for r in runs[0].log] == [r.train_loss for r in runs[1].log]


def test_single_sgd_step_descends():
    ws, _ = toy_windows()
    failures = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(ws), 1)
        x, y = ws.inputs(idx), ws.labels[idx]
        model = ForecastModel(tiny_config("attention" if seed % 2 else "seq2seq"), seed=seed)
        before, grads = loss_and_grads(model, x, y)
        Sgd(model.parameters(), 1e-4).step(grads)
        after, _ = loss_and_grads(model, x, y)
        failures += not after < before
    assert failures <= 1


def test_adam_first_step_ignores_gradient_scale(rng):
    for scale in (1e-3, 1.0, 1e3):
        p = {"w": Tensor(np.zeros(5))}
        g = rng.normal(size=5)
        Adam(p, 0.1, eps=1e-12).step({"w": g * scale})
        np.testing.assert_allclose(p["w"].data, -0.1 * np.sign(g), rtol=1e-6)


def test_global_norm_clip():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(grads, 1.0) == 5.0
    assert math.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0)


def test_divergence_names_batch():
    ws, norm = toy_windows()
    model = ForecastModel(tiny_config(), seed=0)
    model.parameters()["decoder.out.weight"].data[:] = np.nan
    val, _ = toy_windows(seed=2, stride=20)
    with pytest.raises(TrainingDivergence) as info:
        train(model, ws, val, TrainConfig(max_epochs=1), norm)
    assert info.value.batch_index == 0


def test_overlapping_windows_rejected():
    ws, norm = toy_windows()
    with pytest.raises(ContractError, match="overlap"):
        train(ForecastModel(tiny_config(), seed=0), ws, ws.subset(np.arange(5)), TrainConfig(max_epochs=1), norm)


def test_negative_learning_rate_rejected():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1e-3).validate()


def test_train_log_and_best_epoch(tmp_path):
    ws, norm = toy_windows(stride=2)
    val, _ = toy_windows(seed=5, stride=4)
    res = train(ForecastModel(tiny_config("seq2seq"), seed=0), ws, val,
                TrainConfig(max_epochs=3, batch_size=32, learning_rate=3e-3), norm, {"horizons": [2, 4, 6]})
    assert 1 <= res.best_epoch <= len(res.log) <= 3
    best = max(r.mean_f1 for r in res.log)
    assert res.checkpoint.metadata["val_f1"] == best
    assert res.checkpoint.metadata["horizons"] == [2, 4, 6]
    write_epoch_log(res.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_f1_h1,val_f1_h2,val_f1_h3,val_f1_mean"
    assert len(lines) == len(res.log) + 1


# ---------------------------------------------------------------------------
# checkpoints


def _checkpoint(kind="attention", score="concat"):
    model = ForecastModel(tiny_config(kind, score), seed=3)
    norm = D.NormStats(np.arange(8.0), np.linspace(1, 2, 8), "unit")
    return model, ModelCheckpoint.capture(model, norm, {"horizons": [2, 4, 6], "alphas": [1e-4] * 3})


@pytest.mark.parametrize("kind,score", [("seq2seq", "dot"), ("attention", "dot"), ("attention", "general"),
                                        ("attention", "concat")])
def test_checkpoint_round_trip(tmp_path, kind, score):
    model, ck = _checkpoint(kind, score)
    save_checkpoint(ck, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.metadata == ck.metadata
    assert back.norm_stats.mean.tobytes() == ck.norm_stats.mean.tobytes()
    x = np.random.default_rng(0).normal(size=(5, 10, 8))
    p1, a1 = model.predict_proba(x)
    p2, a2 = back.build_model().predict_proba(x)
    assert p1.tobytes() == p2.tobytes()
    assert (a1 is None) == (a2 is None)


def test_checkpoint_requires_norm_stats():
    model, _ = _checkpoint()
    with pytest.raises(ContractError):
        ModelCheckpoint.capture(model, None)


def test_empty_checkpoint(tmp_path):
    (tmp_path / "e.ckpt").write_bytes(b"")
    with pytest.raises(CheckpointError, match="empty"):
        load_checkpoint(tmp_path / "e.ckpt")


def test_truncated_checkpoint(tmp_path):
    _, ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nothing.ckpt")


def _rewrite_meta(src, dst, edit):
    import json
    with np.load(src) as z:
        entries = {k: z[k] for k in z.files}
    meta = json.loads(entries["__meta__"].tobytes())
    edit(meta)
    entries["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(dst, "wb") as fh:
        np.savez(fh, **entries)


def test_version_mismatch(tmp_path):
    _, ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "m.ckpt")
    _rewrite_meta(tmp_path / "m.ckpt", tmp_path / "v.ckpt", lambda m: m.update(version=99))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")


def test_missing_field(tmp_path):
    _, ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "m.ckpt")
    _rewrite_meta(tmp_path / "m.ckpt", tmp_path / "f.ckpt", lambda m: m.pop("norm_stats"))
    with pytest.raises(CheckpointError, match="norm_stats"):
        load_checkpoint(tmp_path / "f.ckpt")


def test_shape_mismatch(tmp_path):
    _, ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "m.ckpt")
    _rewrite_meta(tmp_path / "m.ckpt", tmp_path / "s.ckpt",
                  lambda m: m["config"]["decoder"].update(hidden=8, embedding=5))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "s.ckpt")
