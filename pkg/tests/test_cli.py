import csv
import json
from pathlib import Path

import numpy as np
import pytest

from lobhorizon import tensor as tn
from lobhorizon.cli import main
from lobhorizon.gradcheck import COMPONENTS

CONFIGS = Path(__file__).parents[1] / "configs"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def smoke_config(workdir):
    cfg = json.loads((CONFIGS / "reduced.json").read_text())
    cfg["train"].update(max_epochs=2)
    path = workdir / "smoke.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def synth_file(workdir):
    out = workdir / "train.csv"
    assert main(["synth", "--events", "2000", "--signal", "0.8", "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(workdir, synth_file, smoke_config):
    paths = {}
    for kind in ("attention", "seq2seq"):
        ck = workdir / f"{kind}.ckpt"
        code = main(["train", "--data", str(synth_file), "--model", kind, "--score", "general",
                     "--config", str(smoke_config), "--out", str(ck)])
        assert code == 0
        paths[kind] = ck
    return paths


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_deterministic_files(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["synth", "--events", "1000", "--signal", "0", "--seed", "1", "--out", str(out)]) == 0
    lines = a.read_text().splitlines()
    assert len(lines) == 1001 and lines[0].startswith("ts,ap1")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.state.csv").read_bytes() == (tmp_path / "b.state.csv").read_bytes()


def test_synth_signal_out_of_range(tmp_path, capsys):
    assert main(["synth", "--events", "10", "--signal", "1.2", "--out", str(tmp_path / "x.csv")]) == 2
    assert "signal_strength" in capsys.readouterr().err


def test_synth_unwritable_path(tmp_path, capsys):
    assert main(["synth", "--events", "10", "--out", str(tmp_path / "no" / "such" / "x.csv")]) == 2
    assert "cannot write" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"synth": {"n_events": 10, "volatility": 3}}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    assert "volatility" in capsys.readouterr().err
    cfg.write_text(json.dumps({"optimiser": {}}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_events": 50, "seed": 9}}))
    assert main(["synth", "--config", str(cfg), "--events", "20", "--out", str(tmp_path / "x.csv")]) == 0
    assert len((tmp_path / "x.csv").read_text().splitlines()) == 21


# ---------------------------------------------------------------------------
# train / eval / predict


def test_train_writes_checkpoint_and_log(trained, capsys):
    for ck in trained.values():
        assert ck.exists() and ck.with_suffix(".log.csv").exists()


def test_train_rejects_unknown_score(synth_file, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--data", str(synth_file), "--score", "xyz", "--out", str(tmp_path / "m.ckpt")])
    assert info.value.code == 2


def test_train_bad_data(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("ts,ap1\n1,2\n")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.ckpt")]) == 2


def test_train_rerun_reproduces_log(workdir, synth_file, smoke_config, trained):
    ck = workdir / "again.ckpt"
    assert main(["train", "--data", str(synth_file), "--model", "attention", "--score", "general",
                 "--config", str(smoke_config), "--out", str(ck)]) == 0
    assert ck.with_suffix(".log.csv").read_bytes() == trained["attention"].with_suffix(".log.csv").read_bytes()


def test_divergence_exit_code(synth_file, smoke_config, tmp_path, capsys):
    code = main(["train", "--data", str(synth_file), "--config", str(smoke_config), "--lr", "1e300",
                 "--out", str(tmp_path / "m.ckpt")])
    assert code == 3
    assert "diverged" in capsys.readouterr().err


def _read_grid(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in r[1:4]] for r in rows])


def test_eval_outputs(trained, synth_file, workdir):
    for kind, ck in trained.items():
        report = workdir / f"report_{kind}"
        assert main(["eval", "--ckpt", str(ck), "--data", str(synth_file), "--report", str(report)]) == 0
        assert (report / "attention.csv").exists() == (kind == "attention")
        with open(report / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["horizon"] for r in rows] == ["k=10", "k=20", "k=30", "k=50", "k=100"]
        for r in rows:
            grid = _read_grid(report / f"confusion_{r['horizon'].replace('=', '')}.csv")
            assert float(r["accuracy"]) == 100.0 * np.trace(grid) / grid.sum()


def test_eval_twice_identical(trained, synth_file, workdir):
    dirs = [workdir / "r1", workdir / "r2"]
    for d in dirs:
        assert main(["eval", "--ckpt", str(trained["attention"]), "--data", str(synth_file),
                     "--report", str(d)]) == 0
    for f in sorted(p.name for p in dirs[0].iterdir()):
        assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes(), f


def test_eval_missing_checkpoint(synth_file, tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(synth_file),
                 "--report", str(tmp_path / "r")]) == 2
    assert "none.ckpt" in capsys.readouterr().err


def test_eval_warns_on_shifted_data(trained, tmp_path):
    out = tmp_path / "far.csv"
    assert main(["synth", "--events", "600", "--seed", "8", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    # move every price far from the training regime
    shifted = [lines[0]]
    for line in lines[1:]:
        cells = line.split(",")
        for j in range(1, len(cells), 2):
            cells[j] = repr(float(cells[j]) + 50.0)
        shifted.append(",".join(cells))
    out.write_text("\n".join(shifted) + "\n")
    with pytest.warns(UserWarning, match="NormStats"):
        assert main(["eval", "--ckpt", str(trained["seq2seq"]), "--data", str(out),
                     "--report", str(tmp_path / "r")]) == 0


def test_predict(trained, synth_file, tmp_path):
    out = tmp_path / "pred.csv"
    assert main(["predict", "--ckpt", str(trained["attention"]), "--data", str(synth_file), "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    p = np.array([[float(rows[0][f"p_{c}_k10"]) for c in ("down", "stationary", "up")]])
    assert abs(p.sum() - 1) < 1e-9
    assert int(rows[0]["class_k10"]) == int(p.argmax())


# ---------------------------------------------------------------------------
# gradcheck


@pytest.fixture()
def quick_gradcheck(tmp_path):
    cfg = json.loads((CONFIGS / "gradcheck.json").read_text())
    cfg["gradcheck"]["seeds"] = 1
    path = tmp_path / "gc.json"
    path.write_text(json.dumps(cfg))
    return path


def test_gradcheck_lists_every_component_once(quick_gradcheck, capsys):
    assert main(["gradcheck", "--config", str(quick_gradcheck)]) == 0
    out = capsys.readouterr().out
    names = [line.split()[0] for line in out.splitlines() if "max_rel_err=" in line]
    assert sorted(names) == sorted(COMPONENTS)


def test_gradcheck_catches_corrupted_rule(quick_gradcheck, monkeypatch, capsys):
    good = tn.BACKWARD["tanh"]
    monkeypatch.setitem(tn.BACKWARD, "tanh", lambda ctx, g: [1.01 * gi if gi is not None else None
                                                             for gi in good(ctx, g)])
    assert main(["gradcheck", "--config", str(quick_gradcheck)]) == 4
    out = capsys.readouterr().out
    assert "FAILED" in out and "tanh" in out.splitlines()[-1]


def test_gradcheck_refuses_large_config(tmp_path):
    cfg = tmp_path / "big.json"
    cfg.write_text(json.dumps({"gradcheck": {"window": 50}}))
    assert main(["gradcheck", "--config", str(cfg)]) == 2
