import os
import subprocess

import numpy as np
import pytest

import mp2m

SMALL = {"steps": "20", "batch_size": "8", "diffusion_steps": "10"}


@pytest.fixture(scope="module")
def data():
    train = mp2m.synth_generate(n_per_pattern=6, seed=1, split="train")
    test = mp2m.synth_generate(n_per_pattern=1, seed=2, split="test")
    bank = mp2m.build_bank(train, k=8, seed=0)
    return train, test, bank


def test_synth_and_sample(data):
    train, test, _ = data
    assert len(train) == 48 and len(test) == 8
    s = train[0]
    assert s.observed.shape == (8, 2) and s.future.shape == (12, 2)
    assert s.split == "train" and s.pattern_label == 0


def test_sample_validation():
    with pytest.raises(ValueError):
        mp2m.Sample(np.zeros((8, 3)), np.zeros((12, 2)))
    with pytest.raises(mp2m.DataError):
        mp2m.Sample(np.zeros((8, 2)), np.full((12, 2), np.nan))


def test_bank_round_trip(data, tmp_path):
    _, _, bank = data
    assert len(bank) == 8
    p = str(tmp_path / "bank.txt")
    mp2m.save_bank(bank, p)
    assert mp2m.load_bank(p) == bank
    idx, score, _ = mp2m.address(bank, bank.pattern_mean(3)[:8])
    assert idx == 3 and np.isfinite(score)


def test_schedule_and_metrics():
    sch = mp2m.make_schedule()
    assert sch.steps() == 100
    assert abs(sch.alpha_bars[-1] - 0.0786) < 0.004
    gt = np.zeros((12, 2))
    pred = np.ones((12, 2))
    assert mp2m.ade(pred, gt) == pytest.approx(np.sqrt(2))
    assert mp2m.best_of_k([pred, gt], gt) == (0.0, 0.0)


def test_train_predict_evaluate(data, tmp_path):
    train, test, bank = data
    ckpt, losses = mp2m.train(train, bank, SMALL)
    assert ckpt.step == 20 and len(losses) == 20
    assert all(np.isfinite(losses))
    preds = mp2m.predict(ckpt, bank, test, k=4, seed=3)
    assert preds.shape == (8, 4, 12, 2)
    again = mp2m.predict(ckpt, bank, test, k=4, seed=3, workers=2)
    assert np.array_equal(preds, again)
    rep = mp2m.evaluate(ckpt, bank, test, k=4, seed=3)
    assert rep["n"] == 8 and rep["K"] == 4 and rep["fde"] >= 0
    p = str(tmp_path / "ck.txt")
    mp2m.save_checkpoint(ckpt, p)
    assert np.array_equal(mp2m.predict(mp2m.load_checkpoint(p), bank, test, k=4, seed=3), preds)


def test_oracle_checkpoint_is_exact(data):
    _, test, bank = data
    rep = mp2m.evaluate(mp2m.oracle_checkpoint(bank), bank, test, k=2)
    assert rep["ade"] == pytest.approx(0.0, abs=1e-12)


def test_plot(data):
    _, test, _ = data
    svg = mp2m.plot_svg(test[0], [test[0].future + 0.1])
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert svg.count("<polyline") == 3


def test_run_cli(tmp_path):
    out = str(tmp_path / "d.ds")
    code, _, _ = mp2m.run_cli(["synth", "--out", out, "--seed", "1", "--per-pattern", "2"])
    assert code == 0 and len(mp2m.load_dataset(out)) == 16
    code, _, err = mp2m.run_cli(["synth", "--out", out])
    assert code == 1 and "seed" in err


@pytest.mark.skipif("MP2M_CLI" not in os.environ, reason="command line tool path not set")
def test_binary_help():
    r = subprocess.run([os.environ["MP2M_CLI"], "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "predict" in r.stdout
