import csv
import json

import numpy as np
import pytest

from cardiacgen import data, dsp, evaluation
from cardiacgen.errors import EmptySplit, GridMismatch, NoPeaksFound, TooFewIntervals, TooFewValues
from cardiacgen.evaluation import ClassifierConfig, ClassifierData


# re-derivation -----------------------------------------------------------------------
def test_rederive_identical_is_zero():
    x = np.full((2, 40), 0.9)
    np.testing.assert_allclose(evaluation.rederive_rmse("hrv", x, x), 0.0, atol=1e-9)


def test_rederive_constant_offset():
    out = evaluation.rederive_rmse("hrv", np.full((1, 40), 1.010), np.full((1, 40), 1.000))
    assert out[0] == pytest.approx(10.0, abs=1e-6)


def test_rederive_grid_mismatch():
    with pytest.raises(GridMismatch):
        evaluation.rederive_rmse("hrv", np.zeros((1, 40)), np.zeros((1, 41)))
    with pytest.raises(GridMismatch):
        evaluation.rederive_rmse("hrv", np.zeros((2, 40)), np.zeros((1, 40)))
    with pytest.raises(GridMismatch):
        evaluation.rederive_rmse("morph", np.zeros((1, 700)), np.zeros((1, 40)))


def test_rederive_morph_flat_ecg():
    with pytest.raises(NoPeaksFound):
        evaluation.rederive_rmse("morph", np.zeros((1, 800)), np.full((1, 40), 1.0))


def test_rederive_perfect_hrv_generator_bounded(toy_split):
    """Real tachograms in place of generated ones, re-derived over each subject's chain."""
    ws = data.hrv_windows(toy_split, None)
    for s in range(3):
        idx = np.flatnonzero((ws.subject == s) & (ws.index % 4 == 0))
        err = evaluation.rederive_rmse("hrv", ws.x[idx], ws.cond[idx], contiguous=True)
        assert err.mean() < 5.0


def test_rederive_morph_on_real_ecg(toy_split):
    ws = data.hrv_windows(toy_split, "val")
    rec = toy_split.records[0]
    idx = np.flatnonzero(ws.subject == 0)[:5]
    ecg = np.array([rec.ecg[k * 200:k * 200 + 800] for k in ws.index[idx]])
    err = evaluation.rederive_rmse("morph", ecg, ws.x[idx])
    assert np.all(err < 60.0)


# bins ----------------------------------------------------------------------------
def test_bins_hundred():
    rep = evaluation.equal_count_bins(np.random.default_rng(0).standard_normal(100), 10)
    assert list(rep.count) == [10] * 10


def test_bins_remainder():
    rep = evaluation.equal_count_bins(np.arange(105.0), 10)
    assert sorted(rep.count) == [10] * 5 + [11] * 5
    assert np.all(np.diff(rep.low) > 0)


def test_bins_all_equal_stable():
    rep = evaluation.equal_count_bins(np.ones(30), 10)
    assert len(rep) == 10
    np.testing.assert_array_equal(np.concatenate(rep.members), np.arange(30))


def test_bins_partition_properties():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 300))
        k = int(rng.integers(1, n + 1))
        v = rng.integers(0, 10, n).astype(float)
        rep = evaluation.equal_count_bins(v, k)
        allm = np.concatenate(rep.members)
        assert sorted(allm.tolist()) == list(range(n))
        assert rep.count.max() - rep.count.min() <= 1
        assert np.all(rep.high[:-1] <= rep.low[1:])


def test_bins_too_few():
    with pytest.raises(TooFewValues):
        evaluation.equal_count_bins(np.arange(5.0), 10)


# RMSSD ---------------------------------------------------------------------------
def test_rmssd_alternating():
    assert evaluation.rmssd([800, 810, 800, 810]) == pytest.approx(10.0, abs=1e-12)


def test_rmssd_constant():
    assert evaluation.rmssd([900.0] * 20) == 0.0


def test_rmssd_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        rr = rng.uniform(400, 1500, int(rng.integers(3, 100)))
        acc = 0.0
        for i in range(1, len(rr)):
            acc += (rr[i] - rr[i - 1]) ** 2
        assert abs(evaluation.rmssd(rr) - (acc / (len(rr) - 1)) ** 0.5) <= 1e-9


def test_rmssd_too_few():
    with pytest.raises(TooFewIntervals):
        evaluation.rmssd([800, 810])


def test_rmssd_windows_non_overlapping():
    peaks = np.cumsum(np.tile([0.8, 0.81], 100))
    vals = evaluation.rmssd_windows(peaks, peaks[-1] + 0.5, 32.0)
    assert len(vals) == int((peaks[-1] + 0.5) // 32)
    np.testing.assert_allclose(vals, 10.0, atol=1e-6)


def test_histogram_distance():
    a = np.random.default_rng(0).normal(30, 5, 500)
    same = evaluation.histogram_distance(a, a)
    assert same["total_variation"] == 0.0 and same["wasserstein_1"] == 0.0
    shifted = evaluation.histogram_distance(a, a + 10)
    assert shifted["wasserstein_1"] == pytest.approx(10.0, rel=1e-9)


# classifier data -----------------------------------------------------------------
def test_classifier_config_geometry():
    emo, ident = ClassifierConfig("emotion"), ClassifierConfig("identity")
    assert (emo.window, emo.rate, emo.optimizer) == (10.0, 256.0, "adam")
    assert (ident.window, ident.rate, ident.optimizer, ident.lr, ident.momentum) == (4.0, 100.0, "sgd", 1e-3, 0.6)


def test_emotion_dataset_oversampled_labels(toy_split):
    ds = evaluation.classifier_dataset(toy_split, "train", ClassifierConfig("emotion"))
    assert ds.x.shape[1] == 2560
    assert set(np.unique(ds.y)) <= {1, 2, 3, 4}
    assert np.all(np.isfinite(ds.hr))


def test_identity_dataset_windows_inside_split(toy_split):
    cfg = ClassifierConfig("identity")
    test = evaluation.classifier_dataset(toy_split, "test", cfg)
    train = evaluation.classifier_dataset(toy_split, "train", cfg)
    assert test.x.shape[1] == 400
    assert set(np.unique(test.y)) == {0, 1, 2}
    assert len(train) > 5 * len(test) > 0


def test_augment_balance():
    rng = np.random.default_rng(0)
    train = ClassifierData(rng.standard_normal((40, 10)), np.zeros(40, int), np.ones(40), np.zeros(40, int))
    synth = ClassifierData(rng.standard_normal((500, 10)), np.ones(500, int), np.ones(500), np.zeros(500, int))
    aug = evaluation.augment(train, synth, rng)
    n_real, n_synth = np.sum(aug.y == 0), np.sum(aug.y == 1)
    assert 0.9 <= n_synth / n_real <= 1.1
    with pytest.raises(EmptySplit):
        evaluation.augment(train.subset(np.arange(0)), synth, rng)


# classifiers and reports --------------------------------------------------------------
class Stub:
    def __init__(self, fn):
        self.fn = fn

    def predict(self, x):
        return self.fn(x)


def _balanced(n=400):
    rng = np.random.default_rng(0)
    y = np.repeat([1, 2, 3, 4], n // 4)
    return ClassifierData(rng.standard_normal((n, 5)), y, rng.uniform(50, 100, n), np.zeros(n, int))


def test_perfect_classifier_zero_everywhere():
    ds = _balanced()
    rep = evaluation.error_by_bin(Stub(lambda x: ds.y), ds, 10)
    assert rep.overall == 0.0 and np.all(rep.metric == 0.0)


def test_majority_stub_seventy_five():
    ds = _balanced()
    rep = evaluation.error_by_bin(Stub(lambda x: np.ones(len(x), int)), ds, 10)
    assert rep.overall == pytest.approx(75.0)
    assert len(rep) == 10 and list(rep.count) == [40] * 10


def test_bin_csv_and_summary(tmp_path):
    ds = _balanced()
    rep = evaluation.error_by_bin(Stub(lambda x: np.ones(len(x), int)), ds, 10)
    prov = {"tool": "cardiacgen", "seed": 0}
    evaluation.write_bin_csv(rep, tmp_path / "b.csv", prov)
    evaluation.write_summary_json(rep, tmp_path / "s.json", dataset="train", task="emotion", seed=0, prov=prov)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.DictReader(lines[1:]))
    assert [r for r in rows[0]] == ["bin_low_hr", "bin_high_hr", "count", "error_pct"]
    assert len(rows) == 10
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["overall_error"] == pytest.approx(75.0) and len(summary["per_bin"]) == 10
    assert {"dataset", "task", "seed", "provenance"} <= set(summary)


def test_classifier_learns_separable_toy(toy_split):
    cfg = ClassifierConfig("identity", epochs=15, optimizer="adam", lr=1e-3)
    train = evaluation.classifier_dataset(toy_split, "train", cfg)
    val = evaluation.classifier_dataset(toy_split, "val", cfg)
    test = evaluation.classifier_dataset(toy_split, "test", cfg)
    clf = evaluation.train_classifier(cfg, train, val)
    assert clf.error(test) < 10.0
    assert len(clf.log) == 15 and all("val_error" in row for row in clf.log)


def test_classifier_empty_training_set():
    with pytest.raises(EmptySplit):
        evaluation.train_classifier(ClassifierConfig("identity"), ClassifierData(np.zeros((0, 400)), np.zeros(0, int),
                                                                                np.zeros(0)))


def test_cross_entropy_uniform_logits():
    loss = evaluation.cross_entropy(evaluation.Tensor(np.zeros((4, 4))), np.array([0, 1, 2, 3]))
    assert float(loss.data) == pytest.approx(np.log(4))
