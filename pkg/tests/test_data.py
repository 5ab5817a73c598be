import numpy as np
import pytest

from cardiacgen import data, dsp
from cardiacgen.data import SPLIT_CODES
from cardiacgen.dsp import Signal
from cardiacgen.errors import BlockTooLarge, CorruptFile, FormatVersionMismatch, LabelOutOfRange, SpecInvalid


# segmentation -------------------------------------------------------------------
@pytest.mark.parametrize("duration,expected", [(100.0, 47), (8.0, 1), (7.9, 0)])
def test_segment_counts(duration, expected):
    sig = Signal(np.zeros(int(round(duration * 100))), 100.0)
    assert len(data.segment(sig, 8.0, 2.0)) == expected


def test_segment_window_bounds():
    sig = Signal(np.arange(2000, dtype=float), 100.0)
    wins = data.segment(sig, 8.0, 2.0)
    for k, w in enumerate(wins):
        assert len(w) == 800
        assert w.samples[0] == k * 200
        assert w.start == pytest.approx(k * 2.0)


def test_segment_count_formula_vs_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        step = int(rng.integers(1, 50))
        win = int(rng.integers(step, 200))
        n = int(rng.integers(0, 2000))
        brute = sum(1 for k in range(n + 1) if k * step + win <= n)
        assert data.segment_count(n, win, step) == brute


# UD block sampler -----------------------------------------------------------------
def test_ud_sample_block_count():
    blocks = data.ud_sample(1300, 13, np.random.default_rng(0))
    assert len(blocks) == 10
    covered = np.zeros(1300, bool)
    for s in blocks:
        covered[s:s + 13] = True
    assert covered.sum() == 130


def test_ud_sample_single_block_rounds_to_zero():
    assert len(data.ud_sample(13, 13, np.random.default_rng(0))) == 0


def test_ud_sample_block_too_large():
    with pytest.raises(BlockTooLarge):
        data.ud_sample(12, 13, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(20))
def test_ud_sample_disjoint(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(200, 3000))
    blocks = data.ud_sample(n, 13, rng)
    assert len(blocks) == data.n_blocks(n, 13)
    assert np.all(np.diff(blocks) >= 13)
    assert blocks.min() >= 0 and blocks.max() + 13 <= n


def test_ud_sample_respects_availability():
    free = np.ones(400, bool)
    free[100:300] = False
    blocks = data.ud_sample(400, 13, np.random.default_rng(1), available=free)
    for s in blocks:
        assert free[s:s + 13].all()


def test_n_blocks_rounds_half_to_even():
    assert data.n_blocks(325, 13) == 2    # 2.5 -> 2
    assert data.n_blocks(455, 13) == 4    # 3.5 -> 4


# split protocol -----------------------------------------------------------------
def _single_subject_corpus(n_windows):
    n = int((data.WIN + (n_windows - 1) * data.STEP) * 100)
    rec = data.SubjectRecord(0, np.zeros(n), np.zeros(n, int))
    return data.Corpus([rec])


def test_default_drop_is_six():
    assert data.default_drop(8.0, 2.0) == 6


def test_drop_around_test_block(monkeypatch):
    corpus = _single_subject_corpus(300)
    calls = iter([np.array([100]), np.array([], int)])
    monkeypatch.setattr(data, "ud_sample", lambda *a, **k: next(calls))
    tags = data.build_splits(corpus).tags[0]
    assert np.all(tags[100:113] == SPLIT_CODES["test"])
    assert np.all(tags[94:100] == SPLIT_CODES["drop"])
    assert np.all(tags[113:119] == SPLIT_CODES["drop"])
    assert tags[93] == SPLIT_CODES["train"] and tags[119] == SPLIT_CODES["train"]


def test_split_fractions_and_no_overlap():
    corpus = _single_subject_corpus(1400)
    for seed in range(5):
        tags = data.build_splits(corpus, seed=seed).tags[0]
        n = len(tags)
        assert 0.08 <= np.mean(tags == SPLIT_CODES["test"]) <= 0.12
        remainder = np.sum(tags != SPLIT_CODES["test"])
        assert 0.08 <= np.sum(tags == SPLIT_CODES["val"]) / remainder <= 0.12
        train = np.flatnonzero(tags == SPLIT_CODES["train"])
        test = np.flatnonzero(tags == SPLIT_CODES["test"])
        # windows overlap in time when their indices differ by fewer than win/step = 4
        assert np.abs(train[:, None] - test[None, :]).min() > 6
        assert not np.any((tags == SPLIT_CODES["val"]) & (tags == SPLIT_CODES["test"]))
        assert n == 1400


def test_split_deterministic(toy):
    corpus, _ = toy
    a = {k: v.copy() for k, v in data.build_splits(corpus, seed=4).tags.items()}
    b = data.build_splits(corpus, seed=4).tags
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_small_toy_corpus_splits(toy_split):
    for rec in toy_split.records:
        tags = toy_split.tags[rec.subject]
        assert np.sum(tags == SPLIT_CODES["test"]) == 13
        assert np.sum(tags == SPLIT_CODES["val"]) == 13


# condition encoding ---------------------------------------------------------------
def test_emotion_one_hot_stress():
    cv = data.encode_condition(2, 0, np.zeros(40))
    np.testing.assert_array_equal(cv.emo_onehot, [0, 0, 1, 0, 0])


def test_identity_one_hot_basis():
    cv = data.encode_condition(0, 0, np.zeros(40))
    np.testing.assert_array_equal(cv.id_onehot, np.eye(15)[0])


@pytest.mark.parametrize("emo,ident", [(7, 0), (-1, 0), (0, 15)])
def test_label_out_of_range(emo, ident):
    with pytest.raises(LabelOutOfRange):
        data.encode_condition(emo, ident, np.zeros(40))


def test_fold_label():
    assert [data.fold_label(v) for v in range(8)] == [0, 1, 2, 3, 4, 0, 0, 0]


def test_condition_channels_broadcast():
    sig = np.linspace(0.8, 0.9, 40)
    ch = data.encode_condition(3, 7, sig).as_channels()
    assert ch.shape == (21, 40)
    np.testing.assert_array_equal(ch[0], sig)
    assert np.all(ch[1:6].sum(axis=0) == 1) and np.all(ch[6:].sum(axis=0) == 1)
    assert np.all(ch[1 + 3] == 1) and np.all(ch[6 + 7] == 1)


def test_condition_batch_matches_single():
    rng = np.random.default_rng(0)
    cond = rng.standard_normal((6, 40))
    emo, ident = rng.integers(0, 5, 6), rng.integers(0, 15, 6)
    batch = data.condition_batch(cond, emo, ident)
    for i in range(6):
        np.testing.assert_array_equal(batch[i], data.encode_condition(emo[i], ident[i], cond[i]).as_channels())


# toy corpus -----------------------------------------------------------------------
def test_toy_corpus_shape(toy):
    corpus, truth = toy
    assert len(corpus.records) == 3 and len(truth) == 3
    for rec in corpus.records:
        assert rec.rate == 100.0 and len(rec.ecg) == 30000
        assert set(np.unique(rec.labels)) <= set(range(5))


def test_toy_stress_faster_than_baseline(toy):
    corpus, truth = toy
    for rec, peaks in zip(corpus.records, truth):
        rr = np.diff(peaks)
        lab = rec.labels[np.rint(peaks[1:] * rec.rate).astype(int).clip(0, len(rec.labels) - 1)]
        assert rr[lab == 2].mean() < rr[lab == 1].mean()


def test_toy_templates_differ():
    a, b = data.subject_template(0, 0), data.subject_template(1, 0)
    assert not np.allclose(a, b)


def test_toy_same_seed_identical():
    spec = data.ToySpec(n_subjects=2, minutes_per_subject=1)
    a, ta = data.synth_toy_corpus(spec, seed=9)
    b, tb = data.synth_toy_corpus(spec, seed=9)
    assert data.corpora_equal(a, b)
    assert all(np.array_equal(x, y) for x, y in zip(ta, tb))
    c, _ = data.synth_toy_corpus(spec, seed=10)
    assert not data.corpora_equal(a, c)


@pytest.mark.parametrize("kwargs", [dict(n_subjects=16), dict(n_subjects=0), dict(minutes_per_subject=0),
                                    dict(emotion_schedule=((9, 60.0),)), dict(rate=50)])
def test_toy_spec_invalid(kwargs):
    with pytest.raises(SpecInvalid):
        data.synth_toy_corpus(data.ToySpec(**kwargs))


# training views -------------------------------------------------------------------
def test_hrv_windows_shapes(toy_split):
    ws = data.hrv_windows(toy_split, "train")
    assert ws.x.shape[1] == 40 and ws.cond.shape == ws.x.shape
    assert ws.conditions().shape == (len(ws), 21, 40)
    assert np.all((ws.x > 0.25) & (ws.x < 3.0))


def test_morph_windows_shapes(toy_split):
    ws = data.morph_windows(toy_split, "val")
    assert ws.x.shape[1] == 800 and ws.cond.shape[1] == 200
    assert np.all(ws.cond.sum(axis=1) >= 2)
    assert set(np.unique(ws.cond)) <= {0.0, 1.0}


def test_windows_without_peaks_rejected():
    from cardiacgen.errors import InsufficientPeaks
    corpus = _single_subject_corpus(10)
    with pytest.raises(InsufficientPeaks):
        data.hrv_windows(corpus, None)


def test_window_label_is_majority():
    assert data.window_label(np.array([1] * 300 + [2] * 500)) == 2
    assert data.window_label(np.array([3] * 400 + [1] * 400)) == 1


# corpus I/O -----------------------------------------------------------------------
def test_corpus_round_trip(tmp_path, toy_split):
    data.write_corpus(toy_split, tmp_path / "c.bin")
    back = data.read_corpus(tmp_path / "c.bin")
    assert data.corpora_equal(back, toy_split)
    assert back.provenance == toy_split.provenance


def test_corpus_truncated(tmp_path, toy):
    corpus, _ = toy
    path = tmp_path / "c.bin"
    data.write_corpus(corpus, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(CorruptFile):
        data.read_corpus(path)


def test_corpus_bit_flip(tmp_path, toy):
    corpus, _ = toy
    path = tmp_path / "c.bin"
    data.write_corpus(corpus, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFile):
        data.read_corpus(path)


def test_corpus_version_mismatch(tmp_path, toy):
    corpus, _ = toy
    path = tmp_path / "c.bin"
    data.write_corpus(corpus, path)
    raw = bytearray(path.read_bytes())
    raw[len(data.MAGIC)] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionMismatch):
        data.read_corpus(path)


def test_not_a_corpus(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"hello world, definitely not a corpus")
    with pytest.raises(CorruptFile):
        data.read_corpus(tmp_path / "x.bin")


def test_csv_export_import(tmp_path):
    corpus, _ = data.synth_toy_corpus(data.ToySpec(n_subjects=1, minutes_per_subject=0.5), seed=2)
    data.export_corpus_csv(corpus, tmp_path, header="# {\"tool\": \"cardiacgen\"}\n")
    assert (tmp_path / "subject_00.csv").read_text().startswith("# ")
    rec = data.read_subject_csv(tmp_path / "subject_00.csv", 0)
    orig = corpus.records[0]
    assert len(rec.ecg) == len(orig.ecg)
    np.testing.assert_allclose(rec.ecg, orig.ecg, atol=1e-5)
    np.testing.assert_array_equal(rec.labels, orig.labels)


def test_csv_import_resamples_and_folds(tmp_path):
    rate = 700.0
    t = np.arange(int(20 * rate)) / rate
    ecg = np.sin(2 * np.pi * 1.0 * t)
    labels = np.where(t < 10, 1, 6)
    path = tmp_path / "s.csv"
    np.savetxt(path, np.column_stack([t, ecg, labels]), delimiter=",", header="time,ecg,emo_label", comments="")
    rec = data.read_subject_csv(path, 4)
    assert rec.rate == 100.0 and len(rec.ecg) == 2000
    assert set(np.unique(rec.labels)) == {0, 1}
