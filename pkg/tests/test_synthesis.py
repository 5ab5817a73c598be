import numpy as np
import pytest

from cardiacgen import data, dsp, synthesis, training
from cardiacgen.errors import (EmptyInput, InsufficientSynthWindows, LabelOutOfRange, NoCheckpoint,
                               SpecInvalid)
from cardiacgen.synthesis import ManifestEntry, SynthRequest

TINY_NETS = {"generator": {"depth": 1, "base": 4, "gru_hidden": 4}, "critic": {"widths": [4, 4]}}


@pytest.fixture(scope="module")
def checkpoints(toy_split):
    out = {}
    for kind, view in (("hrv", data.hrv_windows), ("morph", data.morph_windows)):
        tr, va = view(toy_split, "train"), view(toy_split, "val")
        cfg = training.TrainConfig(module=kind, epochs=1, warmup_critic_steps=0, lr=1e-3, **TINY_NETS)
        out[kind] = training.train(kind, tr.subset(np.arange(60)), va, cfg).best
    return out


# condition permutation -------------------------------------------------------------
def _windows(n):
    return data.WindowSet(np.zeros((n, 40)), np.full((n, 40), 0.9), np.ones(n, int), np.zeros(n, int),
                          np.zeros(n, int), np.arange(n), 5.0, 5.0)


def test_permutation_factor_sixty():
    reqs = synthesis.permute_conditions(_windows(100))
    assert len(reqs) == 6000


def test_permutation_pairs_once_per_window():
    reqs = synthesis.permute_conditions(_windows(3))
    for k in range(3):
        pairs = [(r.emo, r.ident) for r in reqs if r.index == k]
        assert len(pairs) == len(set(pairs)) == 60
    assert all(r.emo != 0 for r in reqs)


def test_permutation_shrinks_for_partial_identity_set():
    assert len(synthesis.permute_conditions(_windows(10), ids=[0, 1, 2])) == 10 * 12


def test_request_rejects_emotion_zero():
    with pytest.raises(LabelOutOfRange):
        SynthRequest(0, 0, np.zeros(40), 0, 0)


def test_chains_split_on_gaps():
    reqs = [SynthRequest(0, k, np.zeros(40), 1, 0) for k in (0, 4, 8, 16, 20)]
    runs = synthesis.chains(reqs, gap=4)
    assert [[r.index for r in run] for run in runs] == [[0, 4, 8], [16, 20]]


# sampling --------------------------------------------------------------------------
def test_missing_checkpoint():
    with pytest.raises(NoCheckpoint):
        synthesis.sample_hrv(None, [SynthRequest(0, 0, np.full(40, 0.9), 1, 0)])
    with pytest.raises(NoCheckpoint):
        synthesis.sample_ecg(None, np.full((1, 40), 0.9), 1, 0, [0])


def test_wrong_kind_checkpoint(checkpoints):
    with pytest.raises(NoCheckpoint):
        synthesis.sample_hrv(checkpoints["morph"], [SynthRequest(0, 0, np.full(40, 0.9), 1, 0)])


def test_sample_hrv_deterministic_and_band_limited(checkpoints, toy_split):
    hv = data.hrv_windows(toy_split, "val")
    chain = [SynthRequest(int(hv.subject[i]), int(hv.index[i]), hv.cond[i], 2, 1, seed=3) for i in range(4)]
    a = synthesis.sample_hrv(checkpoints["hrv"], chain)
    b = synthesis.sample_hrv(checkpoints["hrv"], chain)
    assert a.shape == (4, 40)
    np.testing.assert_array_equal(a, b)
    for w in a:
        # Hann taper keeps window-edge leakage out of the stop band
        spec = dsp.periodogram_psd(dsp.Signal(w - w.mean(), 5.0), taper="hann")
        assert spec.power[spec.freqs > 0.5 + 2 * spec.bin_hz].sum() <= 1e-2 * spec.power.sum()
    raw = synthesis.Sampler(hrv=checkpoints["hrv"], bandlimit=False).sample_hrv(chain)
    assert not np.allclose(raw, a)


def test_sample_hrv_carries_state(checkpoints):
    cond = np.full(40, 0.9)
    chain = [SynthRequest(0, k, cond, 1, 0, seed=1) for k in (0, 4)]
    joint = synthesis.sample_hrv(checkpoints["hrv"], chain)
    alone = synthesis.sample_hrv(checkpoints["hrv"], chain[1:])
    assert not np.allclose(joint[1], alone[0])


def test_sample_ecg_window_length(checkpoints):
    ecg = synthesis.sample_ecg(checkpoints["morph"], np.full((2, 40), 0.8), 1, 0, [0, 1])
    assert ecg.shape == (2, 800)
    again = synthesis.sample_ecg(checkpoints["morph"], np.full((2, 40), 0.8), 1, 0, [0, 1])
    np.testing.assert_array_equal(ecg, again)


def test_sample_ecg_invalid_tachogram(checkpoints):
    from cardiacgen.errors import InvalidTachogram
    with pytest.raises(InvalidTachogram):
        synthesis.sample_ecg(checkpoints["morph"], np.full((1, 40), 0.1), 1, 0, [0])


# stress-ratio subsampling ----------------------------------------------------------
def test_largest_remainder_example():
    np.testing.assert_array_equal(synthesis.largest_remainder([0.5, 0.2, 0.2, 0.1], 100), [50, 20, 20, 10])


def test_largest_remainder_sums_to_total():
    rng = np.random.default_rng(0)
    for _ in range(200):
        r = rng.uniform(0, 1, 4)
        total = int(rng.integers(0, 500))
        alloc = synthesis.largest_remainder(r, total)
        assert alloc.sum() == total
        assert np.all(np.abs(alloc - r / r.sum() * total) < 1)


def _pool(n_per_pair, ids=(0, 1)):
    emo, ident = [], []
    for i in ids:
        for e in (1, 2, 3, 4):
            emo += [e] * n_per_pair
            ident += [i] * n_per_pair
    return np.array(emo), np.array(ident)


def test_stress_ratio_matches_real():
    real_emo = np.array([1] * 50 + [2] * 20 + [3] * 20 + [4] * 10)
    real_subject = np.zeros(100, int)
    s_emo, s_ident = _pool(60, ids=(0,))
    idx = synthesis.stress_ratio_subsample(s_emo, s_ident, real_emo, real_subject, np.random.default_rng(0))
    counts = [np.sum(s_emo[idx] == e) for e in (1, 2, 3, 4)]
    assert counts == [50, 20, 20, 10]
    assert len(set(idx.tolist())) == len(idx)


def test_stress_ratio_uniform():
    real_emo = np.repeat([1, 2, 3, 4], 7)
    s_emo, s_ident = _pool(10, ids=(0,))
    idx = synthesis.stress_ratio_subsample(s_emo, s_ident, real_emo, np.zeros(28, int), np.random.default_rng(0))
    assert [np.sum(s_emo[idx] == e) for e in (1, 2, 3, 4)] == [7, 7, 7, 7]


def test_stress_ratio_within_one_window_random():
    rng = np.random.default_rng(1)
    for _ in range(20):
        real_emo = rng.integers(1, 5, 97)
        real_subject = rng.integers(0, 3, 97)
        s_emo, s_ident = _pool(60, ids=(0, 1, 2))
        idx = synthesis.stress_ratio_subsample(s_emo, s_ident, real_emo, real_subject, rng)
        for i in range(3):
            real = real_emo[real_subject == i]
            for e in (1, 2, 3, 4):
                want = np.mean(real == e) * len(real)
                got = np.sum((s_ident[idx] == i) & (s_emo[idx] == e))
                assert abs(got - want) <= 1


def test_stress_ratio_insufficient_pool():
    s_emo, s_ident = _pool(2, ids=(0,))
    with pytest.raises(InsufficientSynthWindows):
        synthesis.stress_ratio_subsample(s_emo, s_ident, np.repeat([1, 2, 3, 4], 10), np.zeros(40, int),
                                         np.random.default_rng(0))


# outlier trim ----------------------------------------------------------------------
def test_trim_thousand():
    x = np.random.default_rng(0).permutation(np.arange(1000.0))
    out = synthesis.rr_outlier_trim(x)
    assert len(out) == 990 and out.min() == 5 and out.max() == 994


def test_trim_small_input_untouched():
    x = np.arange(10.0)
    np.testing.assert_array_equal(synthesis.rr_outlier_trim(x), x)


def test_trim_permutation_invariant_multiset():
    rng = np.random.default_rng(2)
    x = rng.integers(0, 20, 2000).astype(float)   # many ties
    for _ in range(5):
        y = rng.permutation(x)
        assert sorted(synthesis.rr_outlier_trim(x)) == sorted(synthesis.rr_outlier_trim(y))


def test_trim_removes_floor_count_per_tail():
    rng = np.random.default_rng(3)
    for n in (199, 200, 201, 399, 400, 1234):
        x = rng.standard_normal(n)
        k = int(np.floor(0.005 * n))
        out = synthesis.rr_outlier_trim(x)
        s = np.sort(x)
        assert len(out) == n - 2 * k
        np.testing.assert_array_equal(np.sort(out), s[k:n - k])


def test_trim_empty():
    with pytest.raises(EmptyInput):
        synthesis.rr_outlier_trim([])


# manifests and corpus generation -----------------------------------------------------
def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry(0, 1, 2, (0, 20), 5), ManifestEntry(1, 4, 0, (4, 40), 6)]
    synthesis.write_manifest(entries, tmp_path / "m.json")
    assert synthesis.read_manifest(tmp_path / "m.json") == entries


@pytest.mark.parametrize("bad", ['[{"subject": 0, "emo": 0, "id": 0, "window_range": [0, 4]}]',
                                 '[{"subject": 0, "emo": 1, "id": 20, "window_range": [0, 4]}]',
                                 '[{"subject": 0, "emo": 1, "id": 0, "window_range": [4, 4]}]',
                                 'not json'])
def test_manifest_invalid(tmp_path, bad):
    (tmp_path / "m.json").write_text(bad)
    with pytest.raises(SpecInvalid):
        synthesis.read_manifest(tmp_path / "m.json")


def test_generate_corpus_deterministic(checkpoints, toy_split, tmp_path):
    manifest = [ManifestEntry(0, 2, 1, (0, 24), 0), ManifestEntry(1, 3, 0, (8, 40), 1)]
    sampler = synthesis.Sampler(checkpoints["hrv"], checkpoints["morph"])
    a, rep = synthesis.generate_corpus(sampler, toy_split, manifest)
    b, _ = synthesis.generate_corpus(sampler, toy_split, manifest)
    data.write_corpus(a, tmp_path / "a.bin")
    data.write_corpus(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert rep.windows_total == 6 + 8
    kept = sum(len(r.ecg) for r in a.records) // 800
    assert kept == rep.windows_total - rep.windows_excluded
    assert a.provenance["source"] == "synthetic" and a.provenance["tool"] == "cardiacgen"
    emo, ident = synthesis.synthetic_window_labels(a)
    assert set(emo) <= {2, 3} and set(ident) <= {0, 1}


def test_default_manifest_grid(toy_split):
    m = synthesis.default_manifest(toy_split)
    assert len(m) == 3 * 4 * 3
    assert {(e.emo, e.id) for e in m if e.subject == 0} == {(e, i) for e in (1, 2, 3, 4) for i in range(3)}


# trained toy Morph model ----------------------------------------------------------
def test_trained_morph_peaks_align_with_input_train(toy_split):
    tr, va = data.morph_windows(toy_split, "train"), data.morph_windows(toy_split, "val")
    cfg = training.TrainConfig(module="morph", epochs=5, lr=1e-3, selection="last")
    ckpt = training.train("morph", tr, va, cfg).best
    tach = data.hrv_windows(toy_split, "val").x[:30]
    ecg, trains = synthesis.Sampler(morph=ckpt).sample_ecg(tach, 1, 0, list(range(30)))
    assert ecg.shape == (30, 800)
    aligned = []
    for window, train in zip(ecg, trains):
        want = np.flatnonzero(train) / synthesis.PEAK_RATE
        got = dsp.detect_r_peaks(dsp.Signal(window, 100.0)).times
        aligned.append(np.mean(np.abs(want[:, None] - got[None, :]).min(axis=1) <= 0.040))
    assert np.mean(aligned) >= 0.8
