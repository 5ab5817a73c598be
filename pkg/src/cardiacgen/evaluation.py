"""Evaluation: condition re-derivation, RMSSD realism, and augmentation utility."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import wasserstein_distance

from . import autodiff as ad
from . import dsp
from .autodiff import tensor as T
from .autodiff.nn import Conv1d, Linear, Module
from .autodiff.tensor import Tensor
from .data import SPLIT_NAMES, Corpus, window_label
from .dsp import ECG_RATE, TACHO_RATE, PeakTimes, Signal
from .errors import (EmptySplit, GridMismatch, InsufficientPeaks, NoPeaksFound, TooFewIntervals,
                     TooFewValues)
from .provenance import csv_header

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# re-derivation
# ---------------------------------------------------------------------------
def rmse_ms(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)) * 1000.0)


def rederive_rmse(kind: str, synth, real_condition, window_len: float = 8.0,
                  contiguous: bool = False) -> np.ndarray:
    """Per-window RMSE (ms) between a re-derived condition and the input condition.

    kind="hrv": ``synth`` are tachogram windows (N, L) and ``real_condition``
    the avg-HRV windows they were generated from.  kind="morph": ``synth``
    are ECG windows (N, window_len*100) and ``real_condition`` the input
    tachograms (N, window_len*5); peaks are detected and turned back into a
    tachogram.

    With ``contiguous`` the rows are treated as consecutive pieces of one
    stream (a generation chain) and the 0.125 Hz trend is derived over the
    whole stream before it is cut back into windows.  A 0.125 Hz filter sees
    less than one period inside an 8 s window, so per-window re-derivation
    is dominated by edge effects.
    """
    synth = np.atleast_2d(np.asarray(synth, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(real_condition, dtype=np.float64))
    if synth.shape[0] != cond.shape[0]:
        raise GridMismatch(f"{synth.shape[0]} synthetic windows vs {cond.shape[0]} conditions")
    out = []
    if kind == "hrv":
        if synth.shape != cond.shape:
            raise GridMismatch(f"tachogram grid {synth.shape} differs from condition grid {cond.shape}")
        if contiguous:
            avg = dsp.derive_avg_hrv(Signal(synth.reshape(-1), TACHO_RATE, "s")).samples
            derived = avg.reshape(synth.shape)
        else:
            derived = [dsp.derive_avg_hrv(Signal(s, TACHO_RATE, "s")).samples for s in synth]
        for d, c in zip(derived, cond):
            out.append(rmse_ms(d, c))
    elif kind == "morph":
        if synth.shape[1] != int(round(window_len * ECG_RATE)) or cond.shape[1] != int(round(window_len * TACHO_RATE)):
            raise GridMismatch(f"ECG {synth.shape} / tachogram {cond.shape} do not match {window_len} s windows")
        for s, c in zip(synth, cond):
            peaks = dsp.detect_r_peaks(Signal(s, ECG_RATE))
            if len(peaks) < 2:
                raise NoPeaksFound("fewer than 2 R-peaks in a synthetic window")
            tach = dsp.peaks_to_tachogram(PeakTimes(peaks.times, (0.0, window_len)), TACHO_RATE)
            out.append(rmse_ms(tach.samples, c))
    else:
        raise ValueError(f"kind must be 'hrv' or 'morph', got {kind!r}")
    return np.array(out)


# ---------------------------------------------------------------------------
# bins and HRV features
# ---------------------------------------------------------------------------
@dataclass
class BinReport:
    low: np.ndarray        # smallest value in each bin
    high: np.ndarray       # largest value in each bin
    count: np.ndarray
    members: list          # input indices per bin
    metric: np.ndarray | None = None
    overall: float | None = None

    def __len__(self) -> int:
        return len(self.count)


def equal_count_bins(values, k: int = 10) -> BinReport:
    """Split values into k bins of (almost) equal count, ordered by value.

    Sizes differ by at most one, larger bins first; ties keep input order.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if k < 1 or v.size < k:
        raise TooFewValues(f"need at least k={k} values, got {v.size}")
    order = np.argsort(v, kind="stable")
    groups = np.array_split(order, k)
    return BinReport(np.array([v[g].min() for g in groups]), np.array([v[g].max() for g in groups]),
                     np.array([len(g) for g in groups]), [g for g in groups])


def rmssd(rr_ms) -> float:
    """Root mean square of successive differences of an RR series (ms)."""
    rr = np.asarray(rr_ms, dtype=np.float64).ravel()
    if rr.size < 3:
        raise TooFewIntervals(f"RMSSD needs at least 3 RR values, got {rr.size}")
    return float(np.sqrt(np.mean(np.diff(rr) ** 2)))


def rmssd_windows(peak_times, duration: float, window: float = 32.0, trim: bool = False) -> np.ndarray:
    """RMSSD of every non-overlapping ``window``-second span (intervals fully inside it)."""
    from .synthesis import rr_outlier_trim
    t = np.asarray(peak_times, dtype=np.float64)
    out = []
    for lo in np.arange(0.0, duration - window + 1e-9, window):
        p = t[(t >= lo) & (t < lo + window)]
        rr = np.diff(p) * 1000.0
        if trim and rr.size:
            rr = rr_outlier_trim(rr)
        if rr.size >= 3:
            out.append(rmssd(rr))
    return np.array(out)


def corpus_rmssd(corpus: Corpus, window: float = 32.0) -> np.ndarray:
    vals = [rmssd_windows(rec.peaks, rec.duration, window) for rec in corpus.records if rec.peaks is not None]
    return np.concatenate(vals) if vals else np.zeros(0)


def histogram_distance(a, b, bins: int = 20) -> dict:
    """Histograms of two samples on shared edges plus two distance summaries.

    ``total_variation`` is half the L1 distance between the normalised
    histograms; ``wasserstein_1`` is the earth mover's distance between the
    raw samples (same unit as the inputs).
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise TooFewValues("both samples must be non-empty")
    edges = np.histogram_bin_edges(np.concatenate([a, b]), bins=bins)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    pa, pb = ha / ha.sum(), hb / hb.sum()
    return {"edges": edges.tolist(), "hist_a": ha.tolist(), "hist_b": hb.tolist(),
            "total_variation": float(0.5 * np.abs(pa - pb).sum()),
            "wasserstein_1": float(wasserstein_distance(a, b))}


# ---------------------------------------------------------------------------
# classifier datasets
# ---------------------------------------------------------------------------
@dataclass
class ClassifierConfig:
    task: str = "identity"           # "emotion" | "identity"
    window: float | None = None      # seconds; defaults 10 (emotion) / 4 (identity)
    rate: float | None = None        # input rate; emotion path is oversampled to 256 Hz
    epochs: int = 20
    batch: int = 32
    lr: float | None = None
    momentum: float = 0.6
    optimizer: str | None = None     # "sgd" (identity default) or "adam" (emotion default)
    seed: int = 0
    channels: tuple = (8, 16, 32)

    def __post_init__(self):
        if self.task not in ("emotion", "identity"):
            raise ValueError(f"task must be emotion or identity, got {self.task!r}")
        if self.window is None:
            self.window = 10.0 if self.task == "emotion" else 4.0
        if self.rate is None:
            self.rate = 256.0 if self.task == "emotion" else ECG_RATE
        if self.lr is None:
            self.lr = 1e-3
        if self.optimizer is None:
            self.optimizer = "sgd" if self.task == "identity" else "adam"
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


@dataclass
class ClassifierData:
    x: np.ndarray
    y: np.ndarray           # class labels as given (emotion 1..4 or identity)
    hr: np.ndarray          # beats per minute, 60 / mean RR
    subject: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "ClassifierData":
        return ClassifierData(self.x[idx], self.y[idx], self.hr[idx], self.subject[idx])


def split_intervals(corpus: Corpus, rec, split: str | None) -> list[tuple[float, float]]:
    """Continuous time spans (s) of ``rec`` covered by runs of windows carrying ``split``.

    ``split=None`` means the whole record (synthetic corpora carry no tags and
    may hold several records per identity).
    """
    if split is None:
        return [(0.0, rec.duration)]
    tags = corpus.split_of(rec.subject)
    n = len(tags)
    hit = np.array([SPLIT_NAMES[int(t)] == split for t in tags], dtype=bool)
    spans, k = [], 0
    while k < n:
        if not hit[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and hit[j + 1]:
            j += 1
        spans.append((k * corpus.step, j * corpus.step + corpus.win))
        k = j + 1
    return spans


def window_hr(peaks: np.ndarray | None, ecg: np.ndarray, rate: float, lo: float, hi: float) -> float:
    """Heart rate (bpm) as 60 / mean RR of the peaks inside [lo, hi)."""
    if peaks is not None:
        p = peaks[(peaks >= lo) & (peaks < hi)]
    else:
        try:
            p = dsp.detect_r_peaks(Signal(ecg.astype(np.float64), rate)).times + lo
        except (NoPeaksFound, InsufficientPeaks):
            p = np.zeros(0)
    if p.size < 2:
        return float("nan")
    return 60.0 / float(np.mean(np.diff(p)))


def classifier_dataset(corpus: Corpus, split: str | None, cfg: ClassifierConfig) -> ClassifierData:
    """Non-overlapping ``cfg.window`` windows cut from continuous split intervals.

    Emotion windows keep only labels 1..4 and are oversampled to ``cfg.rate``.
    """
    xs, ys, hrs, subs = [], [], [], []
    for rec in corpus.records:
        nw = int(round(cfg.window * rec.rate))
        for lo_s, hi_s in split_intervals(corpus, rec, split):
            lo = int(round(lo_s * rec.rate))
            hi = min(int(round(hi_s * rec.rate)), len(rec.ecg))
            for a in range(lo, hi - nw + 1, nw):
                seg = rec.ecg[a:a + nw].astype(np.float64)
                if cfg.task == "emotion":
                    label = window_label(rec.labels[a:a + nw])
                    if label not in (1, 2, 3, 4):
                        continue
                else:
                    label = rec.subject
                if cfg.rate != rec.rate:
                    seg = dsp.resample(Signal(seg, rec.rate), cfg.rate).samples
                xs.append(seg)
                ys.append(label)
                hrs.append(window_hr(rec.peaks, rec.ecg[a:a + nw], rec.rate, a / rec.rate,
                                     (a + nw) / rec.rate))
                subs.append(rec.subject)
    if not xs:
        return ClassifierData(np.zeros((0, int(round(cfg.window * cfg.rate)))), np.zeros(0, int),
                              np.zeros(0), np.zeros(0, int))
    return ClassifierData(np.array(xs), np.array(ys), np.array(hrs), np.array(subs))


def augment(train: ClassifierData, synth: ClassifierData, rng: np.random.Generator) -> ClassifierData:
    """Union of real and synthetic windows in roughly equal numbers.

    The real set is repeated ``max(1, |synth| // |train|)`` times and the
    synthetic set is subsampled to the same size.
    """
    if len(train) == 0 or len(synth) == 0:
        raise EmptySplit("augmentation needs non-empty real and synthetic sets")
    reps = max(1, len(synth) // len(train))
    real = train.subset(np.tile(np.arange(len(train)), reps))
    take = min(len(real), len(synth))
    fake = synth.subset(np.sort(rng.choice(len(synth), size=take, replace=False)))
    return ClassifierData(np.concatenate([real.x, fake.x]), np.concatenate([real.y, fake.y]),
                          np.concatenate([real.hr, fake.hr]), np.concatenate([real.subject, fake.subject]))


# ---------------------------------------------------------------------------
# classifiers
# ---------------------------------------------------------------------------
class ConvClassifier(Module):
    """Strided 1-d conv net, global average pooling, linear soft-max head."""

    def __init__(self, n_classes: int, channels=(8, 16, 32), kernel: int = 7, stride: int = 2,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.convs = []
        c_prev = 1
        for c in channels:
            self.convs.append(Conv1d(c_prev, c, kernel, rng, stride=stride))
            c_prev = c
        self.out = Linear(c_prev, n_classes, rng)

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        h = T.reshape(x, (x.shape[0], 1, x.shape[1]))
        for conv in self.convs:
            h = T.leaky_relu(conv(h), 0.1)
        return self.out(T.mean(h, axis=2))


def _standardise(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


@dataclass
class Classifier:
    net: ConvClassifier
    classes: np.ndarray
    cfg: ClassifierConfig
    log: list = field(default_factory=list)

    def logits(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        with T.no_grad():
            for lo in range(0, len(x), batch):
                out.append(self.net(_standardise(x[lo:lo + batch])).data)
        return np.concatenate(out) if out else np.zeros((0, len(self.classes)))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.logits(x), axis=1)]

    def error(self, data: ClassifierData) -> float:
        return float(np.mean(self.predict(data.x) != data.y) * 100.0)


def cross_entropy(logits: Tensor, target_idx: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(target_idx)), target_idx] = 1.0
    return -T.mean(T.tsum(T.log_softmax(logits, axis=1) * Tensor(onehot), axis=1))


def train_classifier(cfg: ClassifierConfig, train: ClassifierData, val: ClassifierData | None = None,
                     classes=None) -> Classifier:
    """Categorical cross-entropy training; returns the best-validation weights.

    Identity defaults to SGD with Nesterov momentum 0.6, emotion to Adam.
    Validation error is logged after each epoch.
    """
    if len(train) == 0:
        raise EmptySplit("classifier training set is empty")
    classes = np.unique(train.y) if classes is None else np.asarray(classes)
    index = {c: i for i, c in enumerate(classes)}
    target = np.array([index[c] for c in train.y])
    net = ConvClassifier(len(classes), cfg.channels, seed=cfg.seed)
    params = net.parameters()
    if cfg.optimizer == "sgd":
        opt = ad.SGD(params, cfg.lr, cfg.momentum, nesterov=True)
    else:
        opt = ad.Adam(params, cfg.lr)
    clf = Classifier(net, classes, cfg)
    rng = np.random.default_rng(cfg.seed)
    x = _standardise(train.x)
    best = (np.inf, net.state_dict())
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(order), cfg.batch):
            idx = order[lo:lo + cfg.batch]
            with T.enable_grad():
                loss = cross_entropy(net(x[idx]), target[idx])
                grads = T.grad(loss, params)
            opt.step([g.data for g in grads])
            losses.append(float(loss.data))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val is not None and len(val):
            row["val_error"] = clf.error(val)
            if row["val_error"] < best[0]:
                best = (row["val_error"], net.state_dict())
        clf.log.append(row)
        log.info("classifier epoch %d: %s", epoch, row)
    if val is not None and len(val):
        net.load_state_dict(best[1])
    return clf


def error_by_bin(classifier, data: ClassifierData, k: int = 10) -> BinReport:
    """Misclassification (%) overall and per equal-count heart-rate bin.

    ``classifier`` is anything with ``predict(x)``.  Windows without a valid
    heart rate are left out of the binning but count towards the overall error.
    """
    pred = np.asarray(classifier.predict(data.x))
    wrong = pred != data.y
    ok = np.isfinite(data.hr)
    rep = equal_count_bins(data.hr[ok], k)
    idx = np.flatnonzero(ok)
    rep.metric = np.array([wrong[idx[m]].mean() * 100.0 for m in rep.members])
    rep.overall = float(wrong.mean() * 100.0)
    return rep


def write_bin_csv(report: BinReport, path, prov: dict, metric_name: str = "error_pct") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_header(prov))
        w = csv.writer(fh)
        w.writerow(["bin_low_hr", "bin_high_hr", "count", metric_name])
        for lo, hi, n, m in zip(report.low, report.high, report.count, report.metric):
            w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(n), f"{m:.4f}"])


def write_summary_json(report: BinReport, path, *, dataset: str, task: str, seed: int, prov: dict) -> None:
    summary = {"overall_error": report.overall, "per_bin": [
        {"low": float(lo), "high": float(hi), "count": int(n), "error": float(m)}
        for lo, hi, n, m in zip(report.low, report.high, report.count, report.metric)],
        "dataset": dataset, "task": task, "seed": seed, "provenance": prov}
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
