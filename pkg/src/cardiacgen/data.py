"""Corpus construction: toy ECG synthesis, windowing, splits, conditions, file I/O."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import ECG_RATE, PEAK_RATE, TACHO_RATE, PeakTimes, Signal
from .errors import (BlockTooLarge, CorruptFile, FormatVersionMismatch, InsufficientPeaks,
                     LabelOutOfRange, SpecInvalid)

log = logging.getLogger(__name__)

N_EMO = 5
N_ID = 15
WIN = 8.0
STEP = 2.0
BSIZE = 13
SPLIT_CODES = {"none": 0, "train": 1, "val": 2, "test": 3, "drop": 4}
SPLIT_NAMES = {v: k for k, v in SPLIT_CODES.items()}


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------
@dataclass
class SubjectRecord:
    """One subject's continuous ECG with per-sample emotion labels."""

    subject: int
    ecg: np.ndarray
    labels: np.ndarray
    rate: float = ECG_RATE
    peaks: np.ndarray | None = None

    def __post_init__(self):
        self.ecg = np.asarray(self.ecg, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != self.ecg.shape:
            raise ValueError("labels must align with ECG samples")
        if self.peaks is not None:
            self.peaks = np.asarray(self.peaks, dtype=np.float64)

    @property
    def duration(self) -> float:
        return len(self.ecg) / self.rate

    def signal(self) -> Signal:
        return Signal(self.ecg.astype(np.float64), self.rate, "mV")


@dataclass
class LabeledWindow:
    subject: int
    index: int
    start: float
    emo: int
    x: np.ndarray
    split: str = "none"


@dataclass
class Corpus:
    records: list[SubjectRecord]
    win: float = WIN
    step: float = STEP
    tags: dict[int, np.ndarray] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def record(self, subject: int) -> SubjectRecord:
        for r in self.records:
            if r.subject == subject:
                return r
        raise KeyError(subject)

    def n_windows(self, subject: int) -> int:
        rec = self.record(subject)
        return segment_count(len(rec.ecg), _samples(self.win, rec.rate), _samples(self.step, rec.rate))

    def split_of(self, subject: int) -> np.ndarray:
        if subject not in self.tags:
            return np.zeros(self.n_windows(subject), dtype=np.uint8)
        return self.tags[subject]

    def windows(self, split: str | None = None) -> list[LabeledWindow]:
        out = []
        for rec in self.records:
            nw, ns = _samples(self.win, rec.rate), _samples(self.step, rec.rate)
            tags = self.split_of(rec.subject)
            for k in range(self.n_windows(rec.subject)):
                name = SPLIT_NAMES[int(tags[k])]
                if split is not None and name != split:
                    continue
                lo = k * ns
                out.append(LabeledWindow(rec.subject, k, lo / rec.rate, window_label(rec.labels[lo:lo + nw]),
                                         rec.ecg[lo:lo + nw], name))
        return out

    def ensure_peaks(self) -> None:
        """Run R-peak detection on every record lacking peaks."""
        for rec in self.records:
            if rec.peaks is None:
                rec.peaks = dsp.detect_r_peaks(rec.signal()).times


def _samples(seconds: float, rate: float) -> int:
    return int(round(seconds * rate))


def window_label(labels: np.ndarray) -> int:
    """Majority emotion label of a window (ties go to the smaller label)."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=N_EMO)
    return int(np.argmax(counts))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------
def segment_count(n_samples: int, n_win: int, n_step: int) -> int:
    if n_samples < n_win:
        return 0
    return (n_samples - n_win) // n_step + 1


def segment(signal: Signal, win: float = WIN, step: float = STEP) -> list[Signal]:
    """Overlapping windows; window k covers [k*step, k*step + win)."""
    if not (win >= step > 0):
        raise ValueError(f"need win >= step > 0, got win={win}, step={step}")
    nw, ns = _samples(win, signal.rate), _samples(step, signal.rate)
    count = segment_count(len(signal), nw, ns)
    return [Signal(signal.samples[k * ns:k * ns + nw], signal.rate, signal.unit,
                   signal.start + k * ns / signal.rate) for k in range(count)]


# ---------------------------------------------------------------------------
# split protocol
# ---------------------------------------------------------------------------
def n_blocks(n_segments: int, bsize: int) -> int:
    # banker's rounding, as Python's round()
    return int(round(0.1 * n_segments / bsize))


def ud_sample(n_segments: int, bsize: int, rng: np.random.Generator,
              available: np.ndarray | None = None, base: int | None = None) -> np.ndarray:
    """Uniformly place non-overlapping blocks of ``bsize`` consecutive segments.

    The number of blocks makes them cover about 10% of ``base`` segments
    (default: the available ones).  Only blocks lying entirely on available
    segments qualify.  Returns the sorted block start indices.
    """
    if bsize > n_segments:
        raise BlockTooLarge(f"block size {bsize} exceeds {n_segments} segments")
    free = np.ones(n_segments, dtype=bool) if available is None else np.array(available, dtype=bool)
    target = n_blocks(int(free.sum()) if base is None else int(base), bsize)
    starts: list[int] = []
    for _ in range(target):
        run = np.convolve(free.astype(np.int64), np.ones(bsize, dtype=np.int64), mode="valid")
        valid = np.flatnonzero(run == bsize)
        if valid.size == 0:
            log.warning("only %d of %d blocks fit in %d segments", len(starts), target, n_segments)
            break
        s = int(valid[rng.integers(valid.size)])
        starts.append(s)
        free[s:s + bsize] = False
    return np.array(sorted(starts), dtype=np.int64)


def default_drop(win: float, step: float) -> int:
    """Segments dropped on each side of a test block (6 for win=8 s, step=2 s)."""
    return 2 * math.ceil((win - step) / step)


def build_splits(corpus: Corpus, bsize: int = BSIZE, seed: int = 0, drop: int | None = None) -> Corpus:
    """Tag each window train / val / test / drop, per subject.

    Test blocks are drawn first; ``drop`` segments on both sides of every test
    block are excluded; validation blocks (about 10% of the post-test
    remainder) are placed on what remains and the rest is train.
    """
    if drop is None:
        drop = default_drop(corpus.win, corpus.step)
    for rec in corpus.records:
        n = corpus.n_windows(rec.subject)
        rng = np.random.default_rng([seed, rec.subject])
        tags = np.full(n, SPLIT_CODES["train"], dtype=np.uint8)
        test = ud_sample(n, bsize, rng)
        for s in test:
            tags[max(0, s - drop):s] = SPLIT_CODES["drop"]
            tags[s + bsize:s + bsize + drop] = SPLIT_CODES["drop"]
        for s in test:
            tags[s:s + bsize] = SPLIT_CODES["test"]
        free = tags == SPLIT_CODES["train"]
        remainder = n - len(test) * bsize
        val = (ud_sample(n, bsize, rng, available=free, base=remainder) if free.sum() >= bsize
               else np.array([], int))
        for s in val:
            tags[s:s + bsize] = SPLIT_CODES["val"]
        corpus.tags[rec.subject] = tags
    return corpus


def val_overlap_mask(corpus: Corpus, subject: int) -> np.ndarray:
    """True for validation windows that share time with some train window."""
    tags = corpus.split_of(subject)
    reach = math.ceil(corpus.win / corpus.step) - 1
    train = tags == SPLIT_CODES["train"]
    out = np.zeros(len(tags), dtype=bool)
    for k in np.flatnonzero(tags == SPLIT_CODES["val"]):
        out[k] = train[max(0, k - reach):k + reach + 1].any()
    return out


# ---------------------------------------------------------------------------
# conditions
# ---------------------------------------------------------------------------
@dataclass
class ConditionVector:
    cond_signal: np.ndarray
    emo_onehot: np.ndarray
    id_onehot: np.ndarray

    def as_channels(self) -> np.ndarray:
        """(1 + 5 + 15, T) array: the signal plus one-hots broadcast over time."""
        t = len(self.cond_signal)
        onehots = np.concatenate([self.emo_onehot, self.id_onehot])[:, None]
        return np.concatenate([self.cond_signal[None, :], np.repeat(onehots, t, axis=1)], axis=0)


def one_hot(label: int, n: int) -> np.ndarray:
    if not 0 <= int(label) < n:
        raise LabelOutOfRange(f"label {label} outside 0..{n - 1}")
    v = np.zeros(n)
    v[int(label)] = 1.0
    return v


def encode_condition(emo: int, ident: int, cond_signal) -> ConditionVector:
    return ConditionVector(np.asarray(cond_signal, dtype=np.float64), one_hot(emo, N_EMO), one_hot(ident, N_ID))


def condition_batch(cond: np.ndarray, emo: np.ndarray, ident: np.ndarray) -> np.ndarray:
    """Vectorised :func:`encode_condition`: (B, T) signals -> (B, 21, T) channels."""
    cond = np.asarray(cond, dtype=np.float64)
    emo, ident = np.asarray(emo), np.asarray(ident)
    if np.any((emo < 0) | (emo >= N_EMO)) or np.any((ident < 0) | (ident >= N_ID)):
        raise LabelOutOfRange("emotion or identity label out of range")
    b, t = cond.shape
    out = np.zeros((b, 1 + N_EMO + N_ID, t))
    out[:, 0] = cond
    out[np.arange(b), 1 + emo] = 1.0
    out[np.arange(b), 1 + N_EMO + ident] = 1.0
    return out


# ---------------------------------------------------------------------------
# toy corpus
# ---------------------------------------------------------------------------
# (relative time s, amplitude mV, width s) for P, Q, R, S, T
BASE_TEMPLATE = np.array([
    [-0.20, 0.15, 0.025],
    [-0.035, -0.15, 0.010],
    [0.0, 1.10, 0.012],
    [0.035, -0.30, 0.012],
    [0.28, 0.30, 0.045],
])

# mean-RR multiplier, LF amplitude (s), HF amplitude (s) per emotion label
EMOTION_RR = {
    0: (1.00, 0.030, 0.020),
    1: (1.00, 0.030, 0.025),
    2: (0.78, 0.045, 0.010),
    3: (0.93, 0.030, 0.020),
    4: (1.08, 0.025, 0.035),
}
DEFAULT_SCHEDULE = ((1, 60.0), (2, 60.0), (3, 60.0), (4, 60.0), (0, 60.0))


@dataclass
class ToySpec:
    n_subjects: int = 3
    minutes_per_subject: float = 5.0
    emotion_schedule: tuple = DEFAULT_SCHEDULE
    rate: float = ECG_RATE
    noise: float = 0.01

    def validate(self) -> None:
        if not 1 <= self.n_subjects <= N_ID:
            raise SpecInvalid(f"n_subjects must be in 1..{N_ID}, got {self.n_subjects}")
        if self.minutes_per_subject <= 0:
            raise SpecInvalid("minutes_per_subject must be positive")
        if not self.emotion_schedule or any(not 0 <= int(e) < N_EMO or d <= 0
                                            for e, d in self.emotion_schedule):
            raise SpecInvalid(f"bad emotion schedule {self.emotion_schedule}")
        if self.rate < 100:
            raise SpecInvalid("toy ECG rate must be >= 100 Hz")


def subject_template(subject: int, seed: int) -> np.ndarray:
    """Subject-specific PQRST parameters, perturbed from the base template."""
    rng = np.random.default_rng([seed, subject, 1])
    tpl = BASE_TEMPLATE.copy()
    tpl[:, 1] *= rng.uniform(0.6, 1.5, size=5)
    tpl[:, 2] *= rng.uniform(0.75, 1.35, size=5)
    tpl[[0, 4], 0] *= rng.uniform(0.85, 1.15, size=2)
    return tpl


def render_ecg(peak_times: np.ndarray, template: np.ndarray, n_samples: int, rate: float) -> np.ndarray:
    """Sum of Gaussian waves placed around every R-peak time."""
    t = np.arange(n_samples) / rate
    out = np.zeros(n_samples)
    reach = 0.5
    for tp in peak_times:
        lo, hi = max(0, int((tp - reach) * rate)), min(n_samples, int((tp + reach) * rate) + 1)
        seg = t[lo:hi] - tp
        for offset, amp, width in template:
            out[lo:hi] += amp * np.exp(-0.5 * ((seg - offset) / width) ** 2)
    return out


def emotion_track(schedule, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Change points and labels of the cycled schedule covering ``duration``."""
    bounds, labels, t = [], [], 0.0
    while t < duration:
        for emo, secs in schedule:
            bounds.append(t)
            labels.append(int(emo))
            t += float(secs)
            if t >= duration:
                break
    return np.array(bounds), np.array(labels)


def _rr_curve(subject: int, seed: int, spec: ToySpec, duration: float):
    rng = np.random.default_rng([seed, subject, 2])
    base = rng.uniform(0.78, 1.0)
    phase_lf, phase_hf = rng.uniform(0, 2 * np.pi, size=2)
    lf_hz = rng.uniform(0.08, 0.12)
    hf_hz = rng.uniform(0.22, 0.28)
    bounds, labels = emotion_track(spec.emotion_schedule, duration)
    fine_rate = 10.0
    tt = np.arange(int(np.ceil(duration * fine_rate)) + 1) / fine_rate
    seg = np.searchsorted(bounds, tt, side="right") - 1
    params = np.array([EMOTION_RR[int(labels[s])] for s in seg])
    # emotional state shifts act over ~10 s rather than instantly
    kernel = np.ones(int(10 * fine_rate)) / int(10 * fine_rate)
    smooth = np.stack([np.convolve(np.pad(params[:, j], len(kernel), mode="edge"), kernel, "same")
                       [len(kernel):-len(kernel)] for j in range(3)], axis=1)
    rr = (base * smooth[:, 0]
          + smooth[:, 1] * np.sin(2 * np.pi * lf_hz * tt + phase_lf)
          + smooth[:, 2] * np.sin(2 * np.pi * hf_hz * tt + phase_hf))
    return tt, rr, bounds, labels


def synth_subject(subject: int, spec: ToySpec, seed: int) -> tuple[SubjectRecord, np.ndarray]:
    duration = spec.minutes_per_subject * 60.0
    tt, rr, bounds, labels = _rr_curve(subject, seed, spec, duration)
    rng = np.random.default_rng([seed, subject, 3])
    peaks = []
    t = float(rng.uniform(0.2, 0.6))
    while t < duration - 0.05:
        peaks.append(t)
        t += float(np.interp(t, tt, rr))
    peaks = np.array(peaks)
    n = int(round(duration * spec.rate))
    ecg = render_ecg(peaks, subject_template(subject, seed), n, spec.rate)
    times = np.arange(n) / spec.rate
    ecg += 0.05 * np.sin(2 * np.pi * 0.15 * times + rng.uniform(0, 2 * np.pi))
    ecg += spec.noise * rng.standard_normal(n)
    lab = labels[np.searchsorted(bounds, times, side="right") - 1]
    return SubjectRecord(subject, ecg, lab, spec.rate), peaks


def synth_toy_corpus(spec: ToySpec | dict | None = None, seed: int = 0) -> tuple[Corpus, list[np.ndarray]]:
    """Desk-scale stand-in for WESAD.

    Each subject gets its own PQRST template and an RR process made of a
    subject baseline plus 0.1 Hz (LF) and 0.25 Hz (HF) modulation whose
    levels depend on the current emotion label.  Returns the corpus and the
    planted R-peak times of every subject.
    """
    if spec is None:
        spec = ToySpec()
    elif isinstance(spec, dict):
        spec = ToySpec(**spec)
    spec.validate()
    records, truth = [], []
    for subject in range(spec.n_subjects):
        rec, peaks = synth_subject(subject, spec, seed)
        records.append(rec)
        truth.append(peaks)
    prov = {"source": "toy", "seed": seed, "spec": {
        "n_subjects": spec.n_subjects, "minutes_per_subject": spec.minutes_per_subject,
        "emotion_schedule": [list(map(float, p)) for p in spec.emotion_schedule],
        "rate": spec.rate, "noise": spec.noise}}
    return Corpus(records, provenance=prov), truth


# ---------------------------------------------------------------------------
# training views
# ---------------------------------------------------------------------------
@dataclass
class WindowSet:
    """Aligned training arrays for one module and one split."""

    x: np.ndarray          # (N, L_x) target windows
    cond: np.ndarray       # (N, L_c) conditioning signal windows
    emo: np.ndarray
    ident: np.ndarray
    subject: np.ndarray
    index: np.ndarray
    x_rate: float
    cond_rate: float

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64) if len(idx) == 0 else np.asarray(idx)
        return WindowSet(self.x[idx], self.cond[idx], self.emo[idx], self.ident[idx],
                         self.subject[idx], self.index[idx], self.x_rate, self.cond_rate)

    def conditions(self) -> np.ndarray:
        return condition_batch(self.cond, self.emo, self.ident)


def record_tachogram(rec: SubjectRecord) -> tuple[Signal, Signal]:
    """Whole-record tachogram (0.5 Hz) and its 0.125 Hz trend."""
    peaks = PeakTimes(rec.peaks, span=(0.0, rec.duration))
    tach = dsp.peaks_to_tachogram(peaks, TACHO_RATE)
    return tach, dsp.derive_avg_hrv(tach)


def record_peak_train(rec: SubjectRecord, rate: float = PEAK_RATE) -> np.ndarray:
    n = int(round(rec.duration * rate))
    train = np.zeros(n)
    idx = np.rint(rec.peaks * rate).astype(int)
    train[idx[(idx >= 0) & (idx < n)]] = 1.0
    return train


def _collect(corpus: Corpus, split: str | None, per_record):
    rows = []
    for rec in corpus.records:
        if rec.peaks is None:
            raise InsufficientPeaks(f"subject {rec.subject} has no R-peaks; run preprocessing")
        tags = corpus.split_of(rec.subject)
        arrays = per_record(rec)
        nw_e, ns_e = _samples(corpus.win, rec.rate), _samples(corpus.step, rec.rate)
        for k in range(corpus.n_windows(rec.subject)):
            if split is not None and SPLIT_NAMES[int(tags[k])] != split:
                continue
            lo = k * ns_e
            rows.append((rec, k, window_label(rec.labels[lo:lo + nw_e]), arrays))
    return rows


def hrv_windows(corpus: Corpus, split: str | None = "train") -> WindowSet:
    """Tachogram targets with their 0.125 Hz trend as the condition signal."""
    cache = {}

    def per_record(rec):
        if rec.subject not in cache:
            cache[rec.subject] = record_tachogram(rec)
        return cache[rec.subject]

    rows = _collect(corpus, split, per_record)
    nw, ns = _samples(corpus.win, TACHO_RATE), _samples(corpus.step, TACHO_RATE)
    xs, cs, keep = [], [], []
    for rec, k, emo, (tach, avg) in rows:
        x = tach.samples[k * ns:k * ns + nw]
        c = avg.samples[k * ns:k * ns + nw]
        if len(x) < nw:
            continue
        xs.append(x)
        cs.append(c)
        keep.append((emo, rec.subject, rec.subject, k))
    return _window_set(xs, cs, keep, TACHO_RATE, TACHO_RATE)


def morph_windows(corpus: Corpus, split: str | None = "train") -> WindowSet:
    """ECG targets with the 25 Hz R-peak train as the condition signal.

    Windows holding fewer than two R-peaks are rejected (and logged).
    """
    cache = {}

    def per_record(rec):
        if rec.subject not in cache:
            cache[rec.subject] = record_peak_train(rec)
        return cache[rec.subject]

    rows = _collect(corpus, split, per_record)
    xs, cs, keep = [], [], []
    rejected = 0
    for rec, k, emo, train in rows:
        nw_p, ns_p = _samples(corpus.win, PEAK_RATE), _samples(corpus.step, PEAK_RATE)
        nw_e, ns_e = _samples(corpus.win, rec.rate), _samples(corpus.step, rec.rate)
        c = train[k * ns_p:k * ns_p + nw_p]
        if len(c) < nw_p:
            continue
        if c.sum() < 2:
            rejected += 1
            continue
        xs.append(rec.ecg[k * ns_e:k * ns_e + nw_e].astype(np.float64))
        cs.append(c)
        keep.append((emo, rec.subject, rec.subject, k))
    if rejected:
        log.warning("rejected %d windows with fewer than 2 R-peaks", rejected)
    rate = corpus.records[0].rate if corpus.records else ECG_RATE
    return _window_set(xs, cs, keep, rate, PEAK_RATE)


def _window_set(xs, cs, keep, x_rate, cond_rate) -> WindowSet:
    if not keep:
        return WindowSet(np.zeros((0, 0)), np.zeros((0, 0)), *(np.zeros(0, int) for _ in range(4)),
                         x_rate, cond_rate)
    meta = np.array(keep, dtype=np.int64)
    return WindowSet(np.array(xs), np.array(cs), meta[:, 0], meta[:, 1], meta[:, 2], meta[:, 3],
                     x_rate, cond_rate)


# ---------------------------------------------------------------------------
# corpus file format
# ---------------------------------------------------------------------------
MAGIC = b"CGCORP"
FORMAT_VERSION = 1


def write_corpus(corpus: Corpus, path) -> None:
    """Binary corpus: magic, u16 version, u32 header length, JSON header,
    per-subject blocks (float32 ECG, int8 labels, float64 peaks, uint8 split
    tags), trailing CRC32 over everything before it.  Little-endian."""
    subjects, blobs = [], []
    for rec in corpus.records:
        tags = corpus.tags.get(rec.subject)
        subjects.append({
            "subject": int(rec.subject), "rate": float(rec.rate), "n_samples": int(len(rec.ecg)),
            "n_peaks": -1 if rec.peaks is None else int(len(rec.peaks)),
            "n_tags": -1 if tags is None else int(len(tags)),
        })
        blobs.append(rec.ecg.astype("<f4").tobytes())
        blobs.append(rec.labels.astype("i1").tobytes())
        if rec.peaks is not None:
            blobs.append(rec.peaks.astype("<f8").tobytes())
        if tags is not None:
            blobs.append(tags.astype("u1").tobytes())
    header = json.dumps({"win": corpus.win, "step": corpus.step, "subjects": subjects,
                         "provenance": corpus.provenance}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_corpus(path) -> Corpus:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 10 or raw[:len(MAGIC)] != MAGIC:
        raise CorruptFile(f"{path}: not a corpus file")
    version, hlen = struct.unpack_from("<HI", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, reader supports {FORMAT_VERSION}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile(f"{path}: checksum mismatch (truncated or damaged)")
    pos = len(MAGIC) + 6
    try:
        header = json.loads(body[pos:pos + hlen])
    except ValueError as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    pos += hlen

    def take(dtype, count):
        nonlocal pos
        nbytes = np.dtype(dtype).itemsize * count
        if pos + nbytes > len(body):
            raise CorruptFile(f"{path}: payload shorter than header declares")
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=pos).copy()
        pos += nbytes
        return arr

    records, tags = [], {}
    for s in header["subjects"]:
        ecg = take("<f4", s["n_samples"])
        labels = take("i1", s["n_samples"])
        peaks = take("<f8", s["n_peaks"]) if s["n_peaks"] >= 0 else None
        if s["n_tags"] >= 0:
            tags[s["subject"]] = take("u1", s["n_tags"])
        records.append(SubjectRecord(s["subject"], ecg, labels, s["rate"], peaks))
    if pos != len(body):
        raise CorruptFile(f"{path}: {len(body) - pos} unexpected trailing bytes")
    return Corpus(records, header["win"], header["step"], tags, header.get("provenance", {}))


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    if (a.win, a.step) != (b.win, b.step) or len(a.records) != len(b.records):
        return False
    for ra, rb in zip(a.records, b.records):
        if ra.subject != rb.subject or ra.rate != rb.rate:
            return False
        if not (np.array_equal(ra.ecg, rb.ecg) and np.array_equal(ra.labels, rb.labels)):
            return False
        if (ra.peaks is None) != (rb.peaks is None):
            return False
        if ra.peaks is not None and not np.array_equal(ra.peaks, rb.peaks):
            return False
    if set(a.tags) != set(b.tags):
        return False
    return all(np.array_equal(a.tags[k], b.tags[k]) for k in a.tags)


# ---------------------------------------------------------------------------
# CSV import / export
# ---------------------------------------------------------------------------
def fold_label(label: int) -> int:
    """WESAD labels 5/6/7 are irrelevant and fold into 0."""
    label = int(label)
    return 0 if label >= N_EMO or label < 0 else label


def read_subject_csv(path, subject: int, target_rate: float = ECG_RATE) -> SubjectRecord:
    """Import a pre-converted subject CSV with columns ``time, ecg, emo_label``."""
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    data = np.genfromtxt(lines, delimiter=",", names=True)
    t = np.asarray(data["time"], dtype=np.float64)
    if t.size < 2:
        raise CorruptFile(f"{path}: fewer than two samples")
    rate_in = 1.0 / float(np.median(np.diff(t)))
    ecg = dsp.resample(Signal(np.asarray(data["ecg"], dtype=np.float64), rate_in), target_rate)
    src_idx = np.minimum(np.rint(np.arange(len(ecg)) * rate_in / target_rate).astype(int), t.size - 1)
    labels = np.array([fold_label(v) for v in np.asarray(data["emo_label"])[src_idx]])
    return SubjectRecord(subject, ecg.samples, labels, target_rate)


def export_corpus_csv(corpus: Corpus, out_dir, header: str = "") -> list[Path]:
    """Per-subject ``time, ecg, emo_label`` CSVs plus ``windows.csv`` with split tags.

    ``header`` (for instance a provenance comment line) is written first in
    every file.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in corpus.records:
        p = out_dir / f"subject_{rec.subject:02d}.csv"
        with open(p, "w", newline="") as fh:
            fh.write(header)
            w = csv.writer(fh)
            w.writerow(["time", "ecg", "emo_label"])
            for i, (v, lab) in enumerate(zip(rec.ecg, rec.labels)):
                w.writerow([f"{i / rec.rate:.6f}", repr(float(v)), int(lab)])
        written.append(p)
    p = out_dir / "windows.csv"
    with open(p, "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh)
        w.writerow(["subject", "index", "start_s", "emo", "split"])
        for win in corpus.windows():
            w.writerow([win.subject, win.index, f"{win.start:.3f}", win.emo, win.split])
    written.append(p)
    return written
