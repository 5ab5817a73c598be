"""Synthetic ECG generation and the post-processing protocol.

HRV generator -> tachogram windows -> RT^-1 peak trains -> Morph generator
-> ECG windows.  GRU state is carried along chains of consecutive,
non-overlapping windows of one (subject stream, emotion, identity) request.
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .autodiff import tensor as T
from .data import (N_ID, Corpus, SubjectRecord, condition_batch, hrv_windows, one_hot,
                   window_label)
from .dsp import ECG_RATE, PEAK_RATE, TACHO_RATE, Signal
from .errors import (CardiacGenError, InsufficientSynthWindows, EmptyInput, LabelOutOfRange,
                     NoCheckpoint, SpecInvalid)
from .provenance import config_hash, provenance
from .training import Checkpoint

log = logging.getLogger(__name__)

USED_EMOTIONS = (1, 2, 3, 4)


# ---------------------------------------------------------------------------
# requests
# ---------------------------------------------------------------------------
@dataclass
class SynthRequest:
    """Generate one window for ``ident`` in emotion ``emo`` from a real avg-HRV window."""

    subject: int          # subject whose avg-HRV stream supplies the condition
    index: int            # window index within that subject
    avg_hrv: np.ndarray   # condition window on the tachogram grid
    emo: int
    ident: int
    seed: int = 0

    def __post_init__(self):
        if self.emo not in USED_EMOTIONS:
            raise LabelOutOfRange(f"synthesis emotion must be in {USED_EMOTIONS}, got {self.emo}")
        one_hot(self.ident, N_ID)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.subject, self.index, self.emo, self.ident])


def permute_conditions(windows, ids=None, emotions=USED_EMOTIONS, seed: int = 0) -> list[SynthRequest]:
    """Every (emotion, identity) pair for every real window.

    ``windows`` is a :class:`~cardiacgen.data.WindowSet` of HRV windows.  With
    the default 15 identities and 4 emotions this is a factor of 60; ``ids``
    shrinks the grid for corpora with fewer subjects.
    """
    ids = tuple(range(N_ID)) if ids is None else tuple(int(i) for i in ids)
    out = []
    for r in range(len(windows)):
        for emo in emotions:
            for ident in ids:
                out.append(SynthRequest(int(windows.subject[r]), int(windows.index[r]),
                                        windows.cond[r], int(emo), ident, seed))
    return out


def chains(requests: list[SynthRequest], gap: int = 4) -> list[list[SynthRequest]]:
    """Group requests into runs of windows ``gap`` indices apart (state carries along a run)."""
    groups = defaultdict(list)
    for req in requests:
        groups[(req.subject, req.emo, req.ident, req.seed)].append(req)
    out = []
    for key in sorted(groups):
        run = []
        for req in sorted(groups[key], key=lambda r: r.index):
            if run and req.index != run[-1].index + gap:
                out.append(run)
                run = []
            run.append(req)
        out.append(run)
    return out


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------
def _require(ckpt, kind: str) -> Checkpoint:
    if ckpt is None:
        raise NoCheckpoint(f"no trained {kind} checkpoint supplied")
    if ckpt.kind != kind:
        raise NoCheckpoint(f"checkpoint is for module {ckpt.kind!r}, expected {kind!r}")
    return ckpt


class Sampler:
    """Holds the two generators built from checkpoints."""

    def __init__(self, hrv: Checkpoint | None = None, morph: Checkpoint | None = None,
                 bandlimit: bool = True):
        self.hrv_ckpt, self.morph_ckpt = hrv, morph
        self.bandlimit = bandlimit
        self._hrv = hrv.build_generator() if hrv is not None else None
        self._morph = morph.build_generator() if morph is not None else None

    def sample_hrv(self, chain: list[SynthRequest]) -> np.ndarray:
        """Tachogram windows (n, L) for one chain; z ~ N(0, I) per window.

        With ``bandlimit`` each window gets the same 0.5 Hz low-pass as the
        training targets, so the output honours the tachogram band limit
        even when the generator leaks high-frequency ripple.
        """
        ckpt = _require(self.hrv_ckpt, "hrv")
        norm = ckpt.norm()
        gen = self._hrv
        state = None
        out = []
        for req in chain:
            cond = (np.asarray(req.avg_hrv)[None, :] - norm.cond_offset) / norm.cond_scale
            y = condition_batch(cond, np.array([req.emo]), np.array([req.ident]))
            z = gen.sample_z(1, y.shape[2], req.rng())
            with T.no_grad():
                x, state = gen(y, z, state)
            w = x.data[0].astype(np.float64)
            if self.bandlimit:
                w = dsp.lowpass(Signal(w, TACHO_RATE, "s"), dsp.HRV_CUTOFF).samples
            out.append(w)
        return np.array(out)

    def sample_ecg(self, tach_windows: np.ndarray, emo: int, ident: int, seeds,
                   window_len: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
        """ECG windows (n, window_len * 100) and the peak trains that drove them.

        ``seeds`` holds one seed (or seed sequence) per window; each feeds both
        the RT^-1 draw and the generator noise.
        """
        _require(self.morph_ckpt, "morph")
        gen = self._morph
        state = None
        ecg, trains = [], []
        for tach, seed in zip(tach_windows, seeds):
            rng = np.random.default_rng(seed)
            train = dsp.rt_inverse(Signal(np.asarray(tach, dtype=np.float64), TACHO_RATE), window_len,
                                   rng, PEAK_RATE)
            y = condition_batch(train.samples[None, :], np.array([emo]), np.array([ident]))
            z = gen.sample_z(1, y.shape[2], rng)
            with T.no_grad():
                x, state = gen(y, z, state)
            ecg.append(x.data[0])
            trains.append(train.samples)
        return np.array(ecg), np.array(trains)


def sample_hrv(ckpt: Checkpoint | None, chain: list[SynthRequest]) -> np.ndarray:
    return Sampler(hrv=_require(ckpt, "hrv")).sample_hrv(chain)


def sample_ecg(ckpt: Checkpoint | None, tach_windows, emo: int, ident: int, seeds) -> np.ndarray:
    return Sampler(morph=_require(ckpt, "morph")).sample_ecg(np.asarray(tach_windows), emo, ident, seeds)[0]


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------
def largest_remainder(ratios, total: int) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``ratios``.

    Floors first, then hands the leftover units to the largest fractional
    parts (earlier entries win ties).
    """
    r = np.asarray(ratios, dtype=np.float64)
    if r.sum() <= 0:
        raise ValueError("ratios must have positive sum")
    quota = r / r.sum() * total
    alloc = np.floor(quota).astype(np.int64)
    rest = total - int(alloc.sum())
    order = np.argsort(-(quota - alloc), kind="stable")
    alloc[order[:rest]] += 1
    return alloc


def stress_ratio_subsample(synth_emo, synth_ident, real_emo, real_subject, rng: np.random.Generator,
                           totals: dict | None = None) -> np.ndarray:
    """Indices of a synthetic subset whose per-identity label mix matches the real data.

    For each identity the real windows' share of labels 1..4 is allocated over
    the target count (default: that subject's number of real windows with a
    used label) by largest-remainder rounding; windows are then drawn without
    replacement per label.
    """
    synth_emo, synth_ident = np.asarray(synth_emo), np.asarray(synth_ident)
    real_emo, real_subject = np.asarray(real_emo), np.asarray(real_subject)
    picked = []
    for ident in np.unique(synth_ident):
        mask = real_subject == ident
        counts = np.array([np.sum(real_emo[mask] == e) for e in USED_EMOTIONS])
        if counts.sum() == 0:
            log.warning("identity %d has no labelled real windows; skipped", ident)
            continue
        total = int(counts.sum()) if totals is None else int(totals[int(ident)])
        alloc = largest_remainder(counts, total)
        for emo, want in zip(USED_EMOTIONS, alloc):
            pool = np.flatnonzero((synth_ident == ident) & (synth_emo == emo))
            if pool.size < want:
                raise InsufficientSynthWindows(
                    f"identity {ident}, emotion {emo}: need {want} windows, pool has {pool.size}")
            picked.append(np.sort(rng.choice(pool, size=int(want), replace=False)))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)


def rr_outlier_trim(rr_values) -> np.ndarray:
    """Drop the floor(0.5%) smallest and largest values; order of the rest is kept."""
    x = np.asarray(rr_values, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInput("no RR values to trim")
    k = int(np.floor(0.005 * x.size))
    if k == 0:
        return x.copy()
    order = np.argsort(x, kind="stable")
    keep = np.ones(x.size, dtype=bool)
    keep[order[:k]] = False
    keep[order[-k:]] = False
    return x[keep]


# ---------------------------------------------------------------------------
# manifests and corpus-level generation
# ---------------------------------------------------------------------------
@dataclass
class ManifestEntry:
    subject: int                 # real subject supplying the avg-HRV stream
    emo: int
    id: int
    window_range: tuple[int, int]  # [start, stop) window indices, stepped by win/step
    seed: int = 0

    def validate(self) -> None:
        if self.emo not in USED_EMOTIONS:
            raise SpecInvalid(f"manifest emotion {self.emo} not in {USED_EMOTIONS}")
        if not 0 <= self.id < N_ID:
            raise SpecInvalid(f"manifest identity {self.id} out of range")
        lo, hi = self.window_range
        if not 0 <= lo < hi:
            raise SpecInvalid(f"bad window range {self.window_range}")


def read_manifest(path) -> list[ManifestEntry]:
    try:
        items = json.loads(Path(path).read_text())
        entries = [ManifestEntry(int(d["subject"]), int(d["emo"]), int(d["id"]),
                                 tuple(int(v) for v in d["window_range"]), int(d.get("seed", 0)))
                   for d in items]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SpecInvalid(f"cannot read manifest {path}: {exc}") from exc
    for e in entries:
        e.validate()
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> None:
    Path(path).write_text(json.dumps([{**asdict(e), "window_range": list(e.window_range)}
                                      for e in entries], indent=1))


def default_manifest(corpus: Corpus, split: str | None = "train", ids=None, seed: int = 0
                     ) -> list[ManifestEntry]:
    """One entry per (real subject, emotion, identity): the subject's full stream.

    Identities default to the subjects present in the corpus (the desk-scale
    shrink of the 15 x 4 grid).
    """
    ids = sorted(r.subject for r in corpus.records) if ids is None else list(ids)
    out = []
    for rec in corpus.records:
        n = corpus.n_windows(rec.subject)
        for emo in USED_EMOTIONS:
            for ident in ids:
                out.append(ManifestEntry(rec.subject, emo, int(ident), (0, n), seed))
    return out


@dataclass
class GenerationReport:
    windows_total: int = 0
    windows_excluded: int = 0
    invalid_tachogram: int = 0
    lines: list = None

    def __post_init__(self):
        self.lines = self.lines or []


def generate_corpus(sampler: Sampler, corpus: Corpus, manifest: list[ManifestEntry],
                    gap: int | None = None, check_peaks: bool = True
                    ) -> tuple[Corpus, GenerationReport]:
    """Run a manifest: one synthetic record per entry, labelled with its emotion.

    Window indices ``start, start+gap, ...`` inside ``window_range`` select
    non-overlapping avg-HRV windows of the real subject.  Generated windows
    whose ECG yields fewer than 2 detected R-peaks (or whose tachogram is
    outside the RT^-1 range) are excluded and reported.
    """
    gap = int(round(corpus.win / corpus.step)) if gap is None else gap
    hrv = hrv_windows(corpus, split=None)
    lookup = {(int(s), int(k)): i for i, (s, k) in enumerate(zip(hrv.subject, hrv.index))}
    report = GenerationReport()
    records = []
    n_ecg = int(round(corpus.win * ECG_RATE))
    for entry in manifest:
        entry.validate()
        lo, hi = entry.window_range
        reqs = [SynthRequest(entry.subject, k, hrv.cond[lookup[(entry.subject, k)]], entry.emo,
                             entry.id, entry.seed)
                for k in range(lo, hi, gap) if (entry.subject, k) in lookup]
        if not reqs:
            report.lines.append(f"entry {asdict(entry)}: no windows in range")
            continue
        tach = sampler.sample_hrv(reqs)
        ok = np.array([np.all((t > dsp.RR_MIN) & (t < dsp.RR_MAX)) for t in tach])
        report.invalid_tachogram += int((~ok).sum())
        seeds = [[r.seed, r.subject, r.index, r.emo, r.ident, 1] for r in reqs]
        ecg, trains = sampler.sample_ecg(tach[ok], entry.emo, entry.id,
                                         [s for s, keep in zip(seeds, ok) if keep], corpus.win)
        keep = np.ones(len(ecg), dtype=bool)
        if check_peaks:
            for i, w in enumerate(ecg):
                try:
                    keep[i] = len(dsp.detect_r_peaks(Signal(w, ECG_RATE))) >= 2
                except CardiacGenError:
                    keep[i] = False
        report.windows_total += len(reqs)
        report.windows_excluded += int((~ok).sum() + (~keep).sum())
        if (~ok).sum() or (~keep).sum():
            report.lines.append(f"entry subject={entry.subject} emo={entry.emo} id={entry.id}: "
                                f"excluded {int((~ok).sum())} invalid tachograms, "
                                f"{int((~keep).sum())} windows with < 2 R-peaks")
        if not keep.any():
            continue
        sig = ecg[keep].reshape(-1)
        peaks = []
        for j, tr in enumerate(trains[keep]):
            peaks.append(np.flatnonzero(tr) / PEAK_RATE + j * corpus.win)
        rec = SubjectRecord(entry.id, sig, np.full(sig.size, entry.emo), ECG_RATE, np.concatenate(peaks))
        assert rec.ecg.size == keep.sum() * n_ecg
        records.append(rec)
    prov = provenance(
        {"manifest": [asdict(e) for e in manifest]},
        seed=manifest[0].seed if manifest else None,
        source="synthetic",
        hrv_checkpoint=config_hash(sampler.hrv_ckpt.provenance) if sampler.hrv_ckpt else None,
        morph_checkpoint=config_hash(sampler.morph_ckpt.provenance) if sampler.morph_ckpt else None,
        hrv_epoch=sampler.hrv_ckpt.epoch if sampler.hrv_ckpt else None,
        morph_epoch=sampler.morph_ckpt.epoch if sampler.morph_ckpt else None,
        excluded=report.windows_excluded,
    )
    return Corpus(records, corpus.win, corpus.step, {}, prov), report


def synthetic_window_labels(corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
    """(emotion, identity) per 8 s window of a synthetic corpus."""
    emo, ident = [], []
    for rec in corpus.records:
        nw = int(round(corpus.win * rec.rate))
        for lo in range(0, len(rec.ecg) - nw + 1, nw):
            emo.append(window_label(rec.labels[lo:lo + nw]))
            ident.append(rec.subject)
    return np.array(emo), np.array(ident)


__all__ = [
    "SynthRequest", "permute_conditions", "chains", "Sampler", "sample_hrv", "sample_ecg",
    "largest_remainder", "stress_ratio_subsample", "rr_outlier_trim", "ManifestEntry",
    "read_manifest", "write_manifest", "default_manifest", "generate_corpus",
    "synthetic_window_labels",
]
