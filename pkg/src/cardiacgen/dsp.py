"""Deterministic transforms between ECG, R-peak trains, tachograms and spectra."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.signal

from .errors import (CutoffOutOfRange, EmptySignal, InsufficientPeaks, InvalidTachogram,
                     NonPositiveRate, NoPeaksFound, TooShort)

TACHO_RATE = 5.0      # Hz, uniform grid for RR-tachograms
PEAK_RATE = 25.0      # Hz, grid of binary R-peak trains
ECG_RATE = 100.0      # Hz
HRV_CUTOFF = 0.5      # Hz, tachogram denoising
AVG_HRV_CUTOFF = 0.125
RR_MIN, RR_MAX = 0.25, 3.0


@dataclass
class Signal:
    """Uniformly sampled real signal.  ``start`` is the time of sample 0 in seconds."""

    samples: np.ndarray
    rate: float
    unit: str = "mV"
    start: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"signal must be 1-d, got shape {self.samples.shape}")
        if not self.rate > 0:
            raise NonPositiveRate(f"rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal contains NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate

    @property
    def times(self) -> np.ndarray:
        return self.start + np.arange(len(self.samples)) / self.rate


# Tachograms and their low-passed trend are plain signals in seconds.
Tachogram = Signal
AvgHrvSignal = Signal


@dataclass
class PeakTimes:
    times: np.ndarray
    span: tuple[float, float] | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("peak times must be strictly increasing")
        if self.span is None:
            self.span = (float(self.times[0]), float(self.times[-1])) if self.times.size else (0.0, 0.0)
        lo, hi = self.span
        if self.times.size and (self.times[0] < lo or self.times[-1] > hi):
            raise ValueError(f"peak times fall outside span {self.span}")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def rr(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass
class PeakTrain:
    samples: np.ndarray
    rate: float = PEAK_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all((self.samples == 0) | (self.samples == 1)):
            raise ValueError("peak train values must be exactly 0 or 1")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate

    def peak_times(self) -> PeakTimes:
        return PeakTimes(np.flatnonzero(self.samples) / self.rate, span=(0.0, self.duration))


@dataclass
class PowerSpectrum:
    power: np.ndarray
    bin_hz: float
    freqs: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.power)


# ---------------------------------------------------------------------------
# resampling and filtering
# ---------------------------------------------------------------------------
def resample(signal: Signal, target_rate: float) -> Signal:
    """Polyphase resampling; linear end-padding keeps DC and trends intact."""
    if target_rate <= 0:
        raise NonPositiveRate(f"target rate must be positive, got {target_rate}")
    if len(signal) == 0:
        raise EmptySignal("cannot resample an empty signal")
    ratio = Fraction(target_rate / signal.rate).limit_denominator(1000)
    if ratio == 1:
        return Signal(signal.samples.copy(), target_rate, signal.unit, signal.start)
    if len(signal) < 2:
        n_out = max(1, round(len(signal) * ratio))
        return Signal(np.full(n_out, signal.samples[0]), target_rate, signal.unit, signal.start)
    out = scipy.signal.resample_poly(signal.samples, ratio.numerator, ratio.denominator,
                                     padtype="line")
    return Signal(out, target_rate, signal.unit, signal.start)


def lowpass(signal: Signal, cutoff: float) -> Signal:
    """Zero-phase low-pass as an orthogonal projection onto low DCT-II modes.

    Cosine mode k has frequency ``k * rate / (2 N)``; every mode above
    ``cutoff`` is discarded.  Being a projection, the filter is idempotent,
    has exactly unit DC gain and introduces no delay.  The implicit even
    extension at both ends keeps edge artefacts small.
    """
    if not 0 < cutoff < signal.rate / 2:
        raise CutoffOutOfRange(f"cutoff {cutoff} Hz outside (0, {signal.rate / 2}) Hz")
    n = len(signal)
    if n == 0:
        raise EmptySignal("cannot filter an empty signal")
    coeffs = scipy.fft.dct(signal.samples, type=2, norm="ortho")
    freqs = np.arange(n) * signal.rate / (2.0 * n)
    coeffs[freqs > cutoff + 1e-12] = 0.0
    out = scipy.fft.idct(coeffs, type=2, norm="ortho")
    return Signal(out, signal.rate, signal.unit, signal.start)


# ---------------------------------------------------------------------------
# R-peak detection
# ---------------------------------------------------------------------------
def _bandpass(x: np.ndarray, rate: float, lo: float = 5.0, hi: float = 35.0) -> np.ndarray:
    hi = min(hi, 0.45 * rate)
    sos = scipy.signal.butter(2, [lo, hi], btype="bandpass", fs=rate, output="sos")
    return scipy.signal.sosfiltfilt(sos, x)


def detect_r_peaks(ecg: Signal) -> PeakTimes:
    """Pan-Tompkins style QRS detector.

    Band-pass 5-35 Hz, squared derivative, 150 ms moving-window integration,
    then dual adaptive thresholds with search-back for missed beats.  Each
    detection is refined to the maximum of the band-passed ECG within 75 ms.
    """
    if ecg.rate < 100:
        raise ValueError(f"ECG rate must be >= 100 Hz, got {ecg.rate}")
    if ecg.duration < 2.0:
        raise TooShort(f"need at least 2 s of ECG, got {ecg.duration:.2f} s")
    fs = ecg.rate
    x = ecg.samples - np.median(ecg.samples)
    bp = _bandpass(x, fs)
    energy = np.gradient(bp) ** 2
    width = max(1, int(round(0.15 * fs)))
    mwi = np.convolve(energy, np.ones(width) / width, mode="same")
    if not np.any(mwi > 1e-12 * max(1.0, float(np.max(np.abs(x))))):
        raise NoPeaksFound("signal carries no QRS energy")

    refractory = int(round(0.25 * fs))
    cand, _ = scipy.signal.find_peaks(mwi, distance=refractory)
    if cand.size == 0:
        raise NoPeaksFound("no candidate QRS complexes")

    init = mwi[: int(2 * fs)]
    spk = 0.25 * float(np.max(init))
    npk = 0.5 * float(np.mean(init))
    accepted: list[int] = []
    rejected: list[int] = []

    def threshold():
        return npk + 0.25 * (spk - npk)

    for c in cand:
        v = mwi[c]
        if accepted and c - accepted[-1] < refractory:
            continue
        if v > threshold():
            # search back over the gap if it is much longer than recent beats
            if len(accepted) >= 2:
                recent = np.diff(accepted[-9:])
                limit = 1.66 * float(np.mean(recent))
                if c - accepted[-1] > limit:
                    gap = [r for r in rejected if accepted[-1] + refractory <= r <= c - refractory]
                    if gap:
                        best = max(gap, key=lambda r: mwi[r])
                        if mwi[best] > 0.5 * threshold():
                            accepted.append(best)
                            spk = 0.25 * mwi[best] + 0.75 * spk
            accepted.append(int(c))
            spk = 0.125 * v + 0.875 * spk
        else:
            rejected.append(int(c))
            npk = 0.125 * v + 0.875 * npk
    if not accepted:
        raise NoPeaksFound("no candidate crossed the adaptive threshold")

    half = int(round(0.075 * fs))
    refined = []
    for c in accepted:
        lo, hi = max(0, c - half), min(len(bp), c + half + 1)
        refined.append(lo + int(np.argmax(bp[lo:hi])))
    idx = np.unique(np.asarray(refined))
    # refinement can pull two detections together; keep the stronger one
    keep = [idx[0]]
    for i in idx[1:]:
        if i - keep[-1] < refractory:
            if bp[i] > bp[keep[-1]]:
                keep[-1] = i
        else:
            keep.append(i)
    times = ecg.start + np.asarray(keep) / fs
    return PeakTimes(times, span=(ecg.start, ecg.start + ecg.duration))


# ---------------------------------------------------------------------------
# tachograms
# ---------------------------------------------------------------------------
def peaks_to_tachogram(peaks: PeakTimes, rate: float = TACHO_RATE, filtered: bool = True) -> Signal:
    """Uniformly resampled RR-tachogram over ``peaks.span``.

    The interval ending at each peak is assigned to that peak's time, values
    are linearly interpolated onto the grid (held constant beyond the first
    and last intervals) and, when ``filtered``, low-passed at 0.5 Hz.
    """
    if len(peaks) < 2:
        raise InsufficientPeaks(f"need at least 2 peaks, got {len(peaks)}")
    t0, t1 = peaks.span
    n = max(1, int(round((t1 - t0) * rate)))
    grid = t0 + np.arange(n) / rate
    values = np.interp(grid, peaks.times[1:], peaks.rr)
    tach = Signal(values, rate, "s", t0)
    if filtered and n > 1:
        tach = lowpass(tach, HRV_CUTOFF)
    return tach


def derive_avg_hrv(tach: Signal) -> Signal:
    """Slow heart-rate trend: the tachogram low-passed at 0.125 Hz."""
    return lowpass(tach, AVG_HRV_CUTOFF)


def rt_forward(train: PeakTrain, rate: float = TACHO_RATE) -> Signal:
    """Map a binary peak train to its (filtered) tachogram on the window grid."""
    if np.count_nonzero(train.samples) < 2:
        raise InsufficientPeaks("peak train holds fewer than 2 peaks")
    return peaks_to_tachogram(train.peak_times(), rate)


def rt_inverse(tach: Signal, window_len: float, rng: np.random.Generator,
               rate: float = PEAK_RATE) -> PeakTrain:
    """Constrained inverse of :func:`rt_forward`.

    The last peak is drawn uniformly from the grid points in the final 0.25 s
    of the window; earlier peaks follow by stepping back ``tach(t)`` seconds
    (linear interpolation) until the window start is passed.
    """
    values = tach.samples
    if values.size == 0:
        raise InvalidTachogram("empty tachogram")
    if np.any(values <= RR_MIN) or np.any(values >= RR_MAX):
        raise InvalidTachogram(
            f"RR values must lie in ({RR_MIN}, {RR_MAX}) s; got [{values.min():.3f}, {values.max():.3f}]")
    if tach.duration + 1e-9 < window_len - 1.0 / tach.rate:
        raise InvalidTachogram(f"tachogram covers {tach.duration} s, window needs {window_len} s")
    n = int(round(window_len * rate))
    lo = math.ceil((window_len - 0.25) * rate - 1e-9)
    last = int(rng.integers(lo, n))
    grid = tach.times - tach.start
    t = last / rate
    times = [t]
    while True:
        t = t - float(np.interp(t, grid, values))
        if t < 0:
            break
        times.append(t)
    idx = np.rint(np.asarray(times) * rate).astype(int)
    train = np.zeros(n)
    train[idx] = 1.0
    return PeakTrain(train, rate)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------
def taper_window(n: int, taper: str | None) -> np.ndarray:
    if taper in (None, "boxcar", "rect"):
        return np.ones(n)
    if taper == "hann":
        return scipy.signal.windows.hann(n, sym=False)
    raise ValueError(f"unknown taper {taper!r}")


def periodogram_psd(window: Signal, taper: str | None = "boxcar") -> PowerSpectrum:
    """One-sided power spectral density of a (tapered) window.

    Scaled so that ``sum(power) * bin_hz`` equals the mean square of the
    tapered samples.
    """
    n = len(window)
    if n == 0:
        raise EmptySignal("cannot take the spectrum of an empty window")
    xw = window.samples * taper_window(n, taper)
    spec = np.abs(np.fft.rfft(xw)) ** 2 / (n * window.rate)
    spec[1:] *= 2.0
    if n % 2 == 0:
        spec[-1] /= 2.0
    bin_hz = window.rate / n
    return PowerSpectrum(spec, bin_hz, np.arange(spec.size) * bin_hz)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------
def write_signal_csv(signal: Signal, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate_hz", "unit"])
        w.writerow([repr(float(signal.rate)), signal.unit])
        for v in signal.samples:
            w.writerow([repr(float(v))])


def read_signal_csv(path) -> Signal:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][:2] != ["rate_hz", "unit"]:
        raise ValueError(f"{path}: missing 'rate_hz,unit' header")
    rate, unit = float(rows[1][0]), rows[1][1]
    return Signal(np.array([float(r[0]) for r in rows[2:]]), rate, unit)


def write_signal_raw(signal: Signal, path) -> None:
    """Little-endian float32 samples plus a ``<path>.json`` sidecar."""
    path = Path(path)
    signal.samples.astype("<f4").tofile(path)
    sidecar = {"rate_hz": signal.rate, "unit": signal.unit, "length": len(signal)}
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar))


def read_signal_raw(path) -> Signal:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    samples = np.fromfile(path, dtype="<f4").astype(np.float64)
    if samples.size != meta["length"]:
        raise ValueError(f"{path}: expected {meta['length']} samples, found {samples.size}")
    return Signal(samples, meta["rate_hz"], meta["unit"])
