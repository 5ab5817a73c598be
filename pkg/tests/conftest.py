import numpy as np
import pytest

from cardiacgen import data
from cardiacgen.dsp import TACHO_RATE, Signal, lowpass


def band_limited_tachogram(rng: np.random.Generator, window: float = 8.0) -> Signal:
    """Random physiological tachogram window: baseline + LF + HF sinusoids, 0.5 Hz band limit.

    A 60 s record is filtered and an 8 s window cut from it, so the window is
    band-limited without edge transients.
    """
    t = np.arange(int(60 * TACHO_RATE)) / TACHO_RATE
    x = (rng.uniform(0.5, 1.2)
         + rng.uniform(0, 0.05) * np.sin(2 * np.pi * rng.uniform(0.04, 0.15) * t + rng.uniform(0, 2 * np.pi))
         + rng.uniform(0, 0.03) * np.sin(2 * np.pi * rng.uniform(0.15, 0.35) * t + rng.uniform(0, 2 * np.pi)))
    x = np.clip(lowpass(Signal(x, TACHO_RATE, "s"), 0.5).samples, 0.4, 1.5)
    n = int(window * TACHO_RATE)
    s = int(rng.integers(0, len(t) - n))
    return Signal(x[s:s + n], TACHO_RATE, "s")


@pytest.fixture(scope="session")
def toy():
    """3 subjects x 5 minutes, with planted peaks."""
    return data.synth_toy_corpus(data.ToySpec(n_subjects=3, minutes_per_subject=5), seed=0)


@pytest.fixture(scope="session")
def toy_split(toy):
    corpus, _ = data.synth_toy_corpus(data.ToySpec(n_subjects=3, minutes_per_subject=5), seed=0)
    corpus.ensure_peaks()
    return data.build_splits(corpus, seed=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
