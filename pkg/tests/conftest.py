import numpy as np
import pytest

from emonoise.audio import AudioClip, write_wav
from emonoise.pipeline import Label

# label index -> Berlin filename emotion letter
EMOTION_LETTERS = "WLEAFNT"


def tone_utterance(label: int, rng: np.random.Generator, sample_rate=16000, duration=0.6):
    """A three-harmonic tone complex; the fundamental encodes the class."""
    f0 = 150.0 * (1.3**label)
    t = np.arange(int(sample_rate * duration)) / sample_rate
    x = np.zeros_like(t)
    for harmonic in (1, 2, 3):
        x += np.sin(2.0 * np.pi * f0 * harmonic * t + rng.uniform(0, 2 * np.pi)) / harmonic
    x *= (0.25 + 0.05 * rng.random()) / np.abs(x).max()
    return AudioClip(x, sample_rate)


def build_tone_corpus(root, n_speakers=10, sample_rate=16000, duration=0.6, seed=1234):
    """Synthetic corpus in the Berlin filename convention plus a white-noise dir.

    One utterance per (speaker, emotion): filenames like 01a01Wa.wav.
    Returns (clean_dir, noise_dir).
    """
    clean_dir = root / "clean"
    clean_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for label in Label:
        letter = EMOTION_LETTERS[int(label)]
        for speaker in range(1, n_speakers + 1):
            clip = tone_utterance(int(label), rng, sample_rate, duration)
            write_wav(clip, clean_dir / f"{speaker:02d}a01{letter}a.wav")

    white_dir = root / "noise" / "white"
    white_dir.mkdir(parents=True, exist_ok=True)
    noise = 0.3 * rng.standard_normal(int(sample_rate * 3.0))
    write_wav(AudioClip(np.clip(noise, -0.95, 0.95), sample_rate), white_dir / "ch01.wav")
    return clean_dir, root / "noise"


@pytest.fixture(scope="session")
def tone_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tone_corpus")
    return build_tone_corpus(root)
