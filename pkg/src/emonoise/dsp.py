"""MFCC front end: framing, FFT, mel filterbank, cepstral transform.

The pipeline per frame is: pre-emphasis, Hamming window, zero-pad to the
FFT size, power spectrum, triangular mel filterbank, log with a floor,
orthonormal DCT-II keeping the first ``n_ceps`` coefficients (C0 kept).
Frame rows are then averaged into fixed-length segments for the classifier.

Everything is a pure function; extracting features for distinct utterances
can run in parallel without coordination.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip

_FEATURE_MAGIC = b"MFC1"


@dataclass(frozen=True)
class MfccConfig:
    """Extraction parameters. Defaults assume 16 kHz speech (25 ms / 10 ms)."""

    frame_len: int = 400
    hop: int = 160
    fft_size: int = 512
    n_mels: int = 26
    n_ceps: int = 13
    preemph: float = 0.97
    fmin_hz: float = 0.0
    fmax_hz: float | None = None  # None means Nyquist at extraction time
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.frame_len < 1 or self.hop < 1:
            raise ValueError("frame_len and hop must be at least 1")
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")
        if not 0 < self.n_ceps <= self.n_mels:
            raise ValueError("need 0 < n_ceps <= n_mels")
        if not 0.0 <= self.preemph < 1.0:
            raise ValueError("preemph must lie in [0, 1)")
        if self.fmin_hz < 0.0 or (self.fmax_hz is not None and self.fmax_hz <= self.fmin_hz):
            raise ValueError("need 0 <= fmin_hz < fmax_hz")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")


@dataclass(frozen=True)
class SegmentConfig:
    """Frames per segment and the hop between segment starts (in frames)."""

    seg_frames: int = 25
    seg_hop: int = 25

    def __post_init__(self) -> None:
        if self.seg_frames < 1 or self.seg_hop < 1:
            raise ValueError("seg_frames and seg_hop must be at least 1")


@lru_cache(maxsize=32)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev = (rev << 1) | ((idx >> b) & 1)
    rev.flags.writeable = False
    return rev


def fft(buffer) -> np.ndarray:
    """Radix-2 decimation-in-time FFT, sign convention e^{-2*pi*i*k*n/N}.

    Accepts a 1-D buffer or a batch with the transform applied along the
    last axis. Length must be a power of two.
    """
    x = np.asarray(buffer)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"fft length must be a power of two, got {n}")
    out = np.ascontiguousarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)]
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp((-2j * np.pi / m) * np.arange(half))
        view = out.reshape(out.shape[:-1] + (n // m, m))
        even = view[..., :half]
        odd = view[..., half:] * twiddle
        upper = even + odd
        lower = even - odd
        view[..., :half] = upper
        view[..., half:] = lower
        m *= 2
    return out


def frame_signal(samples, frame_len: int, hop: int) -> np.ndarray:
    """Slice a signal into frames starting at 0, hop, 2*hop, ...

    Returns an (n_frames, frame_len) array; the tail that does not fill a
    whole frame is dropped (no zero padding). Shorter-than-one-frame input
    yields zero frames.
    """
    if frame_len < 1 or hop < 1:
        raise ValueError("frame_len and hop must be at least 1")
    x = np.asarray(samples, dtype=np.float64)
    if x.size < frame_len:
        return np.empty((0, frame_len))
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)
    return windows[::hop].copy()


def hz_to_mel(f):
    """Mel scale: m = 2595 * log10(1 + f/700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    """Inverse mel scale: f = 700 * (10^(m/2595) - 1)."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be nonnegative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def mel_filterbank(cfg: MfccConfig, sample_rate_hz: int) -> np.ndarray:
    """Triangular mel filters as an (n_mels, fft_size/2 + 1) weight matrix.

    Corner frequencies are n_mels + 2 mel-equally-spaced points between
    fmin and fmax; each filter rises linearly in Hz to weight 1 at its
    center and falls to 0 at its neighbours' centers. No area normalization.
    """
    fmax = sample_rate_hz / 2.0 if cfg.fmax_hz is None else cfg.fmax_hz
    if fmax > sample_rate_hz / 2.0:
        raise ValueError(f"fmax_hz {fmax} exceeds Nyquist {sample_rate_hz / 2.0}")
    corners = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax), cfg.n_mels + 2))
    bin_freqs = np.arange(cfg.fft_size // 2 + 1) * (sample_rate_hz / cfg.fft_size)

    lower = corners[:-2, None]
    center = corners[1:-1, None]
    upper = corners[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.max(axis=1) <= 0.0)
    if empty.size:
        raise ValueError(
            f"mel filter {empty[0]} has zero support; lower n_mels or raise fft_size"
        )
    return weights


@lru_cache(maxsize=32)
def _dct2_matrix(n: int, n_out: int) -> np.ndarray:
    j = np.arange(n)
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * k * (2 * j + 1) / (2 * n))
    scale = np.full(n_out, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    basis *= scale[:, None]
    basis.flags.writeable = False
    return basis


def dct2(v, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II of the last axis, keeping the first n_out coefficients."""
    x = np.asarray(v, dtype=np.float64)
    n = x.shape[-1]
    if not 1 <= n_out <= n:
        raise ValueError(f"need 1 <= n_out <= {n}, got {n_out}")
    return x @ _dct2_matrix(n, n_out).T


def mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Per-frame MFCC rows for a clip, shape (n_frames, n_ceps).

    Raises ValueError when the clip is shorter than one frame.
    """
    frames = frame_signal(clip.samples, cfg.frame_len, cfg.hop)
    if frames.shape[0] == 0:
        raise ValueError(
            f"clip of {len(clip)} samples is shorter than one frame ({cfg.frame_len})"
        )
    # pre-emphasis within each frame; the frame's first sample is kept as is
    emphasized = frames.copy()
    emphasized[:, 1:] -= cfg.preemph * frames[:, :-1]

    n = cfg.frame_len
    if n > 1:
        window = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))
    else:
        window = np.ones(1)
    padded = np.zeros((frames.shape[0], cfg.fft_size))
    padded[:, :n] = emphasized * window

    spectrum = fft(padded)[:, : cfg.fft_size // 2 + 1]
    power = (spectrum.real**2 + spectrum.imag**2) / cfg.fft_size
    energies = power @ mel_filterbank(cfg, clip.sample_rate_hz).T
    return dct2(np.log(np.maximum(energies, cfg.log_floor)), cfg.n_ceps)


def segment_features(frames, scfg: SegmentConfig = SegmentConfig()) -> np.ndarray:
    """Average frame rows into segment-level vectors, shape (n_segments, n_ceps).

    Segment s covers rows [s*seg_hop, s*seg_hop + seg_frames); only fully
    contained segments are emitted. An utterance shorter than one segment
    collapses to a single mean over all its frames.
    """
    mat = np.asarray(frames, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError("feature matrix must be nonempty with one row per frame")
    n = mat.shape[0]
    if n < scfg.seg_frames:
        return mat.mean(axis=0, keepdims=True)
    starts = range(0, n - scfg.seg_frames + 1, scfg.seg_hop)
    return np.stack([mat[s : s + scfg.seg_frames].mean(axis=0) for s in starts])


def write_feature_cache(matrix, path) -> None:
    """Persist a feature matrix: magic MFC1, u32 rows, u32 cols, f64 LE row-major."""
    mat = np.ascontiguousarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("feature cache stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        fh.write(mat.astype("<f8").tobytes())


def read_feature_cache(path) -> np.ndarray:
    """Read a matrix written by write_feature_cache."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _FEATURE_MAGIC:
        raise ValueError(f"{path}: bad feature cache magic")
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated feature cache header")
    rows, cols = struct.unpack_from("<II", blob, 4)
    expected = 12 + rows * cols * 8
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated feature cache (want {expected} bytes, have {len(blob)})")
    return np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=12).reshape(rows, cols).copy()
