"""Framing, windowing, radix-2 FFT, and STFT analysis / overlap-add synthesis.

The analysis front end is fixed: 256-sample frames (16 ms at 16 kHz),
50% overlap, periodic Hann analysis window, 256-point FFT, and only the
129 non-redundant bins kept.  Synthesis is plain overlap-add with no
synthesis window; the 50% periodic Hann satisfies the constant
overlap-add property exactly, so interior samples reconstruct to within
floating-point rounding.

Edge convention: the first frame starts at sample 0 (no center padding)
and the signal is zero-padded at the tail to complete the last frame.
The first and last hop of a reconstruction are therefore not covered by
a full window sum and are excluded from identity guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import LengthMismatch


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 256
    hop: int = 128
    fft_size: int = 256

    def __post_init__(self):
        if self.hop * 2 != self.frame_len:
            raise ValueError("hop must be frame_len/2")
        if self.fft_size != self.frame_len:
            raise ValueError("fft_size must equal frame_len")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window: 0.5*(1 - cos(2*pi*k/n)), k = 0..n-1."""
    k = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


@lru_cache(maxsize=8)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Unnormalized radix-2 decimation-in-time FFT along the last axis.

    Accepts real or complex input whose last dimension is a power of two;
    leading dimensions are transformed independently (vectorized over
    frames).
    """
    a = np.array(x, dtype=np.complex128, order="C")
    n = a.shape[-1]
    if n == 0 or n & (n - 1):
        raise ValueError("transform length must be a power of two")
    if n == 1:
        return a
    a = np.ascontiguousarray(a[..., _bit_reverse_indices(n)])
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        v = a.reshape(a.shape[:-1] + (n // size, size))
        even = v[..., :half]
        odd = v[..., half:] * tw
        upper = even + odd
        lower = even - odd
        v[..., :half] = upper
        v[..., half:] = lower
        size *= 2
    return a


def ifft(x: np.ndarray) -> np.ndarray:
    """Inverse of fft; applies the 1/K normalization."""
    a = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(a))) / a.shape[-1]


def frame_signal(x: np.ndarray, config: StftConfig) -> np.ndarray:
    """Split into frames of frame_len starting every hop samples.

    Frame l covers samples [l*hop, l*hop + frame_len); the tail is
    zero-padded so every sample index < len(x) is covered.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("signal must be 1-D and nonempty")
    n_frames = -(-len(x) // config.hop)  # ceil
    padded = np.zeros((n_frames - 1) * config.hop + config.frame_len)
    padded[: len(x)] = x
    starts = np.arange(n_frames) * config.hop
    return padded[starts[:, None] + np.arange(config.frame_len)]


def windowed_frames(x: np.ndarray, config: StftConfig) -> np.ndarray:
    return frame_signal(x, config) * hann_periodic(config.frame_len)


def stft(x: np.ndarray, config: StftConfig = StftConfig()) -> np.ndarray:
    """Complex half-spectrum per frame, shape (n_frames, fft_size/2 + 1).

    Bins 0 and K/2 are forced to be purely real, which holds exactly for
    real input up to rounding of the butterfly twiddles.
    """
    spec = fft(windowed_frames(x, config))[..., : config.bins]
    spec[..., 0] = spec[..., 0].real
    spec[..., -1] = spec[..., -1].real
    return spec


def istft(magnitudes: np.ndarray, phases: np.ndarray,
          config: StftConfig = StftConfig(), length: int | None = None) -> np.ndarray:
    """Overlap-add synthesis from half-spectrum magnitudes and phases.

    Each frame is rebuilt as magnitude * exp(j*phase), extended to the full
    conjugate-symmetric spectrum, inverse transformed, and accumulated at
    hop spacing with no synthesis window.  ``length`` truncates the output
    to the original sample count; default is the full overlap-add buffer.
    """
    mag = np.asarray(magnitudes, dtype=np.float64)
    ph = np.asarray(phases, dtype=np.float64)
    if mag.shape != ph.shape:
        raise LengthMismatch(f"magnitude shape {mag.shape} != phase shape {ph.shape}")
    if mag.ndim != 2 or mag.shape[1] != config.bins:
        raise LengthMismatch(f"expected (frames, {config.bins}) spectra, got {mag.shape}")

    half = mag * np.exp(1j * ph)
    k = config.fft_size
    full = np.empty((half.shape[0], k), dtype=np.complex128)
    full[:, : config.bins] = half
    full[:, config.bins:] = np.conj(half[:, -2:0:-1])
    frames = ifft(full).real

    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * config.hop + config.frame_len)
    for l in range(n_frames):  # overlap-add; frames overlap so no vector scatter
        start = l * config.hop
        out[start:start + config.frame_len] += frames[l]
    if length is not None:
        out = out[:length]
    return out
