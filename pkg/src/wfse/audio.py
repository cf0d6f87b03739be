"""WAV ingestion/emission and SNR-exact mixing.

Only one audio format is accepted: RIFF/WAVE, PCM 16-bit little-endian,
mono, 16 kHz.  Anything else is rejected instead of resampled so the DSP
contract downstream stays exact.  Samples are scaled to [-1, 1] by
dividing by 32768.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptHeader,
    IoFailure,
    UnsupportedFormat,
    ZeroPowerClean,
    ZeroPowerNoise,
)

SAMPLE_RATE = 16000
_PCM_SCALE = 32768.0


@dataclass
class Utterance:
    """Mono sample sequence with provenance."""

    samples: np.ndarray  # float64, nominally in [-1, 1]
    sample_rate: int = SAMPLE_RATE
    role: str = "clean"  # clean | noise | mixture | enhanced

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path, role: str = "clean") -> Utterance:
    """Read a PCM-16 mono 16 kHz WAV file.

    Extra chunks before ``data`` are skipped.  Raises UnsupportedFormat for
    the wrong codec/channel count/rate/width, CorruptHeader for structural
    damage, IoFailure for OS errors.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise CorruptHeader(f"{path}: chunk {cid!r} overruns the file")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
            break
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise CorruptHeader(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise CorruptHeader(f"{path}: fmt chunk too short")

    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag != 1:
        raise UnsupportedFormat(f"{path}: only PCM (format tag 1) supported, got {tag}")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: only mono supported, got {channels} channels")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: only 16-bit supported, got {bits}")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: only {SAMPLE_RATE} Hz supported, got {rate}")

    pcm = np.frombuffer(data[: len(data) - (len(data) % 2)], dtype="<i2")
    return Utterance(pcm.astype(np.float64) / _PCM_SCALE, SAMPLE_RATE, role)


def save_wav(utterance: Utterance, path) -> None:
    """Write PCM-16 mono 16 kHz.  Values clipped to [-1, 32767/32768]."""
    x = np.asarray(utterance.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    clipped = np.clip(x, -1.0, 32767.0 / _PCM_SCALE)
    pcm = np.rint(clipped * _PCM_SCALE).astype("<i2")

    payload = pcm.tobytes()
    header = b"".join([
        b"RIFF", struct.pack("<I", 36 + len(payload)), b"WAVE",
        b"fmt ", struct.pack("<IHHIIHH", 16, 1, 1, SAMPLE_RATE,
                             SAMPLE_RATE * 2, 2, 16),
        b"data", struct.pack("<I", len(payload)),
    ])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def mean_square(x: np.ndarray) -> float:
    return float(np.mean(np.square(np.asarray(x, dtype=np.float64))))


@dataclass
class MixSpec:
    """One mixing job: which noise segment goes under which clean file."""

    clean_path: str
    noise_path: str
    snr_db: float
    noise_offset: int = 0


def mix_at_snr(clean: Utterance, noise: Utterance, snr_db: float,
               noise_offset: int = 0) -> tuple[Utterance, Utterance]:
    """Mix ``noise`` under ``clean`` so the result has exactly ``snr_db``.

    The gain solves 10*log10(P_clean / P_scaled_noise) == snr_db with P the
    mean square over the full utterance.  Returns (mixture, scaled_noise);
    the scaled noise is recovered as mixture - clean so the component
    identity holds bitwise for downstream metrics.
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    s = np.asarray(clean.samples, dtype=np.float64)
    d_full = np.asarray(noise.samples, dtype=np.float64)
    if noise_offset < 0 or len(d_full) - noise_offset < len(s):
        raise ValueError("noise segment at offset shorter than clean utterance")
    d = d_full[noise_offset:noise_offset + len(s)]

    p_clean = mean_square(s)
    p_noise = mean_square(d)
    if p_clean <= 0.0:
        raise ZeroPowerClean("clean utterance has zero power")
    if p_noise <= 0.0:
        raise ZeroPowerNoise("noise segment has zero power")

    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixture = s + gain * d
    scaled = mixture - s  # bitwise mixture - clean == scaled_noise
    return (
        Utterance(mixture, clean.sample_rate, "mixture"),
        Utterance(scaled, clean.sample_rate, "noise"),
    )


def measured_snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    """Independent check: SNR implied by a (clean, noise) pair."""
    return 10.0 * np.log10(mean_square(clean) / mean_square(noise))
