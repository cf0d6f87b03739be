"""Perceptual weighting filter machinery.

LP analysis of clean frames feeds a CELP-style weighting filter whose
amplitude response, sampled on the FFT grid, weights the spectral training
error.  Two filter variants are supported:

* ``amr``     W(z) = (1 - A(z/gamma1)) / (1 - A(z/gamma2)), the narrowband
              codec form with separate numerator/denominator expansion,
* ``amr_wb``  W(z) = 1 - A'(z/gamma1), the wideband form whose LP
              coefficients come from preemphasized speech,

plus ``mse``, which short-circuits the table to all ones and makes the
loss a plain bin-weighted squared error (the reference configuration).

The loss over one frame's half spectrum counts interior bins twice so it
equals the squared error over the full conjugate-symmetric spectrum:

    J = (w0*e0)^2 + (wK2*eK2)^2 + 2 * sum_interior (wk*ek)^2

with e = target_magnitude - estimated_magnitude.  Its gradient with
respect to the estimate is -2 * c_k * w_k^2 * e_k (c_k the bin count).
Weight tables are treated as constants: no gradient flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import LengthMismatch, SilentFrame, SingularAutocorrelation

LP_ORDER = 16
SILENT_FRAME_ENERGY = 1e-10
_DENOM_FLOOR = 1e-12
_DB_FLOOR = 1e-15


@dataclass(frozen=True)
class WeightConfig:
    """Weighting filter settings; defaults are the tuned AMR operating point."""

    variant: str = "amr"  # amr | amr_wb | mse
    gamma1: float = 0.92
    gamma2: float = 0.6
    preemphasis: float = 0.68
    order: int = LP_ORDER

    def validate(self) -> None:
        if self.variant not in ("amr", "amr_wb", "mse"):
            raise ValueError(f"unknown weighting variant {self.variant!r}")
        if not 0.0 < self.gamma1 <= 1.0:
            raise ValueError("gamma1 must be in (0, 1]")
        if not 0.0 < self.gamma2 <= 1.0:
            raise ValueError("gamma2 must be in (0, 1]")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ValueError("preemphasis factor must be in [0, 1)")
        if self.order < 1:
            raise ValueError("order must be >= 1")


@dataclass
class LpCoeffs:
    """Forward predictor a(1..order); x(n) ~ sum_i a(i) x(n-i)."""

    a: np.ndarray
    reflection: np.ndarray
    error_power: float  # final prediction error energy from the recursion

    @property
    def order(self) -> int:
        return len(self.a)


def autocorrelate(frame: np.ndarray, max_lag: int, ridge: bool = True) -> np.ndarray:
    """Biased autocorrelation r(0..max_lag) of one frame.

    With ridge=True, r(0) gets the 1e-4 white-noise correction plus a 1e-12
    absolute floor before any Levinson use (lag conditioning).
    """
    x = np.asarray(frame, dtype=np.float64)
    if len(x) < max_lag + 1:
        raise ValueError("frame shorter than max_lag + 1")
    full = np.correlate(x, x, mode="full")
    r = full[len(x) - 1:len(x) + max_lag].copy()
    if ridge:
        r[0] = r[0] * (1.0 + 1e-4) + 1e-12
    return r


def levinson_durbin(r: np.ndarray, order: int) -> LpCoeffs:
    """Solve the Toeplitz normal equations Toeplitz(r) a = r(1..order).

    Raises SingularAutocorrelation when any reflection coefficient reaches
    |k| >= 1 (callers fall back to identity weighting).
    """
    r = np.asarray(r, dtype=np.float64)
    if r[0] <= 0.0:
        raise SingularAutocorrelation("r(0) must be positive")
    a = np.zeros(order)
    k = np.zeros(order)
    err = r[0]
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / err
        if not np.isfinite(ki) or abs(ki) >= 1.0:
            raise SingularAutocorrelation(f"|k({i + 1})| >= 1")
        k[i] = ki
        a[:i] = a[:i] - ki * a[:i][::-1]
        a[i] = ki
        err *= 1.0 - ki * ki
    return LpCoeffs(a, k, err)


def bandwidth_expand(a: np.ndarray, gamma: float) -> np.ndarray:
    """Scale coefficient i by gamma**i, widening formant bandwidths."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    a = np.asarray(a, dtype=np.float64)
    return a * gamma ** np.arange(1, len(a) + 1)


def _filter_magnitude(a: np.ndarray, fft_size: int) -> np.ndarray:
    """|1 - sum_i a(i) z^-i| sampled at z = exp(j*2*pi*k/K), k = 0..K/2."""
    poly = np.zeros(fft_size)
    poly[0] = 1.0
    poly[1:len(a) + 1] = -a
    return np.abs(dsp.fft(poly)[: fft_size // 2 + 1])


def weight_response(lp: LpCoeffs, config: WeightConfig, fft_size: int) -> np.ndarray:
    """Per-bin amplitude response of the weighting filter, k = 0..K/2."""
    if config.variant == "mse":
        return np.ones(fft_size // 2 + 1)
    num = _filter_magnitude(bandwidth_expand(lp.a, config.gamma1), fft_size)
    if config.variant == "amr_wb":
        return num
    den = _filter_magnitude(bandwidth_expand(lp.a, config.gamma2), fft_size)
    return num / np.maximum(den, _DENOM_FLOOR)


def frame_weight_table(windowed_frame: np.ndarray, config: WeightConfig,
                       fft_size: int) -> np.ndarray:
    """Weight table for one windowed time frame, with silent-frame fallback.

    Frames with energy below SILENT_FRAME_ENERGY, or whose autocorrelation
    defeats the Levinson recursion, get a table of ones (plain MSE for that
    frame).
    """
    bins = fft_size // 2 + 1
    if config.variant == "mse":
        return np.ones(bins)
    x = np.asarray(windowed_frame, dtype=np.float64)
    if np.dot(x, x) < SILENT_FRAME_ENERGY:
        return np.ones(bins)
    try:
        lp = levinson_durbin(autocorrelate(x, config.order), config.order)
    except SingularAutocorrelation:
        return np.ones(bins)
    return weight_response(lp, config, fft_size)


def _check_bins(*vectors) -> None:
    n = np.shape(vectors[0])[-1]
    for v in vectors[1:]:
        if np.shape(v)[-1] != n:
            raise LengthMismatch("spectral vectors must share the bin count")


def bin_weights(bins: int) -> np.ndarray:
    """Multiplicity of each half-spectrum bin in the full spectrum."""
    c = np.full(bins, 2.0)
    c[0] = 1.0
    c[-1] = 1.0
    return c


def weighted_loss(target_mag, est_mag, table) -> np.ndarray:
    """Weighted squared spectral error of one frame (batched over leading axes)."""
    target_mag, est_mag, table = map(np.asarray, (target_mag, est_mag, table))
    _check_bins(target_mag, est_mag, table)
    ew = table * (target_mag - est_mag)
    sq = np.square(ew)
    return sq[..., 0] + sq[..., -1] + 2.0 * np.sum(sq[..., 1:-1], axis=-1)


def weighted_loss_grad(target_mag, est_mag, table) -> np.ndarray:
    """d(weighted_loss)/d(est_mag): -2 * c_k * w_k^2 * (target - est)."""
    target_mag, est_mag, table = map(np.asarray, (target_mag, est_mag, table))
    _check_bins(target_mag, est_mag, table)
    c = bin_weights(np.shape(table)[-1])
    return -2.0 * c * np.square(table) * (target_mag - est_mag)


def preemphasize(x: np.ndarray, beta: float) -> np.ndarray:
    """First-order high-pass tilt y(n) = x(n) - beta*x(n-1), x(-1) = 0."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must be in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    y = x.copy()
    y[1:] -= beta * x[:-1]
    return y


def power_db(mag: np.ndarray) -> np.ndarray:
    """10*log10 of the squared magnitude, floored to stay finite."""
    m = np.maximum(np.abs(np.asarray(mag, dtype=np.float64)), _DB_FLOOR)
    return 10.0 * np.log10(np.square(m))


def analyze_frame(clean_frame: np.ndarray, noise_mag: np.ndarray,
                  config: WeightConfig, fft_size: int) -> dict:
    """Spectral-shaping view of one frame: how the inverse filter hides noise.

    Returns per-bin dB curves for the clean LP envelope, the raw noise
    magnitude, and the noise shaped by the inverse weighting filter
    (noise_mag / w).  ``clean_frame`` is a windowed time frame.
    """
    x = np.asarray(clean_frame, dtype=np.float64)
    if np.dot(x, x) < SILENT_FRAME_ENERGY:
        raise SilentFrame("frame energy too low for LP analysis")
    try:
        lp = levinson_durbin(autocorrelate(x, config.order), config.order)
    except SingularAutocorrelation as exc:
        raise SilentFrame(str(exc)) from exc

    envelope = np.sqrt(lp.error_power) / np.maximum(
        _filter_magnitude(lp.a, fft_size), _DENOM_FLOOR)
    table = weight_response(lp, config, fft_size)
    noise_mag = np.asarray(noise_mag, dtype=np.float64)
    _check_bins(envelope, noise_mag)
    shaped = noise_mag / table
    return {
        "envelope_db": power_db(envelope),
        "noise_db": power_db(noise_mag),
        "shaped_noise_db": power_db(shaped),
    }
