"""Stationary coloured noise (white, pink, brown) and a PSD slope fit to check it."""

import logging
from enum import Enum

import numpy as np
from scipy import signal

from config import SAMPLE_RATE
from errors import ParameterError
from signal_core import Waveform

logger = logging.getLogger(__name__)

MIN_COLORED_LENGTH = 1024
WELCH_SEGMENT = 4096
BANDS_PER_OCTAVE = 6


class NoiseColor(Enum):
    """Noise colours and their spectral exponent beta in S(f) ~ 1/f^beta"""

    WHITE = "white"
    PINK = "pink"
    BROWN = "brown"

    @property
    def beta(self) -> int:
        return {NoiseColor.WHITE: 0, NoiseColor.PINK: 1, NoiseColor.BROWN: 2}[self]


def _gaussian(length: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(length)


def _normalize_peak(x: np.ndarray) -> np.ndarray:
    return x / np.max(np.abs(x))


def white_noise(length: int, sigma: float = 1.0, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """
    I.i.d. Gaussian noise with zero mean and standard deviation sigma.

    Args:
        length: Number of samples
        sigma: Standard deviation
        seed: RNG seed; the same seed always yields the same sequence
        sample_rate: Sample rate of the returned waveform

    Returns:
        White noise waveform (not peak-normalized)
    """
    if length <= 0:
        raise ParameterError(f"Noise length must be positive, got {length}")
    if sigma <= 0:
        raise ParameterError(f"Sigma must be positive, got {sigma}")
    return Waveform(sigma * _gaussian(length, seed), sample_rate)


def pink_noise(length: int, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """
    Pink (1/f) noise by shaping the spectrum of white noise.

    Bin k > 0 is scaled by 1/sqrt(f_k), the DC bin is zeroed, and the result is
    peak-normalized to 1.
    """
    if length < MIN_COLORED_LENGTH:
        raise ParameterError(f"Pink noise needs at least {MIN_COLORED_LENGTH} samples for a stable slope, got {length}")
    spectrum = np.fft.rfft(_gaussian(length, seed))
    freqs = np.fft.rfftfreq(length, d=1.0 / sample_rate)
    spectrum[0] = 0.0
    spectrum[1:] /= np.sqrt(freqs[1:])
    shaped = np.fft.irfft(spectrum, n=length)
    return Waveform(_normalize_peak(shaped), sample_rate)


def brown_noise(length: int, seed: int = 0, sample_rate: int = SAMPLE_RATE, normalize: bool = True) -> Waveform:
    """
    Brown (1/f^2) noise as a discrete-time random walk over white noise.

    Args:
        length: Number of samples
        seed: RNG seed
        sample_rate: Sample rate of the returned waveform
        normalize: Remove the mean and scale to unit peak. With False the raw
            cumulative sum is returned, so consecutive differences are the
            underlying white samples.

    Returns:
        Brown noise waveform
    """
    if length < MIN_COLORED_LENGTH:
        raise ParameterError(f"Brown noise needs at least {MIN_COLORED_LENGTH} samples, got {length}")
    walk = np.cumsum(_gaussian(length, seed))
    if not normalize:
        return Waveform(walk, sample_rate)
    walk = walk - walk.mean()
    return Waveform(_normalize_peak(walk), sample_rate)


def colored_noise(color: NoiseColor, length: int, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Dispatch to the generator for `color`."""
    if color is NoiseColor.WHITE:
        return white_noise(length, 1.0, seed, sample_rate)
    if color is NoiseColor.PINK:
        return pink_noise(length, seed, sample_rate)
    return brown_noise(length, seed, sample_rate)


def psd_slope(w: Waveform, f_lo: float = 20.0, f_hi: float = 6000.0, banded: bool = False) -> float:
    """
    Fit the spectral exponent beta of S(f) ~ 1/f^beta over [f_lo, f_hi].

    The PSD is a Welch average (4096-sample Hann segments, 50% overlap). The fit
    is a least-squares line through log S against log f of every in-band bin.
    With banded=True the bins are first pooled into 1/6-octave bands so every
    octave weighs the same.

    Args:
        w: Signal to analyse, at least 16 segments long
        f_lo: Lower edge of the fit band in Hz
        f_hi: Upper edge of the fit band in Hz
        banded: Fit 1/6-octave band averages instead of raw bins

    Returns:
        -slope of the fit, so white ~ 0, pink ~ 1, brown ~ 2

    Raises:
        ParameterError: On an invalid or empty band, or too short a signal
    """
    nyquist = w.sample_rate / 2
    if not (0 <= f_lo < f_hi <= nyquist):
        raise ParameterError(f"Need 0 <= f_lo < f_hi <= {nyquist} Hz, got [{f_lo}, {f_hi}]")
    if len(w) < 16 * WELCH_SEGMENT:
        raise ParameterError(f"Slope fit needs at least {16 * WELCH_SEGMENT} samples, got {len(w)}")

    freqs, power = signal.welch(
        w.samples, fs=w.sample_rate, window="hann", nperseg=WELCH_SEGMENT, noverlap=WELCH_SEGMENT // 2
    )
    in_band = (freqs >= f_lo) & (freqs <= f_hi) & (freqs > 0) & (power > 0)
    if np.count_nonzero(in_band) < 2:
        raise ParameterError(f"No spectral bins in band [{f_lo}, {f_hi}] Hz")
    log_f = np.log10(freqs[in_band])
    log_p = np.log10(power[in_band])

    if banded:
        band = np.floor((log_f - log_f[0]) * BANDS_PER_OCTAVE / np.log10(2.0)).astype(int)
        counts = np.bincount(band)
        occupied = counts > 0
        log_f = np.bincount(band, weights=log_f)[occupied] / counts[occupied]
        log_p = np.bincount(band, weights=log_p)[occupied] / counts[occupied]
        if log_f.size < 2:
            raise ParameterError(f"Band [{f_lo}, {f_hi}] Hz is too narrow for a banded slope fit")

    slope, _ = np.polyfit(log_f, log_p, 1)
    logger.debug("PSD slope fit over %d points: %.4f", log_f.size, slope)
    return float(-slope)
