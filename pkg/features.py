"""
Frame-level acoustic descriptors and the serialized feature vector.

The vector layout is [ZCR frames | RMSE frames | MFCC frames x coefficients]:
index i < T is ZCR at frame i, T <= i < 2T is RMSE at frame i - T, and the rest
is MFCC coefficient (i - 2T) mod K at frame (i - 2T) div K.
"""

import functools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from config import SAMPLE_RATE
from errors import BoundsError, ParameterError
from signal_core import Waveform, fit_duration, frame_array, require_rate

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    """Framing and cepstral parameters; target_frames fixes the vector length."""

    frame_length: int = 2048
    hop: int = 512
    num_mel: int = 40
    num_mfcc: int = 40
    target_frames: int = 90  # 3.0 s at 16 kHz
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        n = self.frame_length
        if n < 2 or n & (n - 1):
            raise ParameterError(f"Frame length must be a power of two >= 2, got {n}")
        if not 0 < self.hop <= n:
            raise ParameterError(f"Hop must be in (0, {n}], got {self.hop}")
        if self.num_mel < 2:
            raise ParameterError(f"Need at least 2 mel filters, got {self.num_mel}")
        if not 1 <= self.num_mfcc <= self.num_mel:
            raise ParameterError(f"num_mfcc must be in [1, num_mel={self.num_mel}], got {self.num_mfcc}")
        if self.target_frames < 1:
            raise ParameterError(f"target_frames must be >= 1, got {self.target_frames}")
        if self.sample_rate <= 0:
            raise ParameterError(f"Sample rate must be positive, got {self.sample_rate}")

    @classmethod
    def for_duration(cls, seconds: float, **kwargs) -> "FeatureConfig":
        """Config whose T frames span `seconds` of audio."""
        base = cls(**kwargs)
        samples = int(round(seconds * base.sample_rate))
        frames = 1 + max(samples - base.frame_length, 0) // base.hop
        return cls(**{**kwargs, "target_frames": frames})

    @property
    def target_samples(self) -> int:
        return self.frame_length + (self.target_frames - 1) * self.hop

    @property
    def num_bins(self) -> int:
        return self.frame_length // 2 + 1

    @property
    def frame_width(self) -> int:
        """Descriptors per frame: ZCR, RMSE and K cepstral coefficients."""
        return self.num_mfcc + 2

    @property
    def vector_length(self) -> int:
        return self.target_frames * self.frame_width

    def frame_times(self) -> np.ndarray:
        """Centre time of each frame in seconds."""
        return (np.arange(self.target_frames) * self.hop + self.frame_length / 2) / self.sample_rate


class Descriptor(Enum):
    ZCR = "zcr"
    RMSE = "rmse"
    MFCC = "mfcc"


@dataclass(frozen=True)
class FeatureKind:
    kind: Descriptor
    frame: int
    coeff: Optional[int] = None

    @property
    def label(self) -> str:
        if self.kind is Descriptor.MFCC:
            return f"MFCC{self.coeff}@t{self.frame}"
        return f"{self.kind.name}@t{self.frame}"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    config: FeatureConfig

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape[0] != self.config.vector_length:
            raise ParameterError(
                f"Feature vector has {values.shape[0]} values, config expects {self.config.vector_length}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def zcr_block(self) -> np.ndarray:
        return self.values[: self.config.target_frames]

    @property
    def rmse_block(self) -> np.ndarray:
        t = self.config.target_frames
        return self.values[t : 2 * t]

    @property
    def mfcc_block(self) -> np.ndarray:
        """MFCCs as a (T, K) array."""
        t = self.config.target_frames
        return self.values[2 * t :].reshape(t, self.config.num_mfcc)

    def framed(self) -> np.ndarray:
        """Per-frame descriptor rows [zcr, rmse, mfcc_0..mfcc_K-1], shape (T, K+2)."""
        return frame_descriptors(self.values[None, :], self.config)[0]


def frame_descriptors(values: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Regroup serialized vectors (B, L) into per-frame rows (B, T, K+2)."""
    t, k = config.target_frames, config.num_mfcc
    zcr_block = values[:, :t, None]
    rmse_block = values[:, t : 2 * t, None]
    mfcc_block = values[:, 2 * t :].reshape(values.shape[0], t, k)
    return np.concatenate([zcr_block, rmse_block, mfcc_block], axis=2)


def frame_descriptors_backward(grad: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Scatter a (B, T, K+2) gradient back onto the serialized (B, L) layout."""
    return np.concatenate([grad[:, :, 0], grad[:, :, 1], grad[:, :, 2:].reshape(grad.shape[0], -1)], axis=1)


def zcr(frame: np.ndarray) -> float:
    """
    Zero-crossing rate (1 / 2(N-1)) * sum |sgn x[n] - sgn x[n-1]|, with sgn(0) = +1.

    Accepts a single frame or a stack of frames along the last axis.
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ParameterError("ZCR needs frames of at least 2 samples")
    signs = np.where(x >= 0, 1.0, -1.0)
    rate = np.sum(np.abs(np.diff(signs, axis=-1)), axis=-1) / (2.0 * (x.shape[-1] - 1))
    return rate if rate.ndim else float(rate)


def rmse(frame: np.ndarray) -> float:
    """Root-mean-square energy sqrt(mean |x|^2) over the last axis."""
    x = np.asarray(frame, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ParameterError("RMSE needs a nonempty frame")
    energy = np.sqrt(np.mean(x * x, axis=-1))
    return energy if energy.ndim else float(energy)


@functools.lru_cache(maxsize=8)
def analysis_window(frame_length: int) -> np.ndarray:
    """Periodic Hann window, shared read-only."""
    window = signal.get_window("hann", frame_length, fftbins=True)
    window.setflags(write=False)
    return window


def stft_power(frame: np.ndarray, window: Optional[np.ndarray] = None) -> np.ndarray:
    """
    One-sided power spectrum |X(k)|^2 of a windowed frame (or frames, last axis).

    Args:
        frame: Frame of N samples, N a power of two
        window: Taper of length N; defaults to the periodic Hann window

    Returns:
        N/2 + 1 power bins
    """
    x = np.asarray(frame, dtype=np.float64)
    n = x.shape[-1]
    if n < 2 or n & (n - 1):
        raise ParameterError(f"STFT frame length must be a power of two, got {n}")
    if window is None:
        window = analysis_window(n)
    spectrum = np.fft.rfft(x * window, axis=-1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: FeatureConfig) -> np.ndarray:
    """Centres of the M filters, equally spaced on the mel scale strictly inside (0, Nyquist)."""
    edges = np.linspace(0.0, hz_to_mel(config.sample_rate / 2), config.num_mel + 2)
    return mel_to_hz(edges[1:-1])


def mel_edge_bins(config: FeatureConfig) -> np.ndarray:
    """FFT bins of the M + 2 triangle corner frequencies."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(config.sample_rate / 2), config.num_mel + 2))
    bins = np.floor((config.frame_length + 1) * edges / config.sample_rate).astype(int)
    return np.minimum(bins, config.num_bins - 1)


@functools.lru_cache(maxsize=8)
def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """
    Triangular mel filterbank of shape (M, N/2 + 1).

    Filter m rises from the centre bin of filter m-1 to its own centre bin (weight 1)
    and falls to the centre bin of filter m+1, so adjacent triangles overlap at their feet.
    Built once per config and shared read-only.
    """
    bins = mel_edge_bins(config)
    k = np.arange(config.num_bins)[None, :]
    left, centre, right = bins[:-2, None], bins[1:-1, None], bins[2:, None]
    rising = (k - left) / np.maximum(centre - left, 1)
    falling = (right - k) / np.maximum(right - centre, 1)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights[k.repeat(config.num_mel, axis=0) == centre] = 1.0
    weights.setflags(write=False)
    return weights


def mfcc(frame: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """
    MFCCs of a frame (or frames, last axis).

    power spectrum -> mel energies -> log with floor 1e-10 -> orthonormal DCT-II,
    first K coefficients.
    """
    power = stft_power(frame)
    energies = power @ mel_filterbank(config).T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    return sp_fft.dct(log_energies, type=2, norm="ortho", axis=-1)[..., : config.num_mfcc]


def extract(w: Waveform, config: FeatureConfig) -> FeatureVector:
    """
    Serialize ZCR, RMSE and MFCC descriptors of a waveform.

    The waveform is fitted to exactly T frames worth of samples first, so every
    utterance yields a vector of length T * (K + 2).

    Raises:
        ParameterError: If the waveform is not at config.sample_rate
    """
    require_rate(w, config.sample_rate)
    fitted = fit_duration(w, config.target_samples)
    framed = frame_array(fitted.samples, config.frame_length, config.hop)
    values = np.concatenate([zcr(framed), rmse(framed), mfcc(framed, config).reshape(-1)])
    return FeatureVector(values, config)


def map_index(i: int, config: FeatureConfig) -> FeatureKind:
    """Descriptor, frame and coefficient behind vector index i."""
    t, k = config.target_frames, config.num_mfcc
    if not 0 <= i < config.vector_length:
        raise BoundsError(f"Index {i} outside [0, {config.vector_length})")
    if i < t:
        return FeatureKind(Descriptor.ZCR, i)
    if i < 2 * t:
        return FeatureKind(Descriptor.RMSE, i - t)
    frame, coeff = divmod(i - 2 * t, k)
    return FeatureKind(Descriptor.MFCC, frame, coeff)


def index_of(kind: FeatureKind, config: FeatureConfig) -> int:
    """Inverse of map_index."""
    t, k = config.target_frames, config.num_mfcc
    if not 0 <= kind.frame < t:
        raise BoundsError(f"Frame {kind.frame} outside [0, {t})")
    if kind.kind is Descriptor.ZCR:
        return kind.frame
    if kind.kind is Descriptor.RMSE:
        return t + kind.frame
    if kind.coeff is None or not 0 <= kind.coeff < k:
        raise BoundsError(f"Coefficient {kind.coeff} outside [0, {k})")
    return 2 * t + kind.frame * k + kind.coeff


def frame_of_index(config: FeatureConfig) -> np.ndarray:
    """Frame number of every vector index, shape (L,)."""
    t, k = config.target_frames, config.num_mfcc
    return np.concatenate([np.arange(t), np.arange(t), np.repeat(np.arange(t), k)])


def frame_groups(config: FeatureConfig, num_groups: Optional[int] = None) -> List[np.ndarray]:
    """
    Partition [0, L) into groups of whole frames.

    Args:
        config: Feature layout
        num_groups: Number of contiguous frame ranges; defaults to one group per frame

    Returns:
        List of index arrays; group g covers every descriptor of its frames
    """
    t = config.target_frames
    num_groups = t if num_groups is None else num_groups
    if not 1 <= num_groups <= t:
        raise ParameterError(f"Number of frame groups must be in [1, {t}], got {num_groups}")
    owner = frame_of_index(config)
    ranges = np.array_split(np.arange(t), num_groups)
    return [np.flatnonzero((owner >= r[0]) & (owner <= r[-1])) for r in ranges]


def block_groups(config: FeatureConfig) -> List[np.ndarray]:
    """Three groups: the ZCR, RMSE and MFCC blocks."""
    t = config.target_frames
    return [np.arange(0, t), np.arange(t, 2 * t), np.arange(2 * t, config.vector_length)]
