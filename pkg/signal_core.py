"""Waveform container, WAV I/O, peak measurement, framing and duration fitting."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view

from config import SAMPLE_RATE
from errors import (
    ParameterError,
    UnsupportedAudioError,
    WavFormatError,
    WavWriteError,
)

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
CANONICAL_SAMPLE_RATE = SAMPLE_RATE


@dataclass(frozen=True)
class Waveform:
    """Mono sampled audio. Samples are float64 and read-only after construction."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(f"Sample rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("Waveform samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Duration in seconds."""
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)


@dataclass(frozen=True)
class FrameGrid:
    """Left-aligned framing of a signal: frame m covers [m*hop, m*hop + frame_length)."""

    frame_length: int
    hop: int
    num_frames: int

    def __post_init__(self):
        if self.frame_length <= 0 or self.hop <= 0:
            raise ParameterError("Frame length and hop must be positive")
        if self.hop > self.frame_length:
            raise ParameterError(f"Hop ({self.hop}) must not exceed frame length ({self.frame_length})")
        if self.num_frames < 1:
            raise ParameterError("A frame grid needs at least one frame")

    @classmethod
    def for_length(cls, length: int, frame_length: int, hop: int) -> "FrameGrid":
        """Grid for a signal of `length` samples, padded up to one frame if shorter."""
        if frame_length <= 0 or hop <= 0:
            raise ParameterError("Frame length and hop must be positive")
        padded = max(length, frame_length)
        return cls(frame_length, hop, 1 + (padded - frame_length) // hop)

    @property
    def covered_samples(self) -> int:
        """Samples spanned from the first frame start to the last frame end."""
        return self.frame_length + (self.num_frames - 1) * self.hop

    def starts(self) -> np.ndarray:
        return np.arange(self.num_frames) * self.hop


def read_wav(path: Union[str, Path], expected_rate: Optional[int] = None) -> Waveform:
    """
    Read a 16-bit PCM WAV file as a mono waveform.

    Args:
        path: Path to a RIFF/WAVE file
        expected_rate: If given, the file's sample rate must match it

    Returns:
        Waveform with samples scaled to [-1, 1]; stereo is averaged to mono

    Raises:
        WavFormatError: If the file is missing or its header is malformed
        UnsupportedAudioError: If the encoding is not 16-bit PCM WAV
        ParameterError: If the sample rate differs from expected_rate
    """
    path = Path(path)
    if not path.is_file():
        raise WavFormatError(f"No such audio file: {path}")
    try:
        info = sf.info(str(path))
    except (sf.SoundFileError, RuntimeError) as e:
        raise WavFormatError(f"Malformed WAV header in {path}: {e}")
    if info.format != "WAV":
        raise UnsupportedAudioError(f"{path}: container {info.format} is not RIFF/WAVE")
    if info.subtype != "PCM_16":
        raise UnsupportedAudioError(f"{path}: encoding {info.subtype} is not 16-bit PCM")
    if expected_rate is not None and info.samplerate != expected_rate:
        raise ParameterError(
            f"{path}: sample rate {info.samplerate} Hz does not match {expected_rate} Hz (resampling is not supported)"
        )
    try:
        data, rate = sf.read(str(path), dtype="int16", always_2d=True)
    except (sf.SoundFileError, RuntimeError) as e:
        raise WavFormatError(f"Could not decode {path}: {e}")
    samples = data.astype(np.float64) / PCM16_SCALE
    return Waveform(samples.mean(axis=1), rate)


def write_wav(w: Waveform, path: Union[str, Path]) -> None:
    """
    Write a waveform as mono 16-bit PCM WAV, clamping the peak to [-1, 1].

    Args:
        w: The waveform to write
        path: Destination file

    Raises:
        WavWriteError: If the file cannot be written
    """
    clipped = np.clip(w.samples, -1.0, 1.0)
    n_clipped = int(np.sum(clipped != w.samples))
    if n_clipped:
        logger.debug("Clamped %d samples to [-1, 1] while writing %s", n_clipped, path)
    pcm = np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype("<i2")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        sf.write(str(path), pcm, w.sample_rate, subtype="PCM_16", format="WAV")
    except (sf.SoundFileError, RuntimeError, OSError) as e:
        raise WavWriteError(f"Error writing {path}: {e}")


def peak(w: Union[Waveform, np.ndarray]) -> float:
    """Largest absolute sample value; 0.0 for empty or silent input."""
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if samples.size == 0:
        return 0.0
    return float(np.max(np.abs(samples)))


def frame_array(samples: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    """Left-aligned frames of a 1-D array as a (num_frames, frame_length) read-only view."""
    if frame_length <= 0 or hop <= 0:
        raise ParameterError(f"Frame length and hop must be positive, got N={frame_length}, H={hop}")
    if hop > frame_length:
        raise ParameterError(f"Hop ({hop}) must not exceed frame length ({frame_length})")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < frame_length:
        samples = np.pad(samples, (0, frame_length - samples.shape[0]))
    return sliding_window_view(samples, frame_length)[::hop]


def frames(w: Waveform, frame_length: int, hop: int) -> np.ndarray:
    """
    Split a waveform into left-aligned frames.

    Args:
        w: Input waveform (right-zero-padded to one frame if shorter)
        frame_length: Frame length N in samples
        hop: Hop H in samples

    Returns:
        Array of shape (T, N) with T = 1 + (len - N) // H

    Raises:
        ParameterError: If N or H is not positive, or H > N
    """
    return frame_array(w.samples, frame_length, hop)


def fit_duration(w: Waveform, target_len: int) -> Waveform:
    """Truncate or right-zero-pad to exactly target_len samples."""
    if target_len <= 0:
        raise ParameterError(f"Target length must be positive, got {target_len}")
    n = len(w)
    if n == target_len:
        return w
    if n > target_len:
        return w.with_samples(w.samples[:target_len])
    return w.with_samples(np.pad(w.samples, (0, target_len - n)))


def require_rate(w: Waveform, sample_rate: int) -> None:
    """Reject waveforms at a different sample rate; nothing is resampled."""
    if w.sample_rate != sample_rate:
        raise ParameterError(
            f"Sample rate mismatch: waveform is {w.sample_rate} Hz, expected {sample_rate} Hz"
        )
