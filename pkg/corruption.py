"""Noise injection: peak-relative stochastic mixing and discrete-level stationary mixing."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from errors import NormalizationError, ParameterError
from noise_synth import NoiseColor, colored_noise
from signal_core import Waveform, peak

logger = logging.getLogger(__name__)

DISCRETE_LEVELS = (0.25, 0.50, 0.75)
LAMBDA_MAX = 0.75
LAMBDA_LEVELS = (0.0, 0.5, 0.75)

SeedLike = Union[int, np.random.Generator]


class MixMode(Enum):
    STOCHASTIC = "stochastic"
    DISCRETE = "discrete"


class LambdaSampling(Enum):
    """How lambda is drawn when a stochastic NoiseSpec leaves it open"""

    CONTINUOUS = "continuous"  # U[0, 0.75]
    LEVEL_SET = "level_set"  # uniform over {0, 0.5, 0.75}


@dataclass(frozen=True)
class NoiseSpec:
    """
    An interference source plus its intensity.

    In stochastic mode `lam` is the mixing factor (None draws one per use through
    sample_lambda); in discrete mode `alpha` must be one of DISCRETE_LEVELS.
    """

    source: Union[NoiseColor, Waveform]
    mode: MixMode = MixMode.STOCHASTIC
    lam: Optional[float] = None
    alpha: Optional[float] = None
    seed: int = 0
    lambda_sampling: LambdaSampling = LambdaSampling.CONTINUOUS

    def __post_init__(self):
        if self.mode is MixMode.STOCHASTIC:
            if self.alpha is not None:
                raise ParameterError("Stochastic mixing takes lambda, not alpha")
            if self.lam is not None and not (np.isfinite(self.lam) and self.lam >= 0):
                raise ParameterError(f"Lambda must be a finite value >= 0, got {self.lam}")
        else:
            if self.lam is not None:
                raise ParameterError("Discrete mixing takes alpha, not lambda")
            check_alpha(self.alpha)

    @property
    def level(self) -> Optional[float]:
        return self.lam if self.mode is MixMode.STOCHASTIC else self.alpha

    @property
    def label(self) -> str:
        if isinstance(self.source, NoiseColor):
            return self.source.value
        return "external"


@dataclass(frozen=True)
class MixReport:
    lambda_or_alpha: float
    noise_peak_applied: float
    aligned_len: int


def check_alpha(alpha: Optional[float]) -> float:
    if alpha is None or alpha not in DISCRETE_LEVELS:
        raise ParameterError(f"Alpha must be one of {DISCRETE_LEVELS}, got {alpha}")
    return float(alpha)


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def normalize_noise(n: Waveform) -> Waveform:
    """Scale noise to unit peak; identically zero noise cannot be normalized."""
    n_peak = peak(n)
    if n_peak == 0.0:
        raise NormalizationError("Noise is identically zero and cannot be peak-normalized")
    return n.with_samples(n.samples / n_peak)


def align_noise(n: Waveform, target_len: int, offset: int = 0) -> Waveform:
    """
    Match noise to the speech duration without looping.

    Args:
        n: Noise waveform (nonempty)
        target_len: Required length in samples
        offset: First sample to keep; longer noise is truncated after it

    Returns:
        Noise of exactly target_len samples, zero-padded at the end if short
    """
    if len(n) == 0:
        raise ParameterError("Cannot align an empty noise signal")
    if offset < 0 or offset >= len(n):
        raise ParameterError(f"Offset {offset} outside noise of length {len(n)}")
    segment = n.samples[offset:offset + target_len]
    if segment.shape[0] < target_len:
        segment = np.pad(segment, (0, target_len - segment.shape[0]))
    return n.with_samples(segment)


def random_offset(noise_len: int, target_len: int, seed: SeedLike) -> int:
    """Seeded start offset so repeated injections see different parts of a long clip."""
    if noise_len <= target_len:
        return 0
    return int(_rng(seed).integers(0, noise_len - target_len + 1))


def _check_rates(s: Waveform, n: Waveform) -> None:
    if s.sample_rate != n.sample_rate:
        raise ParameterError(f"Sample rate mismatch: speech {s.sample_rate} Hz, noise {n.sample_rate} Hz")


def inject_stochastic(s: Waveform, n: Waveform, lam: float, offset: int = 0) -> Tuple[Waveform, MixReport]:
    """
    Mix noise scaled relative to the speech peak: x = s + lam * max|s| * n / max|n|.

    Args:
        s: Clean speech
        n: Noise (aligned to len(s) before normalization)
        lam: Mixing factor, >= 0
        offset: Start offset into n

    Returns:
        (corrupted waveform, MixReport)

    Raises:
        ParameterError: On rate mismatch or negative lambda
        NormalizationError: If the aligned noise is identically zero
    """
    _check_rates(s, n)
    if not (np.isfinite(lam) and lam >= 0):
        raise ParameterError(f"Lambda must be a finite value >= 0, got {lam}")
    n_tilde = normalize_noise(align_noise(n, len(s), offset))
    amplitude = lam * peak(s)
    mixed = s.samples + amplitude * n_tilde.samples
    return s.with_samples(mixed), MixReport(float(lam), float(amplitude), len(s))


def sample_lambda(seed: SeedLike, sampling: LambdaSampling = LambdaSampling.CONTINUOUS) -> float:
    """
    Draw a mixing factor.

    CONTINUOUS draws from U[0, 0.75]; LEVEL_SET draws uniformly from {0, 0.5, 0.75}.
    Pass a Generator to draw a sequence, or an int for a single reproducible draw.
    """
    rng = _rng(seed)
    if sampling is LambdaSampling.LEVEL_SET:
        return float(LAMBDA_LEVELS[int(rng.integers(0, len(LAMBDA_LEVELS)))])
    return float(rng.uniform(0.0, LAMBDA_MAX))


def inject_discrete(x_clean: Waveform, v: Waveform, alpha: float, offset: int = 0) -> Waveform:
    """
    Stationary mixing at a graded level: y = x + alpha * v / max|v|.

    Args:
        x_clean: Clean speech
        v: Noise (aligned to len(x_clean) before normalization)
        alpha: One of 0.25, 0.50, 0.75
        offset: Start offset into v

    Returns:
        Corrupted waveform of the same length as x_clean
    """
    _check_rates(x_clean, v)
    alpha = check_alpha(alpha)
    v_tilde = normalize_noise(align_noise(v, len(x_clean), offset))
    return x_clean.with_samples(x_clean.samples + alpha * v_tilde.samples)


def noise_for(spec: NoiseSpec, length: int, sample_rate: int, seed: SeedLike) -> Tuple[Waveform, int]:
    """
    Materialize the noise of a spec for a signal of `length` samples.

    Returns:
        (noise waveform, start offset into it)
    """
    rng = _rng(seed)
    if isinstance(spec.source, NoiseColor):
        noise_seed = int(rng.integers(0, 2**63 - 1))
        return colored_noise(spec.source, max(length, 1024), noise_seed, sample_rate), 0
    return spec.source, random_offset(len(spec.source), length, rng)


def corrupt(s: Waveform, spec: NoiseSpec, seed: Optional[SeedLike] = None) -> Tuple[Waveform, MixReport]:
    """
    Apply a NoiseSpec to a clean signal.

    Args:
        s: Clean speech
        spec: Noise source, protocol and level
        seed: Overrides spec.seed; pass a Generator to continue a stream

    Returns:
        (corrupted waveform, MixReport)
    """
    rng = _rng(spec.seed if seed is None else seed)
    noise, offset = noise_for(spec, len(s), s.sample_rate, rng)
    if spec.mode is MixMode.DISCRETE:
        mixed = inject_discrete(s, noise, spec.alpha, offset)
        return mixed, MixReport(float(spec.alpha), float(spec.alpha), len(s))
    lam = spec.lam if spec.lam is not None else sample_lambda(rng, spec.lambda_sampling)
    return inject_stochastic(s, noise, lam, offset)
