"""Pitch shifting and the quadruplet augmentation protocol (clean, noisy, pitched, pitched+noisy)."""

import logging
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from corruption import LAMBDA_MAX, MixMode, NoiseSpec, corrupt
from errors import ParameterError
from fusion_model import EmotionClass
from signal_core import Waveform, fit_duration

logger = logging.getLogger(__name__)

DEFAULT_SEMITONES = 0.7
MIN_PITCH_LENGTH = 2048


@dataclass(frozen=True)
class Quadruplet:
    original: Waveform
    noisy: Waveform
    pitched: Waveform
    pitched_noisy: Waveform
    label: EmotionClass
    lambdas: Optional[Tuple[float, float]] = None  # noisy, pitched_noisy

    def __post_init__(self):
        lengths = {len(w) for w in self.waveforms()}
        if len(lengths) != 1:
            raise ParameterError(f"Quadruplet members must share one length, got {sorted(lengths)}")

    def waveforms(self) -> Tuple[Waveform, Waveform, Waveform, Waveform]:
        return (self.original, self.noisy, self.pitched, self.pitched_noisy)

    def __iter__(self) -> Iterator[Tuple[Waveform, EmotionClass]]:
        return ((w, self.label) for w in self.waveforms())

    def __len__(self) -> int:
        return 4


def pitch_shift(w: Waveform, semitones: float) -> Waveform:
    """
    Move spectral content by 2^(semitones/12) while keeping the duration.

    The signal is resampled by linear interpolation at positions n * 2^(semitones/12),
    then truncated or zero-padded back to the input length. semitones=0 reads
    every original sample and is the identity.

    Raises:
        ParameterError: If semitones is not finite or the input is shorter than 2048 samples
    """
    if not np.isfinite(semitones):
        raise ParameterError(f"Semitones must be finite, got {semitones}")
    if len(w) < MIN_PITCH_LENGTH:
        raise ParameterError(f"Pitch shifting needs at least {MIN_PITCH_LENGTH} samples, got {len(w)}")
    factor = 2.0 ** (semitones / 12.0)
    n = len(w)
    count = int(np.floor((n - 1) / factor)) + 1
    positions = np.arange(count) * factor
    resampled = np.interp(positions, np.arange(n), w.samples)
    return fit_duration(w.with_samples(resampled), n)


def open_lambda(rng: np.random.Generator) -> float:
    """Draw lambda from the open interval (0, 0.75); endpoints are redrawn."""
    while True:
        lam = float(rng.uniform(0.0, LAMBDA_MAX))
        if 0.0 < lam < LAMBDA_MAX:
            return lam


def make_quadruplet(
    w: Waveform,
    label: EmotionClass,
    noise: NoiseSpec,
    semitones: float = DEFAULT_SEMITONES,
) -> Quadruplet:
    """
    Expand one utterance into four training instances.

    Both noisy members use stochastic mixing with their own noise realization
    and their own lambda from (0, 0.75). noise.lambda_sampling is ignored here.

    Args:
        w: Clean utterance
        label: Its emotion class
        noise: Stochastic interference spec without a fixed lambda (its seed drives every draw here)
        semitones: Pitch shift for the pitched members

    Returns:
        Quadruplet (original is the input object itself)

    Raises:
        ParameterError: If noise is a discrete spec or fixes lambda
    """
    if noise.mode is not MixMode.STOCHASTIC:
        raise ParameterError(f"Quadruplets need stochastic mixing, got {noise.mode.value}")
    if noise.lam is not None:
        raise ParameterError(f"Quadruplets draw lambda per member; drop the fixed lambda {noise.lam}")
    pitched = pitch_shift(w, semitones)
    members, lambdas = [], []
    for clean, seq in zip((w, pitched), np.random.SeedSequence(noise.seed).spawn(2)):
        rng = np.random.default_rng(seq)
        lam = open_lambda(rng)
        mixed, _ = corrupt(clean, replace(noise, lam=lam), rng)
        members.append(mixed)
        lambdas.append(lam)
    noisy, pitched_noisy = members
    logger.debug("Quadruplet %s: lambdas %.3f and %.3f", label.name, *lambdas)
    return Quadruplet(
        original=w,
        noisy=fit_duration(noisy, len(w)),
        pitched=pitched,
        pitched_noisy=fit_duration(pitched_noisy, len(w)),
        label=label,
        lambdas=(lambdas[0], lambdas[1]),
    )


def augment_dataset(
    items: Sequence[Tuple[Waveform, EmotionClass]],
    noise: NoiseSpec,
    semitones: float = DEFAULT_SEMITONES,
) -> List[Tuple[Waveform, EmotionClass]]:
    """
    Apply the quadruplet protocol to every item, stacking the results (4x expansion).

    Item i uses a seed derived from (noise.seed, i) so every utterance sees fresh noise.
    """
    seeds = np.random.SeedSequence(noise.seed).generate_state(max(len(items), 1), dtype=np.uint64)
    augmented: List[Tuple[Waveform, EmotionClass]] = []
    for (w, label), seed in zip(items, seeds):
        quad = make_quadruplet(w, label, replace(noise, seed=int(seed)), semitones)
        augmented.extend(quad)
    logger.info("Augmented %d utterances into %d", len(items), len(augmented))
    return augmented
