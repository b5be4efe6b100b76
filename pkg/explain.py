"""
Gradient-free explanations of a trained classifier.

Shapley attribution works over groups of vector indices and any scoring
closure; Score-CAM, occlusion and counterfactual masking work on a model in
its standardized input space, where the zero vector is the training mean.
"""

import itertools
import logging
from dataclasses import dataclass
from math import factorial
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.special import binom

from errors import ModelStateError, ParameterError, ShapeError, TractabilityError
from features import FeatureConfig, FeatureVector, frame_of_index, map_index
from fusion_model import EmotionClass

logger = logging.getLogger(__name__)

MAX_EXACT_GROUPS = 20
MAX_ENUMERATED_PERMUTATION_GROUPS = 8
COALITION_CHUNK = 1024
PERMUTATION_CHUNK = 256

ScoreFn = Callable[[np.ndarray], np.ndarray]
ArrayLike = Union[np.ndarray, FeatureVector]


class ExplainableModel(Protocol):
    """What the masking explainers need from a model."""

    @property
    def is_fitted(self) -> bool: ...

    def network_input(self, fv: FeatureVector) -> np.ndarray: ...

    def class_scores(self, X: np.ndarray) -> np.ndarray: ...

    def last_conv_maps(self, X: np.ndarray) -> np.ndarray: ...


def _values(x: ArrayLike) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return x.values
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _target_scores(f: ScoreFn, X: np.ndarray, target: int) -> np.ndarray:
    out = np.asarray(f(X), dtype=np.float64)
    if out.ndim == 2:
        out = out[:, int(target)]
    return out.reshape(-1)


def check_partition(groups: Sequence[np.ndarray], length: int) -> np.ndarray:
    """
    Validate that groups partition [0, length).

    Returns:
        owner array: group number of every index
    """
    if len(groups) == 0:
        raise ParameterError("At least one attribution group is required")
    owner = np.full(length, -1, dtype=int)
    for g, idx in enumerate(groups):
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            raise ParameterError(f"Group {g} is empty")
        if idx.min() < 0 or idx.max() >= length:
            raise ParameterError(f"Group {g} has indices outside [0, {length})")
        if np.any(owner[idx] != -1) or np.unique(idx).size != idx.size:
            raise ParameterError(f"Group {g} overlaps another group")
        owner[idx] = g
    if np.any(owner == -1):
        raise ParameterError(f"Groups leave {int(np.sum(owner == -1))} indices uncovered")
    return owner


@dataclass(frozen=True)
class UnitInfo:
    unit: int
    kind: str
    frame: int
    coeff: Optional[int]
    label: str


def describe_units(groups: Sequence[np.ndarray], config: Optional[FeatureConfig]) -> List[UnitInfo]:
    """Label each group through the index mapping: one descriptor, or a frame range."""
    infos = []
    for u, idx in enumerate(groups):
        idx = np.asarray(idx)
        if config is None:
            infos.append(UnitInfo(u, "index", -1, None, f"[{idx.min()}..{idx.max()}]"))
            continue
        kinds = [map_index(int(i), config) for i in idx]
        if len(kinds) == 1:
            k = kinds[0]
            infos.append(UnitInfo(u, k.kind.value, k.frame, k.coeff, k.label))
            continue
        frames = sorted({k.frame for k in kinds})
        descriptors = {k.kind for k in kinds}
        kind = descriptors.pop().value if len(descriptors) == 1 else "frames"
        span = f"t{frames[0]}" if frames[0] == frames[-1] else f"t{frames[0]}-t{frames[-1]}"
        infos.append(UnitInfo(u, kind, frames[0], None, f"{kind}@{span}"))
    return infos


def _fold_to_frames(per_index: np.ndarray, config: FeatureConfig) -> np.ndarray:
    return np.bincount(frame_of_index(config), weights=per_index, minlength=config.target_frames)


@dataclass(frozen=True)
class Attribution:
    """Shapley values per group, the base value f(baseline) and the explained output f(x)."""

    phi: np.ndarray
    phi0: float
    fx: float
    target: EmotionClass
    groups: Tuple[np.ndarray, ...]
    method: str
    config: Optional[FeatureConfig] = None

    @property
    def efficiency_gap(self) -> float:
        return float(self.phi0 + np.sum(self.phi) - self.fx)

    def unit_map(self) -> List[UnitInfo]:
        return describe_units(self.groups, self.config)

    def per_index(self) -> np.ndarray:
        """Each group's value spread evenly over its indices."""
        length = sum(len(g) for g in self.groups)
        out = np.zeros(length)
        for value, idx in zip(self.phi, self.groups):
            out[idx] = value / len(idx)
        return out

    def frame_profile(self) -> Tuple[np.ndarray, np.ndarray]:
        """(frame centre times in s, summed attribution per frame)."""
        if self.config is None:
            raise ParameterError("A feature layout is needed to fold attributions onto frames")
        return self.config.frame_times(), _fold_to_frames(self.per_index(), self.config)

    def top_units(self, k: int = 5) -> List[Tuple[UnitInfo, float]]:
        order = np.argsort(-np.abs(self.phi), kind="stable")[:k]
        infos = self.unit_map()
        return [(infos[i], float(self.phi[i])) for i in order]


@dataclass(frozen=True)
class SaliencyMap:
    """Nonnegative per-index scores (min-max normalized) and the unnormalized map they came from."""

    scores: np.ndarray
    target: EmotionClass
    raw: Optional[np.ndarray] = None
    config: Optional[FeatureConfig] = None
    attention: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.scores < 0) or not np.all(np.isfinite(self.scores)):
            raise ShapeError("Saliency scores must be finite and nonnegative")

    def normalized(self) -> np.ndarray:
        return minmax(self.scores)

    def frame_profile(self) -> Tuple[np.ndarray, np.ndarray]:
        """(frame centre times in s, saliency mass per frame)."""
        if self.config is None:
            raise ParameterError("A feature layout is needed to fold saliency onto frames")
        return self.config.frame_times(), _fold_to_frames(self.scores, self.config)


def minmax(x: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant array maps to zeros."""
    lo, hi = np.min(x), np.max(x)
    if hi - lo <= 0:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def shapley_weights(m: int) -> np.ndarray:
    """Weight of a coalition of size s (not containing the player): 1 / (M * C(M-1, s))."""
    s = np.arange(m)
    return 1.0 / (m * binom(m - 1, s))


def _coalition_values(f: ScoreFn, x: np.ndarray, baseline: np.ndarray, owner: np.ndarray,
                      members: np.ndarray, target: int) -> np.ndarray:
    """Model output for each coalition row of `members` (n, M) bool."""
    values = np.empty(members.shape[0])
    for start in range(0, members.shape[0], COALITION_CHUNK):
        block = members[start : start + COALITION_CHUNK][:, owner]
        values[start : start + COALITION_CHUNK] = _target_scores(f, np.where(block, x, baseline), target)
    return values


def shapley_exact(
    f: ScoreFn,
    x: ArrayLike,
    baseline: ArrayLike,
    groups: Sequence[np.ndarray],
    target: Union[int, EmotionClass],
    config: Optional[FeatureConfig] = None,
) -> Attribution:
    """
    Exact Shapley values over index groups by enumerating all 2^M coalitions.

    Players outside a coalition take their baseline values.

    Args:
        f: Maps a (B, L) batch to (B,) target scores or (B, C) class scores
        x: Input being explained
        baseline: Reference input
        groups: Partition of [0, L) into M groups
        target: Class whose score is explained
        config: Feature layout, used only to label units

    Raises:
        TractabilityError: If M exceeds 20
        ParameterError: If groups do not partition [0, L)
    """
    x, baseline = _values(x), _values(baseline)
    m = len(groups)
    if m > MAX_EXACT_GROUPS:
        raise TractabilityError(
            f"Exact Shapley enumerates 2^M coalitions and is capped at {MAX_EXACT_GROUPS} groups, got {m}"
        )
    owner = check_partition(groups, x.shape[0])
    masks = np.arange(2**m, dtype=np.int64)
    members = ((masks[:, None] >> np.arange(m)) & 1).astype(bool)
    v = _coalition_values(f, x, baseline, owner, members, int(target))
    sizes = members.sum(axis=1)
    weights = shapley_weights(m)

    phi = np.empty(m)
    for i in range(m):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(weights[sizes[without]] * (v[without | (1 << i)] - v[without]))
    logger.debug("Exact Shapley over %d groups (%d coalitions)", m, 2**m)
    return Attribution(phi, float(v[0]), float(v[-1]), EmotionClass(int(target)), tuple(groups), "exact", config)


def shapley_sampled(
    f: ScoreFn,
    x: ArrayLike,
    baseline: ArrayLike,
    groups: Sequence[np.ndarray],
    target: Union[int, EmotionClass],
    num_permutations: Optional[int] = None,
    seed: int = 0,
    config: Optional[FeatureConfig] = None,
) -> Attribution:
    """
    Permutation-sampling Shapley estimate.

    Each permutation adds groups one at a time and credits each with its marginal
    change. The estimate is then renormalized so phi0 + sum(phi) == f(x), the
    residual being distributed in proportion to |phi|.

    Args:
        num_permutations: Random permutations to draw; None enumerates all M!
            permutations (only for M <= 8)
        seed: RNG seed for the permutations
    """
    x, baseline = _values(x), _values(baseline)
    m = len(groups)
    owner = check_partition(groups, x.shape[0])
    if num_permutations is None:
        if m > MAX_ENUMERATED_PERMUTATION_GROUPS:
            raise TractabilityError(
                f"Enumerating all permutations is capped at {MAX_ENUMERATED_PERMUTATION_GROUPS} groups, got {m}"
            )
        perms = np.array(list(itertools.permutations(range(m))), dtype=int)
        method = f"permutation(all {factorial(m)})"
    else:
        if num_permutations < 1:
            raise ParameterError(f"num_permutations must be >= 1, got {num_permutations}")
        rng = np.random.default_rng(seed)
        perms = np.stack([rng.permutation(m) for _ in range(num_permutations)])
        method = f"permutation({num_permutations})"

    totals = np.zeros(m)
    steps = np.tril(np.ones((m + 1, m), dtype=bool), k=-1)  # row j: first j positions present
    for start in range(0, len(perms), PERMUTATION_CHUNK):
        chunk = perms[start : start + PERMUTATION_CHUNK]
        inverse = np.argsort(chunk, axis=1)  # position of each group in its permutation
        members = steps[:, inverse].transpose(1, 0, 2).reshape(-1, m)
        v = _coalition_values(f, x, baseline, owner, members, int(target)).reshape(len(chunk), m + 1)
        marginals = np.diff(v, axis=1)
        np.add.at(totals, chunk, marginals)
    phi = totals / len(perms)

    phi0 = float(_target_scores(f, baseline[None, :], int(target))[0])
    fx = float(_target_scores(f, x[None, :], int(target))[0])
    residual = fx - phi0 - np.sum(phi)
    magnitude = np.sum(np.abs(phi))
    phi = phi + (residual * np.abs(phi) / magnitude if magnitude > 0 else residual / m)
    return Attribution(phi, phi0, fx, EmotionClass(int(target)), tuple(groups), method, config)


def background_baseline(model: ExplainableModel, background: Optional[Sequence[FeatureVector]], length: int) -> np.ndarray:
    """Per-index mean of a background set in model-input space, or the zero vector."""
    if not background:
        return np.zeros(length)
    return np.mean([model.network_input(fv) for fv in background], axis=0)


def explain_shapley(
    model: ExplainableModel,
    fv: FeatureVector,
    target: Union[int, EmotionClass],
    groups: Sequence[np.ndarray],
    exact: bool = True,
    num_permutations: Optional[int] = 1000,
    seed: int = 0,
    background: Optional[Sequence[FeatureVector]] = None,
) -> Attribution:
    """Shapley attribution of a model's class probability in its input space."""
    if not model.is_fitted:
        raise ModelStateError("Model has not been trained or loaded")
    x = model.network_input(fv)
    baseline = background_baseline(model, background, x.shape[0])
    if exact:
        return shapley_exact(model.class_scores, x, baseline, groups, target, fv.config)
    return shapley_sampled(model.class_scores, x, baseline, groups, target, num_permutations, seed, fv.config)


def upsample(a: np.ndarray, length: int) -> np.ndarray:
    """Linear interpolation of a 1-D map onto `length` evenly spaced points spanning it."""
    if a.shape[0] == 1:
        return np.full(length, float(a[0]))
    return np.interp(np.linspace(0.0, a.shape[0] - 1, length), np.arange(a.shape[0]), a)


def score_cam(model: ExplainableModel, fv: FeatureVector, target: Union[int, EmotionClass]) -> SaliencyMap:
    """
    Score-CAM saliency over the input indices.

    Every map of the last convolution is upsampled to the input length and
    min-max normalized into a mask; the mask's weight is the target-score
    increase of the masked input over the zero input. The weighted sum of the
    upsampled maps is rectified, then min-max normalized for reporting.

    Raises:
        ModelStateError: If the model is not trained
    """
    if not model.is_fitted:
        raise ModelStateError("Score-CAM needs a trained model")
    x = model.network_input(fv)
    length = x.shape[0]
    maps = np.asarray(model.last_conv_maps(x[None, :]))[0]
    upsampled = np.stack([upsample(a, length) for a in maps])
    masks = np.stack([minmax(u) for u in upsampled])

    base_score = _target_scores(model.class_scores, np.zeros((1, length)), int(target))[0]
    alpha = _target_scores(model.class_scores, x[None, :] * masks, int(target)) - base_score
    raw = np.maximum(alpha @ upsampled, 0.0)
    attention = None
    if hasattr(model, "attention_weights") and getattr(model, "encoder", None) is not None:
        attention = model.attention_weights(fv)
    return SaliencyMap(minmax(raw), EmotionClass(int(target)), raw, fv.config, attention)


@dataclass(frozen=True)
class OcclusionCurve:
    starts: np.ndarray
    drops: np.ndarray
    window: int
    units: Tuple[np.ndarray, ...]
    reference: float

    def per_unit(self) -> np.ndarray:
        """Mean drop over the windows covering each unit."""
        total = np.zeros(len(self.units))
        count = np.zeros(len(self.units))
        for start, drop in zip(self.starts, self.drops):
            total[start : start + self.window] += drop
            count[start : start + self.window] += 1
        return np.divide(total, count, out=np.zeros_like(total), where=count > 0)

    def per_index(self) -> np.ndarray:
        length = sum(len(u) for u in self.units)
        out = np.zeros(length)
        for value, idx in zip(self.per_unit(), self.units):
            out[idx] = value
        return out


def _units(length: int, groups: Optional[Sequence[np.ndarray]]) -> Tuple[np.ndarray, ...]:
    if groups is None:
        return tuple(np.array([i]) for i in range(length))
    check_partition(groups, length)
    return tuple(np.asarray(g) for g in groups)


def occlusion_sensitivity(
    model: ExplainableModel,
    fv: FeatureVector,
    target: Union[int, EmotionClass],
    window: int,
    stride: int = 1,
    groups: Optional[Sequence[np.ndarray]] = None,
    baseline: Optional[np.ndarray] = None,
) -> OcclusionCurve:
    """
    Confidence drop F(x) - F(x with a window of units set to baseline) at each window position.

    Args:
        window: Units per occluded window (indices, or groups when given)
        stride: Units between window starts
        groups: Occlusion units; defaults to single indices
        baseline: Replacement values in model-input space; defaults to zeros
    """
    if window < 1 or stride < 1:
        raise ParameterError(f"Window and stride must be >= 1, got {window} and {stride}")
    x = model.network_input(fv)
    units = _units(x.shape[0], groups)
    if window > len(units):
        raise ParameterError(f"Window {window} exceeds the {len(units)} available units")
    baseline = np.zeros_like(x) if baseline is None else _values(baseline)
    starts = np.arange(0, len(units) - window + 1, stride)
    occluded = np.repeat(x[None, :], len(starts), axis=0)
    for row, start in enumerate(starts):
        idx = np.concatenate(units[start : start + window])
        occluded[row, idx] = baseline[idx]
    reference = _target_scores(model.class_scores, x[None, :], int(target))[0]
    drops = reference - _target_scores(model.class_scores, occluded, int(target))
    return OcclusionCurve(starts, drops, window, units, float(reference))


@dataclass(frozen=True)
class CounterfactualResult:
    masked: np.ndarray
    masked_units: np.ndarray
    before: float
    after: float

    @property
    def drop(self) -> float:
        return self.before - self.after


def counterfactual_mask(
    model: ExplainableModel,
    fv: FeatureVector,
    saliency: SaliencyMap,
    top_fraction: float,
    target: Optional[Union[int, EmotionClass]] = None,
    groups: Optional[Sequence[np.ndarray]] = None,
    bottom: bool = False,
) -> CounterfactualResult:
    """
    Zero the highest-saliency units of the model input and re-score.

    Args:
        saliency: Per-index saliency; summed per unit when groups are given
        top_fraction: Fraction of units to zero, in (0, 1); floor(fraction * units) are masked
        target: Class to score; defaults to the saliency target
        groups: Masking units; defaults to single indices
        bottom: Mask the lowest-saliency units instead (control)
    """
    if not 0 < top_fraction < 1:
        raise ParameterError(f"top_fraction must be in (0, 1), got {top_fraction}")
    target = saliency.target if target is None else target
    x = model.network_input(fv)
    if saliency.scores.shape[0] != x.shape[0]:
        raise ShapeError(f"Saliency covers {saliency.scores.shape[0]} indices, input has {x.shape[0]}")
    units = _units(x.shape[0], groups)
    unit_scores = np.array([saliency.scores[u].sum() for u in units])
    order = np.argsort(unit_scores if bottom else -unit_scores, kind="stable")
    chosen = order[: int(np.floor(top_fraction * len(units)))]
    masked = x.copy()
    for u in chosen:
        masked[units[u]] = 0.0
    scores = _target_scores(model.class_scores, np.stack([x, masked]), int(target))
    return CounterfactualResult(masked, chosen, float(scores[0]), float(scores[1]))


@dataclass(frozen=True)
class RankedUnit:
    unit: int
    label: str
    importance: float


def global_importance(attributions: Sequence[Attribution]) -> List[RankedUnit]:
    """Mean |phi| per unit over several attributions, most important first."""
    if not attributions:
        raise ParameterError("No attributions to aggregate")
    sizes = {len(a.phi) for a in attributions}
    if len(sizes) != 1:
        raise ShapeError(f"Attributions use different unit counts: {sorted(sizes)}")
    mean_abs = np.mean([np.abs(a.phi) for a in attributions], axis=0)
    infos = attributions[0].unit_map()
    order = np.argsort(-mean_abs, kind="stable")
    return [RankedUnit(int(i), infos[i].label, float(mean_abs[i])) for i in order]


@dataclass(frozen=True)
class Region:
    start_frame: int
    end_frame: int  # inclusive
    start_s: float
    end_s: float
    mass: float


def active_regions(profile: np.ndarray, config: FeatureConfig, threshold: float = 0.5) -> List[Region]:
    """
    Contiguous frame runs whose profile is at least `threshold` of the profile maximum.

    Args:
        profile: Per-frame scores, shape (T,)
        config: Feature layout, for frame timing
        threshold: Fraction of the maximum in (0, 1]
    """
    if not 0 < threshold <= 1:
        raise ParameterError(f"threshold must be in (0, 1], got {threshold}")
    profile = np.asarray(profile, dtype=np.float64)
    if profile.shape != (config.target_frames,):
        raise ShapeError(f"Profile has shape {profile.shape}, expected ({config.target_frames},)")
    top = profile.max()
    if top <= 0:
        return []
    active = profile / top >= threshold
    edges = np.diff(np.concatenate([[0], active.astype(int), [0]]))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1) - 1
    sr, hop, n = config.sample_rate, config.hop, config.frame_length
    return [
        Region(int(a), int(b), a * hop / sr, (b * hop + n) / sr, float(profile[a : b + 1].sum()))
        for a, b in zip(starts, ends)
    ]
