"""
Experiment orchestration: settings, manifests, the synthetic fixture corpus,
the noise x intensity grid, the ablation run and explanation reports.
"""

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split

from augment import augment_dataset
from config import JOBS, SAMPLE_RATE, field_names, override, read_config_file
from corruption import DISCRETE_LEVELS, LambdaSampling, MixMode, NoiseSpec, corrupt
from errors import ManifestError, ParameterError
from explain import (
    active_regions,
    counterfactual_mask,
    explain_shapley,
    occlusion_sensitivity,
    score_cam,
)
from features import FeatureConfig, FeatureVector, extract, frame_groups, map_index
from fusion_model import EmotionClass, FusionModel, TrainConfig, TrainingHistory, ablate, evaluate, train
from noise_synth import NoiseColor, pink_noise
from signal_core import Waveform, read_wav, write_wav

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")
QUADRUPLET_MEMBERS = ("original", "noisy", "pitched", "pitched_noisy")
CSV_FLOAT_FORMAT = "%.6f"
SPLITS = ("train", "test")


@dataclass(frozen=True)
class GridConfig:
    """Noise sources x intensity levels x repeat seeds."""

    noises: Tuple[str, ...] = ("white", "pink", "brown")
    intensities: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
    repeats: int = 3
    mode: MixMode = MixMode.STOCHASTIC
    lambda_sampling: LambdaSampling = LambdaSampling.CONTINUOUS
    augment_noise: str = "white"

    def __post_init__(self):
        if not self.noises:
            raise ParameterError("The grid needs at least one noise source")
        if not self.intensities:
            raise ParameterError("The grid needs at least one intensity")
        if self.repeats < 1:
            raise ParameterError(f"repeats must be >= 1, got {self.repeats}")
        for level in self.intensities:
            if level < 0 or not np.isfinite(level):
                raise ParameterError(f"Intensities must be finite and >= 0, got {level}")
            if self.mode is MixMode.DISCRETE and level != 0 and level not in DISCRETE_LEVELS:
                raise ParameterError(f"Discrete intensities must be 0 (control) or one of {DISCRETE_LEVELS}, got {level}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["noises"] = list(self.noises)
        d["intensities"] = list(self.intensities)
        d["mode"] = self.mode.value
        d["lambda_sampling"] = self.lambda_sampling.value
        return d


@dataclass(frozen=True)
class Settings:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    jobs: int = JOBS

    @classmethod
    def load(cls, config_file: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> "Settings":
        """
        Defaults, then the key=value file, then explicit overrides.

        Raises:
            ParameterError: On unknown keys or invalid values
        """
        values: Dict[str, Any] = dict(read_config_file(config_file))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = field_names(FeatureConfig, TrainConfig, GridConfig) | {"jobs"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ParameterError(f"Unknown configuration keys: {', '.join(unknown)}")
        base = cls()
        jobs = int(values.get("jobs", base.jobs))
        if jobs < 1:
            raise ParameterError(f"jobs must be >= 1, got {jobs}")
        return cls(
            features=override(base.features, values),
            train=override(base.train, values),
            grid=override(base.grid, values),
            jobs=jobs,
        )

    def snapshot(self) -> Dict[str, Any]:
        return {
            "features": asdict(self.features),
            "train": self.train.to_dict(),
            "grid": self.grid.to_dict(),
        }


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: EmotionClass
    split: Optional[str] = None


@dataclass
class Manifest:
    entries: List[ManifestEntry]
    source: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def check_paths(self) -> None:
        missing = [str(e.path) for e in self.entries if not e.path.is_file()]
        if missing:
            logger.warning("%d manifest paths do not exist", len(missing))
            raise ManifestError(f"Missing audio files: {', '.join(missing)}")

    def split(self, name: str, seed: int = 0, test_fraction: float = 0.2) -> List[ManifestEntry]:
        """
        Entries of one split.

        Untagged manifests are split per class into 80/20 train/test with `seed`.
        """
        if name not in SPLITS:
            raise ParameterError(f"Split must be one of {SPLITS}, got {name!r}")
        if any(e.split for e in self.entries):
            return [e for e in self.entries if e.split == name]
        labels = [int(e.label) for e in self.entries]
        train_idx, test_idx = train_test_split(
            np.arange(len(self.entries)), test_size=test_fraction, random_state=seed, stratify=labels
        )
        chosen = train_idx if name == "train" else test_idx
        return [self.entries[i] for i in sorted(chosen)]

    def write(self, path: Path) -> None:
        base = path.parent
        rows = []
        for e in self.entries:
            if "," in str(e.path):
                raise ManifestError(f"Manifest paths cannot contain commas: {e.path}")
            try:
                shown = e.path.relative_to(base)
            except ValueError:
                shown = e.path
            rows.append({"path": shown.as_posix(), "label": e.label.name.lower(), "split": e.split or ""})
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=["path", "label", "split"]).to_csv(path, index=False, lineterminator="\n")


def read_manifest(path: Union[str, Path], check_paths: bool = True) -> Manifest:
    """
    Read a `path,label,split` CSV manifest. Relative paths resolve against the manifest's directory.

    Raises:
        ManifestError: On a malformed file, an unknown label or split, or missing audio
    """
    path = Path(path)
    try:
        # header=None: a row with an extra field must fail instead of becoming an inferred index
        raw = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, quoting=csv.QUOTE_NONE, encoding="utf-8"
        )
    except FileNotFoundError:
        raise ManifestError(f"Manifest not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ManifestError(f"Malformed manifest {path} (paths may not contain commas): {e}")
    df = raw.iloc[1:].set_axis([str(c).strip() for c in raw.iloc[0]], axis=1)
    missing_cols = {"path", "label"} - set(df.columns)
    if missing_cols:
        raise ManifestError(f"Manifest {path} lacks columns: {', '.join(sorted(missing_cols))}")
    entries = []
    for row_no, row in enumerate(df.itertuples(index=False), start=2):
        split = getattr(row, "split", "") or None
        if split is not None and split not in SPLITS:
            raise ManifestError(f"{path}:{row_no}: split must be one of {SPLITS}, got {split!r}")
        try:
            label = EmotionClass.from_label(row.label)
        except ParameterError as e:
            raise ManifestError(f"{path}:{row_no}: {e}")
        audio = Path(row.path)
        entries.append(ManifestEntry(audio if audio.is_absolute() else path.parent / audio, label, split))
    if not entries:
        raise ManifestError(f"Manifest {path} has no rows")
    manifest = Manifest(entries, path)
    if check_paths:
        manifest.check_paths()
    return manifest


def _envelope(length: int, sample_rate: int, fade_s: float = 0.01) -> np.ndarray:
    env = np.ones(length)
    n_fade = min(int(fade_s * sample_rate), length // 2)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / max(n_fade, 1))
    env[:n_fade] = ramp
    env[length - n_fade :] = ramp[::-1]
    return env


def archetype(label: EmotionClass, length: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """One burst of a class's synthetic signature: pitch, loudness and timbre differ per class."""
    t = np.arange(length) / sample_rate
    jitter = 1.0 + 0.05 * rng.uniform(-1, 1)
    gain = 1.0 + 0.1 * rng.uniform(-1, 1)
    phase = rng.uniform(0, 2 * np.pi)
    if label is EmotionClass.HAPPY:
        f0 = 300 * jitter
        tone = sum(np.sin(2 * np.pi * h * f0 * t + phase) / h for h in (1, 2, 3))
        x = 0.3 * tone * (0.75 + 0.25 * np.sin(2 * np.pi * 6 * t))
    elif label is EmotionClass.ANGRY:
        f0 = 180 * jitter
        x = 0.12 * sum(np.sin(2 * np.pi * h * f0 * t + phase) for h in range(1, 11))
    elif label is EmotionClass.FEAR:
        f0 = 900 * jitter
        x = 0.35 * np.sin(2 * np.pi * f0 * t + (40 / 8) * np.sin(2 * np.pi * 8 * t) + phase)
    elif label is EmotionClass.SAD:
        x = 0.15 * np.sin(2 * np.pi * 150 * jitter * t + phase)
    elif label is EmotionClass.SURPRISED:
        f_start, f_end = 300 * jitter, 2000 * jitter
        duration = length / sample_rate
        x = 0.5 * np.sin(2 * np.pi * (f_start * t + (f_end - f_start) * t * t / (2 * duration)) + phase)
    elif label is EmotionClass.DISGUST:
        x = 0.3 * pink_noise(max(length, 1024), int(rng.integers(0, 2**31)), sample_rate).samples[:length]
    else:
        x = 0.3 * np.sin(2 * np.pi * 220 * jitter * t + phase)
    return gain * x * _envelope(length, sample_rate)


def gen_fixtures(
    out_dir: Union[str, Path],
    seed: int = 0,
    per_class: int = 20,
    duration: float = 3.0,
    sample_rate: int = SAMPLE_RATE,
) -> Manifest:
    """
    Write a labeled toy corpus of 7 x per_class WAV files plus manifest.csv.

    Each clip holds a class-specific burst in its middle third over a low white
    noise floor. These are tone/noise archetypes, not speech. The first 80% of
    each class is tagged train, the rest test.

    Returns:
        The manifest that was written
    """
    if per_class < 2:
        raise ParameterError(f"per_class must be >= 2 for a train/test split, got {per_class}")
    out = Path(out_dir)
    length = int(round(duration * sample_rate))
    third = length // 3
    rng = np.random.default_rng(seed)
    n_train = int(round(0.8 * per_class))
    entries = []
    for label in EmotionClass:
        for i in range(per_class):
            samples = 0.003 * rng.standard_normal(length)
            samples[third : 2 * third] += archetype(label, third, sample_rate, rng)
            path = out / f"{label.name.lower()}_{i:03d}.wav"
            write_wav(Waveform(np.clip(samples, -1.0, 1.0), sample_rate), path)
            entries.append(ManifestEntry(path, label, "train" if i < n_train else "test"))
    manifest = Manifest(entries, out / "manifest.csv")
    manifest.write(out / "manifest.csv")
    logger.info("Wrote %d fixture clips to %s", len(entries), out)
    return manifest


def noise_source(name: str, sample_rate: int) -> Union[NoiseColor, Waveform]:
    """A colour name or the path of a noise recording."""
    try:
        return NoiseColor(name.lower())
    except ValueError:
        return read_wav(name, expected_rate=sample_rate)


def noise_label(name: str) -> str:
    try:
        return NoiseColor(name.lower()).value
    except ValueError:
        return Path(name).stem


def load_waveforms(entries: Sequence[ManifestEntry], sample_rate: int, jobs: int = 1) -> List[Tuple[Waveform, EmotionClass]]:
    waves = Parallel(n_jobs=jobs, prefer="threads")(delayed(read_wav)(e.path, sample_rate) for e in entries)
    return [(w, e.label) for w, e in zip(waves, entries)]


def featurize(
    items: Sequence[Tuple[Waveform, EmotionClass]], config: FeatureConfig, jobs: int = 1
) -> List[Tuple[FeatureVector, EmotionClass]]:
    vectors = Parallel(n_jobs=jobs, prefer="threads")(delayed(extract)(w, config) for w, _ in items)
    return [(fv, label) for fv, (_, label) in zip(vectors, items)]


def corrupt_items(
    items: Sequence[Tuple[Waveform, EmotionClass]],
    source: Union[NoiseColor, Waveform],
    intensity: float,
    mode: MixMode,
    seed: int,
) -> List[Tuple[Waveform, EmotionClass]]:
    """Corrupt every item at one intensity; intensity 0 returns the clean items."""
    if intensity == 0:
        return list(items)
    if mode is MixMode.DISCRETE:
        spec = NoiseSpec(source, MixMode.DISCRETE, alpha=intensity, seed=seed)
    else:
        spec = NoiseSpec(source, MixMode.STOCHASTIC, lam=intensity, seed=seed)
    return [(corrupt(w, spec, np.random.default_rng([seed, i]))[0], label) for i, (w, label) in enumerate(items)]


def augment_spec(settings: Settings, noise: Optional[str] = None, seed: Optional[int] = None) -> NoiseSpec:
    """Stochastic spec for quadruplet augmentation; lambda is left to make_quadruplet."""
    name = settings.grid.augment_noise if noise is None else noise
    return NoiseSpec(
        noise_source(name, settings.features.sample_rate),
        MixMode.STOCHASTIC,
        seed=settings.train.seed if seed is None else seed,
    )


def train_from_manifest(manifest: Manifest, settings: Settings) -> Tuple[FusionModel, TrainingHistory]:
    """Train on the manifest's train split, with quadruplet augmentation when enabled."""
    items = load_waveforms(manifest.split("train", settings.train.seed), settings.features.sample_rate, settings.jobs)
    if settings.train.augment:
        items = augment_dataset(items, augment_spec(settings), settings.train.semitones)
    return train(featurize(items, settings.features, settings.jobs), settings.train)


def augment_manifest(
    manifest: Manifest,
    out_dir: Union[str, Path],
    settings: Settings,
    noise: Optional[str] = None,
    seed: Optional[int] = None,
) -> Manifest:
    """
    Write the four quadruplet members of every manifest row plus augmented.csv.

    Members are written as <stem>_<member>.wav and keep the row's label and split.

    Returns:
        The augmented manifest (4 rows per input row)

    Raises:
        ManifestError: If two rows share a file stem
    """
    stems = [e.path.stem for e in manifest.entries]
    duplicated = sorted({s for s in stems if stems.count(s) > 1})
    if duplicated:
        raise ManifestError(f"Augmented files would collide for stems: {', '.join(duplicated)}")
    out = Path(out_dir)
    items = load_waveforms(manifest.entries, settings.features.sample_rate, settings.jobs)
    augmented = augment_dataset(items, augment_spec(settings, noise, seed), settings.train.semitones)
    entries = []
    for k, (w, label) in enumerate(augmented):
        source = manifest.entries[k // len(QUADRUPLET_MEMBERS)]
        path = out / f"{source.path.stem}_{QUADRUPLET_MEMBERS[k % len(QUADRUPLET_MEMBERS)]}.wav"
        write_wav(w, path)
        entries.append(ManifestEntry(path, label, source.split))
    result = Manifest(entries, out / "augmented.csv")
    result.write(result.source)
    logger.info("Wrote %d augmented clips and %s", len(entries), result.source)
    return result


def feature_table(manifest: Manifest, settings: Settings) -> pd.DataFrame:
    """One row per utterance: path, label and the L feature values (columns named by map_index)."""
    config = settings.features
    items = load_waveforms(manifest.entries, config.sample_rate, settings.jobs)
    vectors = featurize(items, config, settings.jobs)
    columns = [map_index(i, config).label for i in range(config.vector_length)]
    table = pd.DataFrame(np.stack([fv.values for fv, _ in vectors]), columns=columns)
    table.insert(0, "label", [label.name.lower() for _, label in vectors])
    table.insert(0, "path", [e.path.as_posix() for e in manifest.entries])
    return table


def write_feature_table(manifest: Manifest, settings: Settings, path: Union[str, Path]) -> pd.DataFrame:
    """
    Write feature_table as CSV under a one-line `# key=value ...` header holding the feature config.

    Read it back with pd.read_csv(path, skiprows=1).
    """
    table = feature_table(manifest, settings)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = " ".join(f"{k}={v}" for k, v in asdict(settings.features).items())
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# {header}\n")
        table.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %d feature rows to %s", len(table), path)
    return table


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


@dataclass
class RunReport:
    """Tabular results plus run metadata. Only the JSON carries timestamps and timings."""

    kind: str
    table: pd.DataFrame
    config: Dict[str, Any]
    checkpoint_sha256: Optional[str]
    started: str
    finished: str
    details: Dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir: Union[str, Path], stem: Optional[str] = None) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        self.table.to_csv(csv_path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        summary = {
            "kind": self.kind,
            "config": self.config,
            "checkpoint_sha256": self.checkpoint_sha256,
            "started": self.started,
            "finished": self.finished,
            "rows": self.table.to_dict(orient="records"),
            **self.details,
        }
        json_path.write_text(json.dumps(summary, indent=2, default=str) + "\n", encoding="utf-8")
        logger.info("Wrote %s and %s", csv_path, json_path)
        return csv_path, json_path


def _grid_cell(
    model: FusionModel,
    items: Sequence[Tuple[Waveform, EmotionClass]],
    clean: Sequence[Tuple[FeatureVector, EmotionClass]],
    source: Union[NoiseColor, Waveform],
    noise: str,
    intensity: float,
    mode: MixMode,
    seed: int,
    features: FeatureConfig,
) -> Dict[str, Any]:
    dataset = clean if intensity == 0 else featurize(corrupt_items(items, source, intensity, mode, seed), features)
    metrics = evaluate(dataset, copy.deepcopy(model))
    logger.info("Grid cell %s @ %.2f seed %d: acc %.3f", noise, intensity, seed, metrics.accuracy)
    return {"noise": noise, "intensity": intensity, "seed": seed, **{m: getattr(metrics, m) for m in METRIC_COLUMNS}}


def run_grid(manifest: Manifest, settings: Settings, model: FusionModel, checkpoint_sha256: Optional[str] = None) -> RunReport:
    """
    Evaluate the test split under every (noise, intensity, seed) cell and aggregate over seeds.

    Returns:
        RunReport with one row per (noise, intensity): mean and sample sd of each metric
    """
    started = _now()
    grid = settings.grid
    rate = settings.features.sample_rate
    items = load_waveforms(manifest.split("test", settings.train.seed), rate, settings.jobs)
    clean = featurize(items, model.feature_config, settings.jobs)
    sources = {name: noise_source(name, rate) for name in grid.noises}
    seeds = [settings.train.seed + r for r in range(grid.repeats)]
    cells = [(name, level, seed) for name in grid.noises for level in grid.intensities for seed in seeds]
    logger.info("Running %d grid cells on %d test clips", len(cells), len(items))
    results = Parallel(n_jobs=settings.jobs, prefer="threads")(
        delayed(_grid_cell)(
            model, items, clean, sources[name], noise_label(name), level, grid.mode, seed, model.feature_config
        )
        for name, level, seed in cells
    )

    rows = []
    for name in grid.noises:
        for level in grid.intensities:
            cell = [r for r in results if r["noise"] == noise_label(name) and r["intensity"] == level]
            row: Dict[str, Any] = {"noise": noise_label(name), "intensity": level, "mode": grid.mode.value}
            for metric in METRIC_COLUMNS:
                row[f"{metric}_mean"], row[f"{metric}_sd"] = _mean_sd([r[metric] for r in cell])
            row["seeds"] = len(cell)
            rows.append(row)
    return RunReport(
        "grid", pd.DataFrame(rows), settings.snapshot(), checkpoint_sha256, started, _now(), {"cells": results}
    )


def run_ablation(manifest: Manifest, settings: Settings) -> RunReport:
    """
    Train and evaluate the four model variants on identical splits and seeds.

    The noisy test set uses the first grid noise at the highest grid intensity.
    """
    started = _now()
    rate = settings.features.sample_rate
    train_items = load_waveforms(manifest.split("train", settings.train.seed), rate, settings.jobs)
    test_items = load_waveforms(manifest.split("test", settings.train.seed), rate, settings.jobs)
    if settings.train.augment:
        train_items = augment_dataset(train_items, augment_spec(settings), settings.train.semitones)
    level = max(settings.grid.intensities)
    noise = settings.grid.noises[0]
    noisy_items = corrupt_items(test_items, noise_source(noise, rate), level, settings.grid.mode, settings.train.seed)

    rows = ablate(
        featurize(train_items, settings.features, settings.jobs),
        featurize(test_items, settings.features, settings.jobs),
        featurize(noisy_items, settings.features, settings.jobs),
        settings.train,
    )
    table = pd.DataFrame([r.to_dict(with_latency=False) for r in rows])
    details = {
        "noisy_condition": {"noise": noise_label(noise), "intensity": level, "mode": settings.grid.mode.value},
        "latency_ms": {r.variant.value: r.latency_ms for r in rows},
    }
    return RunReport("ablation", table, settings.snapshot(), None, started, _now(), details)


class ExplainMethod(Enum):
    SHAP = "shap"
    SCORECAM = "scorecam"
    OCCLUSION = "occlusion"
    COUNTERFACTUAL = "counterfactual"


@dataclass(frozen=True)
class ExplainOptions:
    exact: bool = True
    groups: int = 10
    permutations: int = 1000
    window: int = 3
    stride: int = 1
    top_fraction: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class ExplainReport:
    csv_path: Path
    json_path: Path
    overlay_path: Path
    summary: Dict[str, Any]


def index_rows(values: np.ndarray, config: FeatureConfig) -> List[Dict[str, Any]]:
    rows = []
    for i, value in enumerate(values):
        kind = map_index(i, config)
        rows.append({"unit": i, "kind": kind.kind.value, "frame": kind.frame, "coeff": kind.coeff, "value": value})
    return rows


def explain_cmd(
    checkpoint: Union[str, Path],
    audio: Union[str, Path],
    method: Union[str, ExplainMethod],
    out_dir: Union[str, Path],
    target: Optional[Union[str, int, EmotionClass]] = None,
    options: ExplainOptions = ExplainOptions(),
) -> ExplainReport:
    """
    Explain one clip with a trained checkpoint and write CSV, JSON and overlay files.

    Args:
        target: Class to explain; defaults to the predicted class

    Raises:
        ParameterError: On an unknown method (or too many groups for exact Shapley)
    """
    try:
        method = ExplainMethod(method.lower() if isinstance(method, str) else method)
    except ValueError:
        raise ParameterError(f"Unknown explain method {method!r}; choose from {[m.value for m in ExplainMethod]}")
    model = FusionModel.load(checkpoint)
    config = model.feature_config
    fv = extract(read_wav(audio, expected_rate=config.sample_rate), config)
    probs = model.predict_proba([fv])[0]
    predicted = EmotionClass(int(np.argmax(probs)))
    target = predicted if target is None else EmotionClass.from_label(target)
    summary: Dict[str, Any] = {
        "method": method.value,
        "audio": str(audio),
        "target": target.name,
        "predicted": predicted.name,
        "probabilities": {c.name: float(probs[c]) for c in EmotionClass},
    }
    groups = frame_groups(config)

    if method is ExplainMethod.SHAP:
        attribution = explain_shapley(
            model, fv, target, frame_groups(config, options.groups), options.exact, options.permutations, options.seed
        )
        rows = [
            {"unit": u.unit, "kind": u.kind, "frame": u.frame, "coeff": u.coeff, "value": float(v)}
            for u, v in zip(attribution.unit_map(), attribution.phi)
        ]
        times, profile = attribution.frame_profile()
        summary.update(
            phi0=attribution.phi0,
            fx=attribution.fx,
            estimator=attribution.method,
            top_units=[{"label": u.label, "value": v} for u, v in attribution.top_units()],
        )
    elif method is ExplainMethod.OCCLUSION:
        curve = occlusion_sensitivity(model, fv, target, options.window, options.stride, groups)
        rows = index_rows(curve.per_index(), config)
        times, profile = config.frame_times(), curve.per_unit()
        summary.update(reference=curve.reference, max_drop=float(curve.drops.max()),
                       max_drop_frame=int(curve.starts[int(np.argmax(curve.drops))]))
    else:
        saliency = score_cam(model, fv, target)
        rows = index_rows(saliency.scores, config)
        times, profile = saliency.frame_profile()
        if saliency.attention is not None:
            summary["attention"] = saliency.attention.tolist()
        if method is ExplainMethod.COUNTERFACTUAL:
            result = counterfactual_mask(model, fv, saliency, options.top_fraction, target, groups)
            summary.update(
                top_fraction=options.top_fraction,
                masked_frames=sorted(int(u) for u in result.masked_units),
                before=result.before,
                after=result.after,
            )
    summary["active_regions"] = [asdict(r) for r in active_regions(np.clip(profile, 0, None), config)]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{Path(audio).stem}_{method.value}"
    csv_path, json_path, overlay_path = out / f"{stem}.csv", out / f"{stem}.json", out / f"{stem}_overlay.txt"
    pd.DataFrame(rows, columns=["unit", "kind", "frame", "coeff", "value"]).to_csv(
        csv_path, index=False, lineterminator="\n"
    )
    json_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    np.savetxt(overlay_path, np.column_stack([times, profile]), fmt="%.6f", header="time_s score")
    logger.info("Explained %s as %s with %s", audio, target.name, method.value)
    return ExplainReport(csv_path, json_path, overlay_path, summary)

