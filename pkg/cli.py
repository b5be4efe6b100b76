"""Command-line interface: affectforge <command> [options]."""

import functools
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from augment import make_quadruplet
from config import LOG_LEVEL, OUT_DIR
from corruption import MixMode, NoiseSpec, corrupt
from errors import AffectForgeException, ParameterError
from experiments import (
    QUADRUPLET_MEMBERS,
    ExplainMethod,
    ExplainOptions,
    Settings,
    augment_manifest,
    augment_spec,
    explain_cmd,
    featurize,
    gen_fixtures,
    index_rows,
    load_waveforms,
    noise_source,
    read_manifest,
    run_ablation,
    run_grid,
    train_from_manifest,
    write_feature_table,
)
from features import extract
from fusion_model import EmotionClass, FusionModel, evaluate
from noise_synth import WELCH_SEGMENT, NoiseColor, colored_noise, psd_slope
from nn_core import file_digest
from signal_core import read_wav, write_wav

logger = logging.getLogger(__name__)

app = typer.Typer(
    help="Noise-robust speech-emotion experiments: noise, features, training and explanations.",
    no_args_is_help=True,
    add_completion=False,
)
console = Console()


@dataclass
class CliState:
    settings: Settings
    out: Path
    seed: int


def reports_errors(fn):
    """Turn domain exceptions into a logged message and the family's exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AffectForgeException as e:
            logger.error("%s", e)
            raise typer.Exit(code=e.exit_code)

    return wrapper


def _state(ctx: typer.Context) -> CliState:
    return ctx.obj


def _print_table(title: str, df: pd.DataFrame) -> None:
    table = Table(title=title)
    for column in df.columns:
        table.add_column(str(column))
    for row in df.itertuples(index=False):
        table.add_row(*[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)


@app.callback()
def main_options(
    ctx: typer.Context,
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for every random draw"),
    config: Optional[Path] = typer.Option(None, "--config", help="key=value configuration file"),
    out: Path = typer.Option(Path(OUT_DIR), "--out", help="Output directory"),
    jobs: Optional[int] = typer.Option(None, "--jobs", help="Worker threads for grid cells and feature extraction"),
    log_level: str = typer.Option(LOG_LEVEL, "--log-level", help="Logging level"),
):
    logging.basicConfig(
        level=log_level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )
    try:
        settings = Settings.load(config, {"seed": seed, "jobs": jobs})
    except AffectForgeException as e:
        logger.error("%s", e)
        raise typer.Exit(code=e.exit_code)
    ctx.obj = CliState(settings, out, settings.train.seed)


@app.command("synth-noise")
@reports_errors
def synth_noise(
    ctx: typer.Context,
    color: NoiseColor = typer.Argument(..., help="white, pink or brown"),
    output: Path = typer.Option(..., "--output", "-o", help="WAV file to write"),
    duration: float = typer.Option(10.0, "--duration", help="Seconds of noise"),
):
    """Synthesize coloured noise and report its fitted PSD exponent."""
    state = _state(ctx)
    rate = state.settings.features.sample_rate
    w = colored_noise(color, int(round(duration * rate)), state.seed, rate)
    write_wav(w, output)
    if len(w) >= 16 * WELCH_SEGMENT:
        console.print(f"{color.value}: {len(w)} samples, PSD exponent {psd_slope(w):.3f}")
    else:
        console.print(f"{color.value}: {len(w)} samples (too short for a slope fit)")


@app.command()
@reports_errors
def inject(
    ctx: typer.Context,
    speech: Path = typer.Argument(..., help="Clean WAV"),
    noise: str = typer.Argument(..., help="Noise colour or noise WAV path"),
    output: Path = typer.Option(..., "--output", "-o"),
    mode: MixMode = typer.Option(MixMode.STOCHASTIC, "--mode"),
    level: Optional[float] = typer.Option(None, "--level", help="Lambda (stochastic, drawn if omitted) or alpha (discrete)"),
):
    """Corrupt a clean clip with noise."""
    state = _state(ctx)
    rate = state.settings.features.sample_rate
    s = read_wav(speech, expected_rate=rate)
    if mode is MixMode.DISCRETE:
        spec = NoiseSpec(noise_source(noise, rate), mode, alpha=level, seed=state.seed)
    else:
        spec = NoiseSpec(
            noise_source(noise, rate), mode, lam=level, seed=state.seed,
            lambda_sampling=state.settings.grid.lambda_sampling,
        )
    mixed, report = corrupt(s, spec)
    write_wav(mixed, output)
    console.print(
        f"{mode.value} mix at {report.lambda_or_alpha:.3f}, noise amplitude {report.noise_peak_applied:.4f}, "
        f"{report.aligned_len} samples -> {output}"
    )


@app.command()
@reports_errors
def augment(
    ctx: typer.Context,
    speech: Optional[Path] = typer.Argument(None, help="Clean WAV (or use --manifest)"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Manifest CSV to augment row by row"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Directory for the WAVs (default: <out>)"),
    label: Optional[str] = typer.Option(None, "--label", help="Emotion label of a single clip"),
    noise: Optional[str] = typer.Option(None, "--noise", help="Noise colour or noise WAV path (default: augment_noise)"),
    semitones: Optional[float] = typer.Option(None, "--semitones"),
):
    """Write the four quadruplet members of a clip, or of every manifest row plus augmented.csv."""
    state = _state(ctx)
    settings = state.settings
    if semitones is not None:
        settings = replace(settings, train=replace(settings.train, semitones=semitones))
    target = out_dir or state.out
    if manifest is not None:
        if speech is not None:
            raise ParameterError("Give either a WAV or --manifest, not both")
        result = augment_manifest(read_manifest(manifest), target, settings, noise, state.seed)
        console.print(f"{len(result)} clips, augmented manifest at {result.source}")
        return
    if speech is None or label is None:
        raise ParameterError("augment needs --manifest, or a WAV and --label")
    w = read_wav(speech, expected_rate=settings.features.sample_rate)
    quad = make_quadruplet(w, EmotionClass.from_label(label), augment_spec(settings, noise, state.seed),
                           settings.train.semitones)
    for name, member in zip(QUADRUPLET_MEMBERS, quad.waveforms()):
        path = target / f"{speech.stem}_{name}.wav"
        write_wav(member, path)
        console.print(f"{name}: {path}")


@app.command()
@reports_errors
def features(
    ctx: typer.Context,
    audio: Optional[Path] = typer.Argument(None, help="WAV file (or use --manifest)"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Manifest CSV; one feature row per utterance"),
    output: Optional[Path] = typer.Option(
        None, "--out", "--output", "-o", help="CSV file (default: <out>/features.csv or <out>/<stem>_features.csv)"
    ),
):
    """Extract ZCR/RMSE/MFCC vectors: a per-index CSV for one clip, or one row per manifest utterance."""
    state = _state(ctx)
    config = state.settings.features
    if manifest is not None:
        if audio is not None:
            raise ParameterError("Give either a WAV or --manifest, not both")
        output = output or state.out / "features.csv"
        table = write_feature_table(read_manifest(manifest), state.settings, output)
        console.print(f"{len(table)} utterances x {config.vector_length} features -> {output}")
        return
    if audio is None:
        raise ParameterError("features needs a WAV or --manifest")
    fv = extract(read_wav(audio, expected_rate=config.sample_rate), config)
    output = output or state.out / f"{audio.stem}_features.csv"
    output.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(index_rows(fv.values, config)).to_csv(output, index=False, lineterminator="\n")
    console.print(f"{len(fv)} features ({config.target_frames} frames x {config.frame_width}) -> {output}")


@app.command("gen-fixtures")
@reports_errors
def gen_fixtures_cmd(
    ctx: typer.Context,
    out_dir: Optional[Path] = typer.Argument(None, help="Corpus directory (default: <out>/fixtures)"),
    per_class: int = typer.Option(20, "--per-class"),
    duration: float = typer.Option(3.0, "--duration"),
):
    """Synthesize the labelled 7-class toy corpus and its manifest."""
    state = _state(ctx)
    target = out_dir or state.out / "fixtures"
    manifest = gen_fixtures(target, state.seed, per_class, duration, state.settings.features.sample_rate)
    console.print(f"{len(manifest)} clips, manifest at {manifest.source}")


@app.command()
@reports_errors
def train(
    ctx: typer.Context,
    manifest: Path = typer.Argument(..., help="Manifest CSV"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Where to save (default: <out>/model.afrg)"),
):
    """Train a model on the manifest's train split."""
    state = _state(ctx)
    model, history = train_from_manifest(read_manifest(manifest), state.settings)
    checkpoint = checkpoint or state.out / "model.afrg"
    digest = model.save(checkpoint)
    state.out.mkdir(parents=True, exist_ok=True)
    history_path = state.out / "history.json"
    history_path.write_text(
        json.dumps({"checkpoint_sha256": digest, "epochs": history.to_records()}, indent=2) + "\n", encoding="utf-8"
    )
    console.print(f"Saved {checkpoint} ({digest[:12]}), final loss {history.losses[-1]:.4f}")


@app.command("eval")
@reports_errors
def eval_cmd(
    ctx: typer.Context,
    manifest: Path = typer.Argument(..., help="Manifest CSV"),
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    split: str = typer.Option("test", "--split"),
):
    """Evaluate a checkpoint on one split of a manifest."""
    state = _state(ctx)
    model = FusionModel.load(checkpoint)
    entries = read_manifest(manifest).split(split, state.seed)
    items = load_waveforms(entries, model.feature_config.sample_rate, state.settings.jobs)
    metrics = evaluate(featurize(items, model.feature_config, state.settings.jobs), model)
    out = state.out / f"eval_{split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(metrics.to_dict(), indent=2) + "\n", encoding="utf-8")
    _print_table(
        f"{split} split ({metrics.support} clips)",
        pd.DataFrame([{k: getattr(metrics, k) for k in ("accuracy", "precision", "recall", "f1")}]),
    )


@app.command()
@reports_errors
def grid(
    ctx: typer.Context,
    manifest: Path = typer.Argument(..., help="Manifest CSV"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint"),
    train_first: bool = typer.Option(False, "--train", help="Train on the train split first"),
):
    """Evaluate the noise x intensity grid on the test split."""
    state = _state(ctx)
    data = read_manifest(manifest)
    if checkpoint is not None:
        model, digest = FusionModel.load(checkpoint), file_digest(checkpoint)
    elif train_first:
        model, _ = train_from_manifest(data, state.settings)
        digest = model.save(state.out / "model.afrg")
    else:
        raise ParameterError("grid needs --checkpoint or --train")
    report = run_grid(data, state.settings, model, digest)
    report.write(state.out)
    _print_table("Noise grid (mean over seeds)", report.table)


@app.command()
@reports_errors
def ablate(
    ctx: typer.Context,
    manifest: Path = typer.Argument(..., help="Manifest CSV"),
):
    """Train and compare the four model variants."""
    state = _state(ctx)
    report = run_ablation(read_manifest(manifest), state.settings)
    report.write(state.out)
    _print_table("Ablation", report.table)


@app.command()
@reports_errors
def explain(
    ctx: typer.Context,
    checkpoint: Path = typer.Argument(..., help="Model checkpoint"),
    audio: Path = typer.Argument(..., help="WAV file to explain"),
    method: str = typer.Option("scorecam", "--method", help="shap, scorecam, occlusion or counterfactual"),
    target: Optional[str] = typer.Option(None, "--target", help="Class to explain (default: predicted)"),
    exact: bool = typer.Option(True, "--exact/--sampled", help="Exact or permutation-sampled Shapley"),
    groups: int = typer.Option(10, "--groups", help="Frame groups for Shapley"),
    permutations: int = typer.Option(1000, "--permutations"),
    window: int = typer.Option(3, "--window", help="Occlusion window in frames"),
    stride: int = typer.Option(1, "--stride"),
    top_fraction: float = typer.Option(0.2, "--top-fraction"),
):
    """Explain one clip and write CSV, JSON and a (time, score) overlay."""
    state = _state(ctx)
    options = ExplainOptions(exact, groups, permutations, window, stride, top_fraction, state.seed)
    report = explain_cmd(checkpoint, audio, method, state.out, target, options)
    summary: Dict[str, Any] = report.summary
    console.print(f"{summary['method']}: target {summary['target']}, predicted {summary['predicted']}")
    if ExplainMethod(summary["method"]) is ExplainMethod.COUNTERFACTUAL:
        console.print(f"confidence {summary['before']:.4f} -> {summary['after']:.4f}")
    console.print(f"{report.csv_path}\n{report.json_path}\n{report.overlay_path}")


if __name__ == "__main__":
    app()
