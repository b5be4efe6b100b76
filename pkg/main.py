from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from mcp.server.fastmcp import FastMCP
from mcp.shared.exceptions import McpError
from mcp.types import (
    ErrorData,
    INTERNAL_ERROR,
    INVALID_PARAMS,
)

from config import CHECKPOINT, OUT_DIR, SAMPLE_RATE
from corruption import MixMode, NoiseSpec, corrupt
from errors import AffectForgeException, ParameterError, UsageError
from experiments import ExplainOptions, explain_cmd, noise_source
from features import FeatureConfig, extract, map_index
from fusion_model import EmotionClass, FusionModel
from noise_synth import WELCH_SEGMENT, NoiseColor, colored_noise, psd_slope
from signal_core import read_wav, write_wav

# Initialize FastMCP server
mcp = FastMCP("affectforge")

# Loaded checkpoints, keyed by path
_models: Dict[str, FusionModel] = {}


def _tool_error(e: AffectForgeException) -> McpError:
    # Bad arguments are the caller's problem, everything else is ours
    code = INVALID_PARAMS if isinstance(e, UsageError) else INTERNAL_ERROR
    return McpError(ErrorData(code=code, message=str(e)))


def _model(checkpoint: Optional[str]) -> FusionModel:
    path = checkpoint or CHECKPOINT
    if not path:
        raise ParameterError("No checkpoint given and AFFECTFORGE_CHECKPOINT is not set")
    if path not in _models:
        _models[path] = FusionModel.load(path)
    return _models[path]


@mcp.tool()
def synthesize_noise(color: str, duration: float = 5.0, seed: int = 0) -> Dict[str, Any]:
    """
    Synthesize white, pink or brown noise and save it as a WAV file.

    Args:
        color: Noise colour: white, pink or brown
        duration: Length in seconds (default: 5.0)
        seed: Random seed; the same seed gives the same noise

    Returns:
        The output path, sample count and fitted spectral exponent
    """
    try:
        try:
            noise_color = NoiseColor(color.lower())
        except ValueError:
            raise ParameterError(f"Unknown noise colour {color!r}; use white, pink or brown")
        w = colored_noise(noise_color, int(round(duration * SAMPLE_RATE)), seed, SAMPLE_RATE)
        path = Path(OUT_DIR) / f"noise_{noise_color.value}_{seed}.wav"
        write_wav(w, path)
        exponent = psd_slope(w) if len(w) >= 16 * WELCH_SEGMENT else None
        return {"path": str(path), "samples": len(w), "sample_rate": w.sample_rate, "psd_exponent": exponent}
    except AffectForgeException as e:
        raise _tool_error(e)


@mcp.tool()
def inject_noise(
    speech_path: str, noise: str = "white", mode: str = "stochastic", level: Optional[float] = None, seed: int = 0
) -> Dict[str, Any]:
    """
    Corrupt a clean 16-bit WAV with noise.

    Args:
        speech_path: Clean WAV file
        noise: Noise colour (white, pink, brown) or the path of a noise WAV
        mode: "stochastic" (peak-relative lambda) or "discrete" (alpha in 0.25, 0.5, 0.75)
        level: Lambda or alpha; in stochastic mode a missing lambda is drawn from U[0, 0.75]
        seed: Random seed

    Returns:
        The output path and the applied mixing level
    """
    try:
        try:
            mix_mode = MixMode(mode.lower())
        except ValueError:
            raise ParameterError(f"Unknown mixing mode {mode!r}; use stochastic or discrete")
        s = read_wav(speech_path, expected_rate=SAMPLE_RATE)
        if mix_mode is MixMode.DISCRETE:
            spec = NoiseSpec(noise_source(noise, SAMPLE_RATE), mix_mode, alpha=level, seed=seed)
        else:
            spec = NoiseSpec(noise_source(noise, SAMPLE_RATE), mix_mode, lam=level, seed=seed)
        mixed, report = corrupt(s, spec)
        path = Path(OUT_DIR) / f"{Path(speech_path).stem}_{spec.label}_{mix_mode.value}_{seed}.wav"
        write_wav(mixed, path)
        return {
            "path": str(path),
            "mode": mix_mode.value,
            "level": report.lambda_or_alpha,
            "noise_amplitude": report.noise_peak_applied,
            "samples": report.aligned_len,
        }
    except AffectForgeException as e:
        raise _tool_error(e)


@mcp.tool()
def extract_features(audio_path: str, checkpoint: Optional[str] = None) -> Dict[str, Any]:
    """
    Extract per-frame ZCR, RMSE and MFCC descriptors from a WAV file.

    Args:
        audio_path: 16-bit PCM WAV file
        checkpoint: Use this model's feature layout instead of the default

    Returns:
        Layout and per-frame descriptor rows [zcr, rmse, mfcc_0..]
    """
    try:
        config = _model(checkpoint).feature_config if (checkpoint or CHECKPOINT) else FeatureConfig()
        fv = extract(read_wav(audio_path, expected_rate=config.sample_rate), config)
        return {
            "length": len(fv),
            "frames": config.target_frames,
            "frame_width": config.frame_width,
            "frame_times": config.frame_times().round(4).tolist(),
            "rows": np.round(fv.framed(), 6).tolist(),
        }
    except AffectForgeException as e:
        raise _tool_error(e)


@mcp.tool()
def describe_feature_index(index: int, target_frames: int = 90, num_mfcc: int = 40) -> Dict[str, Any]:
    """
    Name the descriptor behind a feature-vector index.

    Args:
        index: Position in the serialized vector
        target_frames: Frames per vector (default: 90)
        num_mfcc: Cepstral coefficients per frame (default: 40)

    Returns:
        Descriptor kind, frame, coefficient and label
    """
    try:
        config = FeatureConfig(num_mel=max(40, num_mfcc), num_mfcc=num_mfcc, target_frames=target_frames)
        kind = map_index(index, config)
        return {"index": index, "kind": kind.kind.value, "frame": kind.frame, "coeff": kind.coeff, "label": kind.label}
    except AffectForgeException as e:
        raise _tool_error(e)


@mcp.tool()
def classify_audio(audio_path: str, checkpoint: Optional[str] = None) -> Dict[str, Any]:
    """
    Classify the emotion of a WAV file with a trained checkpoint.

    Args:
        audio_path: 16-bit PCM WAV file
        checkpoint: Model checkpoint (defaults to AFFECTFORGE_CHECKPOINT)

    Returns:
        Predicted class and the probability of every class
    """
    try:
        model = _model(checkpoint)
        fv = extract(read_wav(audio_path, expected_rate=model.feature_config.sample_rate), model.feature_config)
        probs = model.predict_proba([fv])[0]
        return {
            "predicted": EmotionClass(int(np.argmax(probs))).name,
            "probabilities": {c.name: float(probs[c]) for c in EmotionClass},
        }
    except AffectForgeException as e:
        raise _tool_error(e)


@mcp.tool()
def explain_audio(
    audio_path: str,
    method: str = "scorecam",
    target: Optional[str] = None,
    checkpoint: Optional[str] = None,
    groups: int = 10,
) -> Dict[str, Any]:
    """
    Explain a classification with shap, scorecam, occlusion or counterfactual masking.

    Args:
        audio_path: 16-bit PCM WAV file
        method: Explanation method (default: scorecam)
        target: Emotion to explain (default: the predicted one)
        checkpoint: Model checkpoint (defaults to AFFECTFORGE_CHECKPOINT)
        groups: Frame groups for exact Shapley (at most 20)

    Returns:
        Summary of the explanation and the paths of its CSV, JSON and overlay files
    """
    try:
        path = checkpoint or CHECKPOINT
        if not path:
            raise ParameterError("No checkpoint given and AFFECTFORGE_CHECKPOINT is not set")
        report = explain_cmd(path, audio_path, method, Path(OUT_DIR), target, ExplainOptions(groups=groups))
        return {
            **report.summary,
            "csv": str(report.csv_path),
            "json": str(report.json_path),
            "overlay": str(report.overlay_path),
        }
    except AffectForgeException as e:
        raise _tool_error(e)


def main():
    # Initialize and run the server
    mcp.run(transport="stdio")


if __name__ == "__main__":
    main()
