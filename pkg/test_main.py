import pytest
from mcp.shared.exceptions import McpError
from mcp.types import INTERNAL_ERROR, INVALID_PARAMS

import main
from conftest import FIXTURES
from fusion_model import EmotionClass
from signal_core import read_wav

SINE = str(FIXTURES / "sine440_16k.wav")


@pytest.fixture(autouse=True)
def isolated_server(tmp_path, monkeypatch):
    monkeypatch.setattr(main, "OUT_DIR", str(tmp_path))
    monkeypatch.setattr(main, "CHECKPOINT", None)
    monkeypatch.setattr(main, "_models", {})


@pytest.fixture
def toy_checkpoint(trained_toy, tmp_path):
    model, _, _ = trained_toy
    path = tmp_path / "toy.afrg"
    model.save(path)
    return str(path)


def test_describe_feature_index():
    result = main.describe_feature_index(2 * 10 + 2 * 40 + 5, target_frames=10)
    assert result["kind"] == "mfcc"
    assert (result["frame"], result["coeff"]) == (2, 5)
    assert result["label"] == "MFCC5@t2"
    assert main.describe_feature_index(13, target_frames=10)["kind"] == "rmse"


def test_describe_feature_index_out_of_range():
    with pytest.raises(McpError) as excinfo:
        main.describe_feature_index(10 * 42, target_frames=10)
    assert excinfo.value.error.code == INVALID_PARAMS


def test_synthesize_noise(tmp_path):
    result = main.synthesize_noise("Brown", duration=1.0, seed=4)
    assert result["path"] == str(tmp_path / "noise_brown_4.wav")
    assert len(read_wav(result["path"])) == 16000
    assert result["psd_exponent"] is None

    with pytest.raises(McpError) as excinfo:
        main.synthesize_noise("purple")
    assert excinfo.value.error.code == INVALID_PARAMS


def test_inject_noise(tmp_path):
    result = main.inject_noise(SINE, "pink", "discrete", 0.5, seed=2)
    assert result["level"] == 0.5
    assert result["samples"] == 16000
    assert read_wav(result["path"]).sample_rate == 16000

    with pytest.raises(McpError) as excinfo:
        main.inject_noise(SINE, mode="loud")
    assert excinfo.value.error.code == INVALID_PARAMS


def test_missing_audio_is_an_internal_error(tmp_path):
    with pytest.raises(McpError) as excinfo:
        main.inject_noise(str(tmp_path / "nothing.wav"))
    assert excinfo.value.error.code == INTERNAL_ERROR


def test_extract_features_uses_the_checkpoint_layout(toy_checkpoint):
    result = main.extract_features(SINE, checkpoint=toy_checkpoint)
    assert result["frames"] == 6
    assert len(result["rows"]) == 6
    assert len(result["rows"][0]) == result["frame_width"] == 7


def test_classify_needs_a_checkpoint():
    with pytest.raises(McpError) as excinfo:
        main.classify_audio(SINE)
    assert excinfo.value.error.code == INVALID_PARAMS


def test_classify_and_explain(toy_checkpoint, monkeypatch):
    monkeypatch.setattr(main, "CHECKPOINT", toy_checkpoint)
    result = main.classify_audio(SINE)
    assert result["predicted"] in {c.name for c in EmotionClass}
    assert sum(result["probabilities"].values()) == pytest.approx(1.0)

    explanation = main.explain_audio(SINE, method="shap", target="sad", groups=3)
    assert explanation["target"] == "SAD"
    assert explanation["estimator"] == "exact"

    with pytest.raises(McpError) as excinfo:
        main.explain_audio(SINE, method="gradcam")
    assert excinfo.value.error.code == INVALID_PARAMS
