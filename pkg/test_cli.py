import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from cli import app
from conftest import FIXTURES

runner = CliRunner()

SMALL_CONFIG = """\
frame_length=512
hop=512
num_mel=10
num_mfcc=5
target_frames=31
epochs=2
batch_size=8
width_scale=0.015625
hidden_width=6
attention_width=5
head_width=8
noises=white
intensities=0,0.5
repeats=2
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text(SMALL_CONFIG)
    return path


def invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def test_synth_noise_writes_a_clip(tmp_path):
    out = tmp_path / "pink.wav"
    result = invoke("--seed", 1, "synth-noise", "pink", "-o", out, "--duration", 1)
    assert result.exit_code == 0, result.output
    assert out.is_file()
    assert "pink" in result.output


def test_unknown_noise_color_is_a_usage_error(tmp_path):
    result = invoke("synth-noise", "purple", "-o", tmp_path / "x.wav")
    assert result.exit_code == 2


def test_inject_and_features(tmp_path, config_file):
    noisy = tmp_path / "noisy.wav"
    result = invoke("--config", config_file, "--out", tmp_path, "inject", FIXTURES / "sine440_16k.wav", "white",
                    "-o", noisy, "--mode", "discrete", "--level", 0.25)
    assert result.exit_code == 0, result.output
    result = invoke("--config", config_file, "--out", tmp_path, "features", noisy)
    assert result.exit_code == 0, result.output
    table = pd.read_csv(tmp_path / "noisy_features.csv")
    assert len(table) == 31 * 7
    assert set(table["kind"]) == {"zcr", "rmse", "mfcc"}


def test_discrete_level_outside_the_set_exits_2(tmp_path):
    result = invoke("inject", FIXTURES / "sine440_16k.wav", "white", "-o", tmp_path / "x.wav",
                    "--mode", "discrete", "--level", 0.3)
    assert result.exit_code == 2


def test_augment_writes_four_members(tmp_path):
    result = invoke("--out", tmp_path, "augment", FIXTURES / "sine440_16k.wav", "--label", "happy")
    assert result.exit_code == 0, result.output
    assert len(list(tmp_path.glob("sine440_16k_*.wav"))) == 4


@pytest.fixture
def corpus_manifest(tmp_path):
    result = invoke("--out", tmp_path, "gen-fixtures", tmp_path / "corpus", "--per-class", 2, "--duration", 1)
    assert result.exit_code == 0, result.output
    return tmp_path / "corpus" / "manifest.csv"


def test_augment_manifest(tmp_path, corpus_manifest):
    out_dir = tmp_path / "augmented"
    result = invoke("--seed", 4, "augment", "--manifest", corpus_manifest, "--out-dir", out_dir)
    assert result.exit_code == 0, result.output
    source = pd.read_csv(corpus_manifest, keep_default_na=False)
    augmented = pd.read_csv(out_dir / "augmented.csv", keep_default_na=False)
    assert len(source) == 14
    assert len(augmented) == 4 * len(source)
    assert len(list(out_dir.glob("*.wav"))) == 4 * len(source)
    assert list(augmented["label"][:4]) == [source["label"][0]] * 4
    assert list(augmented["split"]) == [s for s in source["split"] for _ in range(4)]
    assert (out_dir / "happy_000_pitched_noisy.wav").is_file()


def test_augment_needs_a_clip_or_a_manifest(tmp_path, corpus_manifest):
    assert invoke("--out", tmp_path, "augment").exit_code == 2
    assert invoke("--out", tmp_path, "augment", FIXTURES / "sine440_16k.wav").exit_code == 2
    assert invoke("--out", tmp_path, "augment", FIXTURES / "sine440_16k.wav", "--manifest",
                  corpus_manifest).exit_code == 2


def test_features_manifest(tmp_path, config_file, corpus_manifest):
    out = tmp_path / "features.csv"
    result = invoke("--config", config_file, "features", "--manifest", corpus_manifest, "--out", out)
    assert result.exit_code == 0, result.output
    header = out.read_text().splitlines()[0]
    assert header.startswith("# ")
    assert "target_frames=31" in header and "num_mfcc=5" in header and "sample_rate=16000" in header
    table = pd.read_csv(out, skiprows=1)
    assert len(table) == 14
    assert table.shape[1] == 31 * 7 + 2
    assert list(table.columns[:4]) == ["path", "label", "ZCR@t0", "ZCR@t1"]
    assert table.columns[-1] == "MFCC4@t30"
    assert set(table["label"]) == {"happy", "angry", "fear", "sad", "surprised", "disgust", "neutral"}


def test_train_eval_explain(tmp_path, config_file):
    corpus = tmp_path / "corpus"
    result = invoke("--out", tmp_path, "gen-fixtures", corpus, "--per-class", 3, "--duration", 1)
    assert result.exit_code == 0, result.output
    manifest = corpus / "manifest.csv"

    result = invoke("--config", config_file, "--out", tmp_path, "train", manifest)
    assert result.exit_code == 0, result.output
    checkpoint = tmp_path / "model.afrg"
    assert checkpoint.is_file()
    history = json.loads((tmp_path / "history.json").read_text())
    assert len(history["epochs"]) == 2

    result = invoke("--config", config_file, "--out", tmp_path, "eval", manifest, "--checkpoint", checkpoint)
    assert result.exit_code == 0, result.output
    assert "accuracy" in json.loads((tmp_path / "eval_test.json").read_text())

    result = invoke("--config", config_file, "--out", tmp_path, "grid", manifest, "--checkpoint", checkpoint)
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(tmp_path / "grid.csv")) == 2

    result = invoke("--out", tmp_path, "explain", checkpoint, corpus / "sad_000.wav", "--method", "counterfactual")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "sad_000_counterfactual_overlay.txt").is_file()

    result = invoke("--out", tmp_path, "explain", checkpoint, corpus / "sad_000.wav", "--method", "shap",
                    "--groups", 30)
    assert result.exit_code == 2


def test_exit_codes(tmp_path, config_file):
    assert invoke("--out", tmp_path, "explain", tmp_path / "none.afrg", FIXTURES / "sine440_16k.wav",
                  "--method", "lime").exit_code == 2
    assert invoke("--out", tmp_path, "explain", tmp_path / "none.afrg", FIXTURES / "sine440_16k.wav").exit_code == 3
    assert invoke("--out", tmp_path, "eval", tmp_path / "missing.csv", "--checkpoint", "x.afrg").exit_code == 3
    assert invoke("--config", config_file, "--out", tmp_path, "grid", tmp_path / "missing.csv").exit_code == 3

    bad = tmp_path / "bad.conf"
    bad.write_text("learning_rat=0.1\n")
    assert invoke("--config", bad, "synth-noise", "white", "-o", tmp_path / "w.wav").exit_code == 2


def test_grid_needs_a_model(tmp_path, config_file):
    invoke("--out", tmp_path, "gen-fixtures", tmp_path / "corpus", "--per-class", 2, "--duration", 1)
    result = invoke("--config", config_file, "--out", tmp_path, "grid", tmp_path / "corpus" / "manifest.csv")
    assert result.exit_code == 2
