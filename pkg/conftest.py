from pathlib import Path

import numpy as np
import pytest

from features import FeatureConfig, FeatureVector
from fusion_model import EmotionClass, TrainConfig, train
from signal_core import read_wav

FIXTURES = Path(__file__).parent / "fixtures"

# 6 frames x (2 + 5) descriptors = 42 values, the shortest layout the spectral branch accepts
TINY_FEATURES = FeatureConfig(frame_length=256, hop=128, num_mel=10, num_mfcc=5, target_frames=6, sample_rate=16000)
TINY_TRAIN = TrainConfig(
    epochs=50,
    batch_size=8,
    learning_rate=3e-3,
    width_scale=1 / 64,
    hidden_width=6,
    attention_width=5,
    head_width=8,
    seed=0,
)


def toy_dataset(config=TINY_FEATURES, per_class=40, classes=(EmotionClass.HAPPY, EmotionClass.SAD), seed=0,
                separation=2.0):
    """Linearly separable vectors: class c is centred on +/- separation in every coordinate."""
    rng = np.random.default_rng(seed)
    signs = np.linspace(-1.0, 1.0, len(classes))
    data = []
    for sign, label in zip(signs, classes):
        for _ in range(per_class):
            values = sign * separation + 0.3 * rng.standard_normal(config.vector_length)
            data.append((FeatureVector(values, config), label))
    return data


@pytest.fixture
def sine():
    return read_wav(FIXTURES / "sine440_16k.wav")


@pytest.fixture
def chirp():
    return read_wav(FIXTURES / "chirp_16k.wav")


@pytest.fixture
def burst():
    return read_wav(FIXTURES / "burst_16k.wav")


@pytest.fixture
def tiny_features():
    return TINY_FEATURES


@pytest.fixture
def tiny_train():
    return TINY_TRAIN


@pytest.fixture(scope="session")
def trained_toy():
    """A full-variant model trained on the separable toy set, plus that set."""
    data = toy_dataset()
    model, history = train(data, TINY_TRAIN)
    return model, history, data
