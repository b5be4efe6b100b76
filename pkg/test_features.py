import math

import numpy as np
import pytest

from errors import BoundsError, ParameterError
from features import (
    Descriptor,
    FeatureConfig,
    FeatureKind,
    FeatureVector,
    block_groups,
    extract,
    frame_descriptors,
    frame_descriptors_backward,
    frame_groups,
    index_of,
    map_index,
    mel_center_frequencies,
    mel_edge_bins,
    mel_filterbank,
    mfcc,
    rmse,
    stft_power,
    zcr,
)
from signal_core import Waveform

DEFAULT = FeatureConfig()
TEN_FRAMES = FeatureConfig(target_frames=10)


def _reference_mfcc(frame, n_fft, sample_rate, num_mel, num_mfcc):
    """Straight transcription of the textbook pipeline with explicit loops and an explicit DFT."""
    n = np.arange(n_fft)
    window = 0.5 - 0.5 * np.cos(2 * math.pi * n / n_fft)
    k = np.arange(n_fft // 2 + 1)[:, None]
    dft = np.exp(-2j * math.pi * k * n[None, :] / n_fft)
    power = np.abs(dft @ (frame * window)) ** 2

    top_mel = 2595.0 * math.log10(1.0 + (sample_rate / 2) / 700.0)
    points = []
    for j in range(num_mel + 2):
        hz = 700.0 * (10 ** ((top_mel * j / (num_mel + 1)) / 2595.0) - 1.0)
        points.append(int(math.floor((n_fft + 1) * hz / sample_rate)))
    energies = np.zeros(num_mel)
    for m in range(1, num_mel + 1):
        lo, mid, hi = points[m - 1], points[m], points[m + 1]
        for b in range(lo, mid):
            energies[m - 1] += (b - lo) / (mid - lo) * power[b]
        for b in range(mid, hi):
            energies[m - 1] += (hi - b) / (hi - mid) * power[b]
    logs = np.log(np.maximum(energies, 1e-10))

    coeffs = np.zeros(num_mfcc)
    for c in range(num_mfcc):
        scale = math.sqrt(1.0 / num_mel) if c == 0 else math.sqrt(2.0 / num_mel)
        coeffs[c] = scale * sum(logs[m] * math.cos(math.pi * c * (2 * m + 1) / (2 * num_mel)) for m in range(num_mel))
    return coeffs


def test_zcr_examples():
    assert zcr(np.full(64, 0.3)) == 0.0
    assert zcr(np.zeros(64)) == 0.0
    assert zcr(np.tile([1.0, -1.0], 32)) == 1.0
    assert zcr(np.array([1.0, 1.0, -1.0, -1.0])) == pytest.approx(1 / 3)


def test_zcr_stacks_frames():
    stacked = np.stack([np.ones(8), np.tile([1.0, -1.0], 4)])
    np.testing.assert_array_equal(zcr(stacked), [0.0, 1.0])


def test_rmse_examples():
    assert rmse(np.zeros(16)) == 0.0
    assert rmse(np.full(16, -0.7)) == pytest.approx(0.7)
    assert rmse(np.array([3.0, 4.0])) == pytest.approx(3.5355, abs=1e-4)


def test_stft_zero_frame():
    assert np.all(stft_power(np.zeros(256)) == 0.0)


def test_stft_bin_aligned_tone_rectangular():
    n = np.arange(256)
    power = stft_power(np.cos(2 * np.pi * 64 * n / 256), window=np.ones(256))
    assert power[64] / power.sum() > 0.99


def test_stft_parseval():
    rng = np.random.default_rng(0)
    frame = rng.standard_normal(512)
    power = stft_power(frame)
    windowed = frame * np.hanning(513)[:-1]
    full = power[0] + 2 * power[1:-1].sum() + power[-1]
    assert full / 512 == pytest.approx(np.sum(windowed ** 2), rel=1e-9)


def test_stft_rejects_non_power_of_two():
    with pytest.raises(ParameterError):
        stft_power(np.zeros(300))


def test_filterbank_shape_and_sign():
    fb = mel_filterbank(DEFAULT)
    assert fb.shape == (40, 1025)
    assert np.all(fb >= 0.0)


def test_filterbank_triangles_peak_at_centres():
    fb = mel_filterbank(DEFAULT)
    bins = mel_edge_bins(DEFAULT)
    centres = bins[1:-1]
    for m in range(DEFAULT.num_mel):
        assert fb[m, centres[m]] == 1.0
        assert fb[m, bins[m]] == 0.0
        assert fb[m, bins[m + 2]] == 0.0


def test_mel_centres_increase_inside_band():
    centres = mel_center_frequencies(DEFAULT)
    assert np.all(np.diff(centres) > 0)
    assert centres[0] > 0.0
    assert centres[-1] < 8000.0


def test_filterbank_is_shared_read_only():
    fb = mel_filterbank(DEFAULT)
    assert mel_filterbank(FeatureConfig()) is fb
    with pytest.raises(ValueError):
        fb[0, 0] = 2.0


def test_mfcc_of_silence():
    coeffs = mfcc(np.zeros(2048), DEFAULT)
    assert coeffs.shape == (40,)
    assert coeffs[0] == pytest.approx(math.sqrt(40) * math.log(1e-10))
    assert np.max(np.abs(coeffs[1:])) < 1e-9


def test_mfcc_gain_moves_only_c0():
    frame = np.random.default_rng(1).uniform(-0.5, 0.5, 2048)
    base, louder = mfcc(frame, DEFAULT), mfcc(2.0 * frame, DEFAULT)
    assert louder[0] - base[0] == pytest.approx(math.sqrt(40) * math.log(4.0))
    assert np.max(np.abs(louder[1:] - base[1:])) < 1e-9


@pytest.mark.parametrize("fixture,start", [("sine", 4096), ("chirp", 8192), ("burst", 20000)])
def test_mfcc_matches_reference(fixture, start, request):
    w = request.getfixturevalue(fixture)
    frame = w.samples[start:start + 2048]
    expected = _reference_mfcc(frame, 2048, 16000, 40, 40)
    np.testing.assert_allclose(mfcc(frame, DEFAULT), expected, atol=1e-3)


def test_extract_layout(sine):
    fv = extract(sine, TEN_FRAMES)
    assert len(fv) == 420
    assert fv.mfcc_block.shape == (10, 40)
    assert fv.framed().shape == (10, 42)


def test_extract_silence():
    fv = extract(Waveform(np.zeros(16000)), TEN_FRAMES)
    assert np.all(fv.zcr_block == 0.0)
    assert np.all(fv.rmse_block == 0.0)


def test_extract_sine_energy(sine):
    fv = extract(sine, TEN_FRAMES)
    np.testing.assert_allclose(fv.rmse_block, 0.5 / math.sqrt(2), atol=2e-3)


def test_extract_fits_duration():
    short, long = Waveform(np.ones(1000)), Waveform(np.ones(50_000))
    assert len(extract(short, TEN_FRAMES)) == len(extract(long, TEN_FRAMES)) == 420


def test_extract_rejects_other_rates():
    with pytest.raises(ParameterError):
        extract(Waveform(np.zeros(8000), sample_rate=8000), TEN_FRAMES)


def test_map_index_examples():
    assert map_index(0, TEN_FRAMES) == FeatureKind(Descriptor.ZCR, 0)
    assert map_index(10, TEN_FRAMES) == FeatureKind(Descriptor.RMSE, 0)
    assert map_index(2 * 10 + 85, TEN_FRAMES) == FeatureKind(Descriptor.MFCC, 2, 5)
    assert map_index(2 * 10 + 85, TEN_FRAMES).label == "MFCC5@t2"


def test_map_index_round_trip():
    for i in range(TEN_FRAMES.vector_length):
        assert index_of(map_index(i, TEN_FRAMES), TEN_FRAMES) == i


@pytest.mark.parametrize("i", [-1, 420])
def test_map_index_bounds(i):
    with pytest.raises(BoundsError):
        map_index(i, TEN_FRAMES)


def test_feature_config_validation():
    with pytest.raises(ParameterError):
        FeatureConfig(frame_length=1000)
    with pytest.raises(ParameterError):
        FeatureConfig(hop=4096)
    with pytest.raises(ParameterError):
        FeatureConfig(num_mel=20, num_mfcc=30)
    assert FeatureConfig.for_duration(3.0).target_frames == 90


def test_feature_vector_length_checked():
    with pytest.raises(ParameterError):
        FeatureVector(np.zeros(10), TEN_FRAMES)


def test_frame_descriptors_round_trip():
    values = np.random.default_rng(0).standard_normal((3, TEN_FRAMES.vector_length))
    framed = frame_descriptors(values, TEN_FRAMES)
    assert framed.shape == (3, 10, 42)
    np.testing.assert_array_equal(framed[:, 4, 1], values[:, 14])
    np.testing.assert_array_equal(frame_descriptors_backward(framed, TEN_FRAMES), values)


def test_frame_groups_partition():
    groups = frame_groups(TEN_FRAMES, 4)
    combined = np.sort(np.concatenate(groups))
    np.testing.assert_array_equal(combined, np.arange(420))
    # a group owns every descriptor of its frames
    assert len(groups[0]) == 3 * 42
    assert len(frame_groups(TEN_FRAMES)) == 10
    with pytest.raises(ParameterError):
        frame_groups(TEN_FRAMES, 11)


def test_block_groups():
    zcr_idx, rmse_idx, mfcc_idx = block_groups(TEN_FRAMES)
    assert len(zcr_idx) == len(rmse_idx) == 10
    assert len(mfcc_idx) == 400
