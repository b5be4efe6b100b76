import numpy as np
import pytest
import soundfile as sf

from errors import ParameterError, UnsupportedAudioError, WavFormatError
from signal_core import FrameGrid, Waveform, fit_duration, frames, peak, read_wav, write_wav


def test_read_fixture_sine(sine):
    assert len(sine) == 16000
    assert sine.sample_rate == 16000
    assert abs(peak(sine) - 0.5) <= 1 / 32768


def test_read_scales_pcm_extremes(tmp_path):
    path = tmp_path / "extremes.wav"
    sf.write(str(path), np.array([0, -32768, 16384], dtype=np.int16), 16000, subtype="PCM_16")
    w = read_wav(path)
    np.testing.assert_array_equal(w.samples, [0.0, -1.0, 0.5])


def test_read_averages_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    pcm = np.array([[16384, 0], [-16384, -16384]], dtype=np.int16)
    sf.write(str(path), pcm, 16000, subtype="PCM_16")
    np.testing.assert_array_equal(read_wav(path).samples, [0.25, -0.5])


def test_write_read_silence(tmp_path):
    path = tmp_path / "silence.wav"
    write_wav(Waveform(np.zeros(100)), path)
    w = read_wav(path)
    assert len(w) == 100
    assert np.all(w.samples == 0.0)


def test_write_read_sine_within_quantization(tmp_path):
    t = np.arange(4000) / 16000
    original = Waveform(0.5 * np.sin(2 * np.pi * 440 * t))
    path = tmp_path / "sine.wav"
    write_wav(original, path)
    assert np.max(np.abs(read_wav(path).samples - original.samples)) < 1 / 32768


def test_write_read_full_scale_alternation(tmp_path):
    original = Waveform(np.tile([1.0, -1.0], 50))
    path = tmp_path / "alt.wav"
    write_wav(original, path)
    assert np.max(np.abs(read_wav(path).samples - original.samples)) <= 1 / 32768


def test_write_clamps_out_of_range(tmp_path):
    path = tmp_path / "loud.wav"
    write_wav(Waveform([2.0, -3.0, 0.0]), path)
    w = read_wav(path)
    assert w.samples[0] == 32767 / 32768
    assert w.samples[1] == -1.0


def test_read_missing_file(tmp_path):
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "nope.wav")


def test_read_malformed_header(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"RIFX this is not a wave file at all")
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_read_rejects_float_encoding(tmp_path):
    path = tmp_path / "float.wav"
    sf.write(str(path), np.zeros(10, dtype=np.float32), 16000, subtype="FLOAT")
    with pytest.raises(UnsupportedAudioError):
        read_wav(path)


def test_read_rejects_rate_mismatch(tmp_path):
    path = tmp_path / "8k.wav"
    sf.write(str(path), np.zeros(10, dtype=np.int16), 8000, subtype="PCM_16")
    with pytest.raises(ParameterError):
        read_wav(path, expected_rate=16000)
    assert read_wav(path).sample_rate == 8000


def test_waveform_rejects_non_finite():
    with pytest.raises(ParameterError):
        Waveform([0.0, np.nan])


def test_waveform_samples_are_read_only():
    w = Waveform(np.zeros(4))
    with pytest.raises(ValueError):
        w.samples[0] = 1.0


def test_peak():
    assert peak(Waveform([0.1, -0.4, 0.2])) == 0.4
    assert peak(Waveform(np.zeros(5))) == 0.0
    assert peak(np.array([])) == 0.0


@pytest.mark.parametrize("length,expected", [(2048, 1), (4096, 5), (4095, 4), (1000, 1)])
def test_frame_counts(length, expected):
    f = frames(Waveform(np.ones(length)), 2048, 512)
    assert f.shape == (expected, 2048)


def test_short_signal_is_zero_padded():
    f = frames(Waveform(np.ones(1000)), 2048, 512)
    assert np.all(f[0, :1000] == 1.0)
    assert np.all(f[0, 1000:] == 0.0)


def test_frame_contents_are_left_aligned():
    w = Waveform(np.arange(10.0))
    f = frames(w, 4, 2)
    np.testing.assert_array_equal(f[:, 0], [0, 2, 4, 6])
    np.testing.assert_array_equal(f[-1], [6, 7, 8, 9])


@pytest.mark.parametrize("n,h", [(0, 1), (4, 0), (4, 5)])
def test_frames_rejects_bad_grid(n, h):
    with pytest.raises(ParameterError):
        frames(Waveform(np.ones(10)), n, h)


def test_frame_grid():
    grid = FrameGrid.for_length(4096, 2048, 512)
    assert grid.num_frames == 5
    assert grid.covered_samples == 4096
    np.testing.assert_array_equal(grid.starts(), [0, 512, 1024, 1536, 2048])


def test_fit_duration():
    w = Waveform(np.arange(10.0))
    np.testing.assert_array_equal(fit_duration(w, 4).samples, [0, 1, 2, 3])

    short = Waveform([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(fit_duration(short, 10).samples, [1, 2, 3, 4, 0, 0, 0, 0, 0, 0])

    assert fit_duration(w, 10) is w

    with pytest.raises(ParameterError):
        fit_duration(w, 0)
