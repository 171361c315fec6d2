import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from echolab import dsp

P = dsp.DEFAULT_PARAMS


def test_frame_parameters():
    assert P.bins == 257
    assert P.frame_rate == pytest.approx(16000 / 212)
    assert P.n_frames(424) == 1
    assert P.n_frames(424 + 212 * 9) == 10
    assert P.n_samples(10) == 424 + 212 * 9


def test_feature_length_must_cover_bins():
    with pytest.raises(ValueError):
        dsp.FrameParams(feature_len=256)


def test_squared_window_sums_to_one():
    w2 = dsp.sqrt_hann(424) ** 2
    assert np.allclose(w2[:212] + w2[212:], 1.0, atol=1e-15)


def test_too_short_signal():
    with pytest.raises(dsp.SignalTooShortError):
        dsp.frame_signal(np.zeros(100))


def test_analysis_matches_direct_dft(rng):
    x = rng.standard_normal(424 + 212)
    spec = dsp.analyze(x)
    frame = np.zeros(512)
    frame[:424] = x[212 : 212 + 424] * dsp.sqrt_hann(424)
    k = np.arange(257)
    direct = np.exp(-2j * np.pi * np.outer(k, np.arange(512)) / 512) @ frame
    assert np.allclose(spec[1], direct, atol=1e-10)


@given(n=st.integers(500, 5000), seed=st.integers(0, 2**31))
def test_round_trip_interior(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    padded, head = dsp.pad_for_processing(x)
    out = dsp.synthesize(dsp.analyze(padded))
    assert np.max(np.abs(out[head : head + n] - x)) < 1e-10


def test_interior_slice_covers_padded_signal(rng):
    x = rng.standard_normal(3000)
    padded, head = dsp.pad_for_processing(x)
    frames = P.n_frames(padded.shape[-1])
    sl = dsp.interior_slice(frames)
    assert sl.start <= head and head + 3000 <= sl.stop


def test_synthesize_rejects_bad_bins():
    with pytest.raises(ValueError):
        dsp.synthesize(np.zeros((3, 200), dtype=complex))


def test_mask_gain_epsilon_rule():
    assert dsp.mask_gain(np.array([0.0 + 0j]))[0] == 0
    assert dsp.mask_gain(np.array([1e-13 + 0j]))[0] == 0


@given(
    re=arrays(float, 32, elements=st.floats(-1e3, 1e3)),
    im=arrays(float, 32, elements=st.floats(-1e3, 1e3)),
)
def test_mask_gain_tanh_bound_and_phase(re, im):
    m = re + 1j * im
    g = dsp.mask_gain(m)
    assert np.all(np.abs(g) <= np.tanh(np.abs(m)) + 1e-12)
    assert np.all(np.abs(g) < 1.0 + 1e-15)
    big = np.abs(m) > 1e-6
    assert np.allclose(np.angle(g[big] / m[big]), 0.0, atol=1e-9)


def test_apply_mask_shape_check():
    with pytest.raises(ValueError):
        dsp.apply_mask(np.ones((2, 257)), np.ones((2, 256)))


def test_compression():
    z = np.array([4.0 + 0j, -8j, 0j])
    c = dsp.compress_input(z, 0.5)
    assert np.allclose(c, [2.0, -np.sqrt(8) * 1j, 0.0])
    with pytest.raises(ValueError):
        dsp.compress_input(z, 0.0)


def test_feature_layout(rng):
    X = rng.standard_normal((5, 257)) + 1j * rng.standard_normal((5, 257))
    Y = rng.standard_normal((5, 257)) + 1j * rng.standard_normal((5, 257))
    f = dsp.assemble_features(X, Y)
    assert f.shape == (5, 264, 4)
    assert np.array_equal(f[:, :257, 0], Y.real) and np.array_equal(f[:, :257, 3], X.imag)
    assert not f[:, 257:].any()
    fc = dsp.assemble_features(X, Y, compressed=True)
    assert np.allclose(np.hypot(fc[:, :257, 0], fc[:, :257, 1]), np.abs(Y) ** 0.3)


def test_crop_mask():
    out = np.zeros((3, 264, 2))
    out[..., 0] = 1.0
    out[..., 1] = 2.0
    m = dsp.crop_mask(out)
    assert m.shape == (3, 257) and np.all(m == 1 + 2j)


def test_wav_round_trip(tmp_path, rng):
    x = 0.5 * rng.uniform(-1, 1, 1000)
    dsp.write_wav(tmp_path / "a.wav", x)
    back = dsp.read_wav(tmp_path / "a.wav")
    assert np.max(np.abs(back - x)) <= 0.5 / 32768 + 1e-12
