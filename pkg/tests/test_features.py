import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillkit.errors import ConfigError, EmptyAfterVadError, FormatError, TooShortError
from distillkit.features import (
    FbankConfig,
    VadConfig,
    Waveform,
    apply_vad,
    compute_fbank,
    decode_archive,
    encode_archive,
    extract_features,
    mel_filterbank,
    read_archive,
    read_wav,
    sliding_cmn,
    write_archive,
)

F64 = FbankConfig(dtype="float64")


def brute_cmn(feats, w):
    T = feats.shape[0]
    w = min(w, T)
    out = np.empty_like(feats, dtype=np.float64)
    for t in range(T):
        start = min(max(t - w // 2, 0), T - w)
        out[t] = feats[t] - feats[start : start + w].mean(axis=0)
    return out


def test_one_second_gives_98_frames():
    feats = compute_fbank(Waveform(np.random.default_rng(0).standard_normal(16000), 16000))
    assert feats.shape == (98, 80)
    assert feats.dtype == np.float32


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(400, 6000),
    window_ms=st.sampled_from([20.0, 25.0, 32.0]),
    hop_ms=st.sampled_from([5.0, 10.0, 12.5]),
)
def test_frame_count_formula(n, window_ms, hop_ms):
    cfg = FbankConfig(window_ms=window_ms, hop_ms=hop_ms)
    win, hop = int(window_ms * 16), int(hop_ms * 16)
    if n < win:
        return
    feats = compute_fbank(Waveform(np.ones(n), 16000), cfg)
    assert feats.shape[0] == (n - win) // hop + 1


def test_zero_signal_hits_log_floor_times_filter_area():
    feats = compute_fbank(Waveform(np.zeros(8000), 16000), F64)
    area = mel_filterbank(80, 512, 16000, 20.0, 7600.0).sum(axis=1)
    np.testing.assert_allclose(feats, np.broadcast_to(np.log(1e-10 * area), feats.shape), rtol=0, atol=1e-9)


def test_fbank_is_deterministic():
    wav = Waveform(np.random.default_rng(1).standard_normal(12345) * 0.1, 16000)
    a, b = compute_fbank(wav), compute_fbank(wav)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("alpha", [1.5, 3.0, 10.0])
def test_scaling_shifts_log_energy_by_twice_log_alpha(alpha):
    x = np.random.default_rng(2).uniform(-1.0, 1.0, 16000)
    unfloored = FbankConfig(log_floor=0.0, dtype="float64")
    base = compute_fbank(Waveform(x, 16000), unfloored)
    scaled = compute_fbank(Waveform(alpha * x, 16000), unfloored)
    np.testing.assert_allclose(scaled - base, 2 * np.log(alpha), rtol=0, atol=1e-9)


@pytest.mark.parametrize("alpha", [1.5, 3.0, 10.0])
def test_scaling_with_floor_within_floor_bound(alpha):
    # ln(a^2 E + f) - ln(E + f) deviates from 2 ln a by less than f / E,
    # where f = floor * filter area
    x = np.random.default_rng(2).uniform(-1.0, 1.0, 16000)
    base = compute_fbank(Waveform(x, 16000), F64)
    scaled = compute_fbank(Waveform(alpha * x, 16000), F64)
    area = mel_filterbank(80, 512, 16000, 20.0, 7600.0).sum(axis=1)
    bound = 1e-10 * area / np.exp(base)
    assert np.all(np.abs(scaled - base - 2 * np.log(alpha)) <= bound + 1e-12)


def test_preemphasis_changes_output():
    x = np.random.default_rng(3).standard_normal(4000)
    plain = compute_fbank(Waveform(x, 16000), F64)
    emph = compute_fbank(Waveform(x, 16000), FbankConfig(preemphasis=0.97, dtype="float64"))
    assert not np.allclose(plain, emph)


def test_too_short_and_bad_rate():
    with pytest.raises(TooShortError):
        compute_fbank(Waveform(np.zeros(399), 16000))
    with pytest.raises(ConfigError):
        Waveform(np.zeros(400), 0)
    with pytest.raises(ConfigError):
        Waveform(np.zeros(400), -16000)


def test_vad_keeps_all_frames_of_constant_sine():
    t = np.arange(16000) / 16000
    wav = Waveform(0.5 * np.sin(2 * np.pi * 500 * t), 16000)
    feats = extract_features(wav, cmn_window_s=None)
    assert feats.shape == compute_fbank(wav).shape


def test_vad_rejects_digital_silence():
    wav = Waveform(np.zeros(16000), 16000)
    with pytest.raises(EmptyAfterVadError):
        extract_features(wav, vad_cfg=VadConfig(absolute_floor=-5.0))


def test_vad_threshold_example():
    feats = np.arange(100 * 80, dtype=np.float64).reshape(100, 80)
    energies = np.r_[np.full(50, 10.0), np.full(50, 10.0 - 50.0)]
    kept = apply_vad(feats, energies, VadConfig(dynamic_range=40.0, absolute_floor=-100.0))
    np.testing.assert_array_equal(kept, feats[:50])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 10), min_size=1, max_size=60))
def test_vad_output_is_ordered_subsequence(energies):
    feats = np.arange(len(energies), dtype=np.float64)[:, None] * np.ones((1, 3))
    try:
        kept = apply_vad(feats, energies, VadConfig(dynamic_range=5.0, absolute_floor=-20.0))
    except EmptyAfterVadError:
        assert max(energies) <= -20.0
        return
    idx = kept[:, 0].astype(int)
    assert np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(kept, feats[idx])


def test_vad_energy_count_mismatch():
    with pytest.raises(ConfigError):
        apply_vad(np.zeros((5, 80)), np.zeros(4))


def test_cmn_examples():
    col = np.array([1.0, 2, 3, 4, 5])[:, None]
    np.testing.assert_allclose(sliding_cmn(col, window_s=0.03), [[-1], [0], [0], [0], [1]])
    np.testing.assert_array_equal(sliding_cmn(np.full((7, 80), 4.25)), 0.0)
    np.testing.assert_array_equal(sliding_cmn(np.ones((1, 80)) * 3.0), 0.0)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 80), w=st.integers(1, 40), seed=st.integers(0, 2**16))
def test_cmn_matches_brute_force(T, w, seed):
    x = np.random.default_rng(seed).standard_normal((T, 4))
    np.testing.assert_allclose(sliding_cmn(x, window_s=w * 0.01), brute_cmn(x, w), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), T=st.integers(1, 400))
def test_cmn_translation_equivariant(seed, T):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, 80))
    shift = rng.standard_normal(80) * 10
    np.testing.assert_allclose(sliding_cmn(x + shift), sliding_cmn(x), atol=1e-9)


def test_cmn_rejects_bad_window():
    with pytest.raises(ConfigError):
        sliding_cmn(np.zeros((3, 80)), window_s=0)


def test_pipeline_from_wav_file(tmp_path):
    from scipy.io import wavfile

    rng = np.random.default_rng(4)
    pcm = (rng.standard_normal(24000) * 3000).astype(np.int16)
    wavfile.write(tmp_path / "a.wav", 16000, pcm)
    wav = read_wav(tmp_path / "a.wav")
    assert wav.sample_rate == 16000
    assert np.abs(wav.samples).max() <= 1.0
    feats = extract_features(wav)
    assert feats.shape[1] == 80 and np.all(np.isfinite(feats))
    np.testing.assert_allclose(feats.mean(axis=0), 0.0, atol=1e-4)  # T < 300: one global window


def test_order_option():
    wav = Waveform(np.random.default_rng(5).standard_normal(16000) * 0.1, 16000)
    a = extract_features(wav, order="vad-cmn")
    b = extract_features(wav, order="cmn-vad")
    assert a.shape == b.shape
    with pytest.raises(ConfigError):
        extract_features(wav, order="cmn-only")


class TestArchive:
    def sample(self):
        rng = np.random.default_rng(6)
        return {
            "a": rng.standard_normal((5, 80)).astype(np.float32),
            "bé-ü": rng.standard_normal((1, 80)).astype(np.float32),
            "c": np.zeros((0, 80), dtype=np.float32),
        }

    def test_round_trip_bit_exact(self, tmp_path):
        feats = self.sample()
        write_archive(feats, tmp_path / "x.ftr1")
        back = read_archive(tmp_path / "x.ftr1")
        assert list(back) == list(feats)
        for k in feats:
            assert back[k].tobytes() == feats[k].tobytes()
        assert encode_archive(back) == (tmp_path / "x.ftr1").read_bytes()

    def test_truncation_names_record(self):
        data = encode_archive(self.sample())
        with pytest.raises(FormatError) as err:
            decode_archive(data[:-10])
        assert err.value.record == 2 and err.value.offset > 8

    def test_bad_magic(self):
        with pytest.raises(FormatError) as err:
            decode_archive(b"FTR2" + encode_archive(self.sample())[4:])
        assert err.value.offset == 0

    def test_nan_value_offset(self):
        data = bytearray(encode_archive({"a": np.ones((2, 2), dtype=np.float32)}))
        # header 8, id-len 2, id 1, T/D 8 -> values start at 19; poison the 3rd float
        data[19 + 8 : 19 + 12] = np.float32(np.nan).tobytes()
        with pytest.raises(FormatError) as err:
            decode_archive(bytes(data))
        assert err.value.offset == 27 and err.value.record == 0

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            decode_archive(encode_archive(self.sample()) + b"\0")
