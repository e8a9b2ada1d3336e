import math
import struct

import numpy as np
import pytest

from longitrack.audio import (
    AudioClip,
    MelParams,
    QualityVerdict,
    frame_patches,
    LogMelFrames,
    load_wav,
    log_mel,
    mel_filterbank,
    n_frames_for,
    normalize_peak,
    preprocess,
    quality_check,
    resample,
    to_mono,
    trim_silence,
    write_wav,
)
from longitrack.errors import (
    DegenerateSignal,
    EmptyAfterTrim,
    MalformedWav,
    TooShort,
    UnsupportedEncoding,
)


def tone(freq, dur, rate=16000, amp=0.5, phase=0.0):
    t = np.arange(int(round(dur * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


# -- I/O ---------------------------------------------------------------------------


def test_pcm16_scaling(tmp_path):
    path = tmp_path / "a.wav"
    from scipy.io import wavfile
    wavfile.write(path, 16000, np.array([16384, -8192], dtype=np.int16))
    clip = load_wav(path)
    assert clip.rate == 16000
    np.testing.assert_allclose(clip.samples, [0.5, -0.25], atol=1e-4)


def test_empty_data_chunk_is_malformed(tmp_path):
    path = tmp_path / "empty.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 0)
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(MalformedWav):
        load_wav(path)


def test_garbage_file_is_malformed(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a wav file at all")
    with pytest.raises(MalformedWav):
        load_wav(path)


@pytest.mark.parametrize("encoding,step", [("pcm16", 1 / 2**15), ("float32", 1e-7)])
def test_wav_round_trip(tmp_path, encoding, step):
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.9, 0.9, size=4000)
    path = tmp_path / "rt.wav"
    write_wav(path, AudioClip(x, 16000), encoding=encoding)
    back = load_wav(path)
    assert back.rate == 16000
    assert np.max(np.abs(back.samples - x)) <= step


def test_unknown_write_encoding(tmp_path):
    with pytest.raises(UnsupportedEncoding):
        write_wav(tmp_path / "x.wav", AudioClip(np.zeros(10), 16000), encoding="mulaw")


def test_stereo_preserved_on_load(tmp_path):
    x = np.stack([tone(300, 0.1), -tone(300, 0.1)], axis=1)
    path = tmp_path / "st.wav"
    write_wav(path, AudioClip(x, 16000), encoding="float32")
    clip = load_wav(path)
    assert clip.n_channels == 2


# -- preprocessing ------------------------------------------------------------------


def test_to_mono():
    mono = AudioClip(np.arange(5.0), 8000)
    assert to_mono(mono) is mono
    st = AudioClip(np.tile([1.0, 0.0], (6, 1)), 8000)
    np.testing.assert_array_equal(to_mono(st).samples, np.full(6, 0.5))
    x = tone(200, 0.05)
    np.testing.assert_array_equal(to_mono(AudioClip(np.stack([x, -x], 1), 16000)).samples,
                                  np.zeros_like(x))


def test_resample_length_and_identity():
    clip = AudioClip(tone(440, 1.0, rate=32000), 32000)
    assert len(resample(clip, 16000)) == 16000
    same = AudioClip(tone(440, 0.3), 16000)
    assert resample(same, 16000) is same


def dft_peak(x, rate):
    spec = np.abs(np.fft.rfft(x)) * 2 / len(x)
    k = int(np.argmax(spec))
    return k * rate / len(x), spec[k], rate / len(x)


def test_resample_preserves_dft_peak():
    rate_in, rate_out = 48000, 16000
    x = tone(1000, 1.0, rate=rate_in, amp=0.5)
    y = resample(AudioClip(x, rate_in), rate_out).samples
    freq, amp, bin_hz = dft_peak(y, rate_out)
    assert abs(freq - 1000) <= bin_hz
    assert abs(amp - 0.5) / 0.5 < 0.01


def test_resample_round_trip_band_limited():
    rng = np.random.default_rng(0)
    r = 8000
    t = np.arange(2 * r) / r
    x = sum(rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6))
            for f in rng.uniform(50, 0.4 * r, size=6))
    up = resample(AudioClip(x, r), 2 * r)
    back = resample(up, r).samples
    core = slice(200, -200)  # filter edge transients
    err = np.linalg.norm(back[core] - x[core]) / np.linalg.norm(x[core])
    assert err < 0.01


def test_trim_silence_constructed_boundaries():
    rate = 16000
    x = np.concatenate([np.zeros(rate // 2), tone(440, 1.0), np.zeros(rate // 2)])
    out = trim_silence(AudioClip(x, rate))
    assert abs(out.duration - 1.0) <= 0.010 + 1e-12


def test_trim_silence_identity_and_empty():
    loud = AudioClip(tone(440, 0.5), 16000)
    assert trim_silence(loud) is loud
    with pytest.raises(EmptyAfterTrim):
        trim_silence(AudioClip(np.zeros(1600), 16000))


def test_trim_silence_idempotent():
    rng = np.random.default_rng(1)
    x = np.concatenate([1e-4 * rng.standard_normal(3000), tone(600, 0.7), 1e-4 * rng.standard_normal(2500)])
    once = trim_silence(AudioClip(x, 16000))
    twice = trim_silence(once)
    np.testing.assert_array_equal(once.samples, twice.samples)


def test_normalize_peak():
    out = normalize_peak(AudioClip(np.array([0.5, -0.25]), 16000))
    np.testing.assert_array_equal(out.samples, [1.0, -0.5])
    peaked = AudioClip(np.array([1.0, 0.3]), 16000)
    assert normalize_peak(peaked) is peaked
    with pytest.raises(DegenerateSignal):
        normalize_peak(AudioClip(np.zeros(5), 16000))


def test_normalize_peak_idempotent_bit_exact():
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.normal(0, rng.uniform(0.01, 3), size=rng.integers(5, 500))
        once = normalize_peak(AudioClip(x, 16000))
        twice = normalize_peak(once)
        assert np.max(np.abs(once.samples)) == 1.0
        np.testing.assert_array_equal(once.samples, twice.samples)


def test_preprocess_order():
    # silence in front must not survive, and the peak is set on what remains
    x = np.concatenate([np.zeros(4800), tone(500, 1.0, rate=48000, amp=0.2)])
    out = preprocess(AudioClip(x, 48000))
    assert out.rate == 16000
    assert np.max(np.abs(out.samples)) == 1.0
    assert abs(out.duration - 1.0) < 0.02


# -- features ----------------------------------------------------------------------


def test_frame_count_formula_by_enumeration():
    rng = np.random.default_rng(5)
    p = MelParams()
    for _ in range(20):
        n = int(rng.integers(400, 48000))
        window, hop = p.window_samples(16000), p.hop_samples(16000)
        enumerated = sum(1 for start in range(0, n, hop) if start + window <= n)
        x = rng.standard_normal(n) * 0.1
        assert log_mel(AudioClip(x, 16000), p).n_frames == enumerated == n_frames_for(n, window, hop)
    assert log_mel(AudioClip(tone(300, 1.0), 16000)).n_frames == 98


def test_log_mel_floor_and_too_short():
    p = MelParams()
    frames = log_mel(AudioClip(np.zeros(16000), 16000), p)
    np.testing.assert_array_equal(frames.values, math.log(p.log_floor))
    with pytest.raises(TooShort):
        log_mel(AudioClip(np.zeros(100), 16000))
    rng = np.random.default_rng(0)
    v = log_mel(AudioClip(rng.standard_normal(8000), 16000)).values
    assert v.min() >= math.log(p.log_floor)


def test_tone_lands_in_its_mel_band():
    p = MelParams()
    frames = log_mel(AudioClip(tone(1000, 1.0), 16000), p)
    # independent band centres on the HTK mel scale (log10 form)
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    centres_mel = np.linspace(mel(p.fmin), mel(p.fmax), p.n_mels + 2)[1:-1]
    expected = int(np.argmin(np.abs(centres_mel - mel(1000.0))))
    assert np.all(frames.values.argmax(axis=1) == expected)


def test_filterbank_triangles_positive():
    fb = mel_filterbank(16000, 512, 64, 125.0, 7500.0)
    assert fb.shape == (257, 64)
    assert np.all(fb >= 0) and np.all(fb.sum(axis=0) > 0)
    assert np.all(fb <= 1.0 + 1e-12)


def test_log_mel_translation_covariant():
    rng = np.random.default_rng(9)
    x = rng.standard_normal(16000) * 0.3
    hop = MelParams().hop_samples(16000)
    k = 7
    a = log_mel(AudioClip(x, 16000)).values
    b = log_mel(AudioClip(np.concatenate([np.zeros(k * hop), x]), 16000)).values
    np.testing.assert_allclose(b[k:k + a.shape[0]], a, atol=1e-9)


def test_frame_patches_rules():
    mk = lambda n: LogMelFrames(np.arange(n * 4, dtype=float).reshape(n, 4), 0.01)
    one = frame_patches(mk(98))
    assert len(one) == 1 and not one[0].padded
    np.testing.assert_array_equal(one[0].values, mk(98).values[:96])
    assert len(frame_patches(mk(192))) == 2
    short = frame_patches(mk(40))
    assert len(short) == 1 and short[0].padded
    assert short[0].values.shape == (96, 4)
    np.testing.assert_array_equal(short[0].values[40:], np.tile(mk(40).values[-1], (56, 1)))


def test_quality_check_verdicts():
    assert quality_check(AudioClip(tone(440, 2.0, amp=10 ** (-20 / 20) * math.sqrt(2)), 16000)) \
        == QualityVerdict.OK
    assert quality_check(AudioClip(tone(440, 0.2), 16000)) == QualityVerdict.TOO_SHORT
    quiet = AudioClip(tone(440, 1.0, amp=1e-3), 16000)
    assert quality_check(quiet) == QualityVerdict.TOO_QUIET
    square = AudioClip(np.sign(tone(100, 1.0, phase=0.1)), 16000)
    assert quality_check(square) == QualityVerdict.CLIPPED
