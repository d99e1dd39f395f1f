import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from pcaudio.errors import EmptyClipError, ParameterError, UnsupportedInput
from pcaudio.signal import (
    AudioClip,
    get_window,
    make_bandpass_noise,
    make_spectral_noise,
    make_tone,
    pad_window_input,
    read_wav,
    resample,
    stft,
    trim_silence,
    write_wav,
)


def band_energy_ratio(clip, lo, hi):
    spec = np.abs(np.fft.rfft(clip.samples)) ** 2
    freqs = np.fft.rfftfreq(len(clip.samples), 1.0 / clip.sample_rate)
    return spec[(freqs >= lo) & (freqs <= hi)].sum() / spec.sum()


class TestAudioClip:
    def test_rejects_stereo_and_bad_rate(self):
        with pytest.raises(ParameterError):
            AudioClip(np.zeros((10, 2)), 16000)
        with pytest.raises(ParameterError):
            AudioClip(np.zeros(10), 0)
        with pytest.raises(ParameterError):
            AudioClip(np.array([0.0, np.nan]), 16000)

    def test_duration(self):
        assert AudioClip(np.zeros(8000), 16000).duration == 0.5


class TestBandpassNoise:
    def test_in_band_energy(self):
        clip = make_bandpass_noise([2000, 4000], 16000, 0.5, seed=3)
        assert band_energy_ratio(clip, 2000, 4000) >= 0.99

    @pytest.mark.parametrize("band", [[100, 400], [300, 3500], [4500, 7700], [7000, 8000]])
    def test_out_of_band_below_one_percent(self, band):
        clip = make_bandpass_noise(band, 16000, 0.25, seed=0)
        assert 1.0 - band_energy_ratio(clip, *band) < 0.01

    def test_degenerate_band(self):
        with pytest.raises(ParameterError):
            make_bandpass_noise([1000, 1000], 16000, 0.5, seed=0)
        with pytest.raises(ParameterError):
            make_bandpass_noise([3000, 1000], 16000, 0.5, seed=0)
        with pytest.raises(ParameterError):
            make_bandpass_noise([1000, 9000], 16000, 0.5, seed=0)

    def test_disjoint_bands_are_orthogonal(self):
        a = np.abs(np.fft.rfft(make_bandpass_noise([300, 3500], 16000, 0.5, 1).samples))
        b = np.abs(np.fft.rfft(make_bandpass_noise([4500, 7700], 16000, 0.5, 2).samples))
        assert np.dot(a, b) / np.dot(a, a) < 1e-3

    def test_peak_normalized_and_seeded(self):
        a = make_bandpass_noise([500, 900], 8000, 0.2, seed=5)
        b = make_bandpass_noise([500, 900], 8000, 0.2, seed=5)
        assert np.max(np.abs(a.samples)) == pytest.approx(1.0)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_band_gains(self):
        clip = make_spectral_noise([[500, 1000], [3000, 3500]], 16000, 0.5, seed=0, gains=[1.0, 0.1])
        ratio = band_energy_ratio(clip, 3000, 3500) / band_energy_ratio(clip, 500, 1000)
        assert ratio == pytest.approx(0.01, rel=0.05)


class TestStft:
    def test_integer_bin_sine_rect_window(self):
        n, k, sr = 256, 19, 8000
        clip = make_tone(k * sr / n, sr, n / sr)
        spec = stft(clip, n, window="rect")
        mags = spec.frames[0]
        assert int(np.argmax(mags)) == k
        assert mags[k] == pytest.approx(n / 2)
        others = np.delete(mags, k)
        assert others.max() < 1e-9 * mags[k]

    def test_zero_clip(self):
        spec = stft(AudioClip(np.zeros(4096), 16000), 1024)
        assert not spec.frames.any()

    def test_frame_count_and_times(self):
        spec = stft(AudioClip(np.zeros(3072), 16000), 2048, hop=512)
        assert spec.frames.shape == (3, 1025)
        np.testing.assert_allclose(spec.frame_times, (np.arange(3) * 512 + 1024) / 16000)

    def test_frequencies(self):
        spec = stft(AudioClip(np.zeros(2048), 16000), 1024)
        assert spec.frequencies[1] == 15.625
        assert spec.frequencies[-1] == 8000.0

    def test_clip_shorter_than_window(self):
        with pytest.raises(ParameterError):
            stft(AudioClip(np.zeros(100), 16000), 256)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([16, 64, 256]))
    def test_parseval_rect_window(self, seed, n):
        x = np.random.default_rng(seed).uniform(-1, 1, 3 * n)
        spec = stft(AudioClip(x, 8000), n, hop=n, window="rect")
        # one-sided spectrum: interior bins stand for two conjugate bins
        weights = np.full(n // 2 + 1, 2.0)
        weights[0] = weights[-1] = 1.0
        energy = (spec.frames ** 2 * weights).sum(axis=1)
        np.testing.assert_allclose(energy, n * (x.reshape(3, n) ** 2).sum(axis=1), rtol=1e-9)

    def test_hann_is_periodic(self):
        w = get_window("hann", 8)
        assert w[0] == 0.0 and w[4] == 1.0
        with pytest.raises(ParameterError):
            get_window("kaiser", 8)


class TestPadWindowInput:
    def test_identity_at_target(self):
        x = np.arange(2048.0)
        np.testing.assert_array_equal(pad_window_input(x), x)

    def test_half_length(self):
        out = pad_window_input(np.ones(1024))
        assert out.size == 2048 and np.count_nonzero(out == 0) == 1024
        assert out[512] == 1.0 and out[511] == 0.0

    def test_longer_rejected(self):
        with pytest.raises(UnsupportedInput):
            pad_window_input(np.ones(4096))

    def test_padded_sine_peak(self):
        sr, f = 16000, 1234.0
        clip = make_tone(f, sr, 1024 / sr)
        spec = stft(clip, 1024, pad_to=2048)
        assert spec.frames.shape[1] == 1025
        assert abs(int(np.argmax(spec.frames[0])) - round(f / (sr / 2048))) <= 1


class TestResample:
    def test_identity(self):
        clip = make_bandpass_noise([100, 3000], 8000, 0.1, seed=0)
        np.testing.assert_array_equal(resample(clip, 8000).samples, clip.samples)

    @pytest.mark.parametrize("target", [8000, 22050, 32000])
    def test_dc_preserved(self, target):
        out = resample(AudioClip(np.full(4000, 0.5), 16000), target)
        np.testing.assert_allclose(out.samples, 0.5, atol=1e-3)

    def test_sine_peak(self):
        out = resample(make_tone(440.0, 16000, 1.0), 8000)
        assert out.sample_rate == 8000 and len(out.samples) == 8000
        mags = np.abs(np.fft.rfft(out.samples * np.hanning(len(out.samples))))
        freqs = np.fft.rfftfreq(len(out.samples), 1 / 8000)
        assert abs(freqs[np.argmax(mags)] - 440.0) <= freqs[1]

    def test_aliasing_suppressed(self):
        # 6 kHz cannot exist at 8 kHz; it must be filtered, not folded to 2 kHz
        out = resample(make_tone(6000.0, 16000, 0.5), 8000)
        assert np.sqrt(np.mean(out.samples[200:-200] ** 2)) < 1e-3

    def test_round_trip_below_0_4_nyquist(self):
        sr = 8000
        clip = AudioClip(np.random.default_rng(0).uniform(-1, 1, 8000), sr)
        back = resample(resample(clip, 2 * sr), sr)
        x, y = clip.samples[500:-500], back.samples[500:-500]
        fx, fy = np.fft.rfft(x), np.fft.rfft(y)
        low = np.fft.rfftfreq(len(x), 1 / sr) < 0.4 * sr / 2
        err_db = 10 * np.log10(np.sum(np.abs(fx[low] - fy[low]) ** 2) / np.sum(np.abs(fx[low]) ** 2))
        assert err_db < -40

    def test_bad_rate(self):
        with pytest.raises(ParameterError):
            resample(AudioClip(np.zeros(10), 8000), 0)


class TestTrimSilence:
    def test_leading_zeros_removed(self):
        sr = 16000
        tone = make_tone(440.0, sr, 0.5).samples
        clip = AudioClip(np.concatenate([np.zeros(sr), tone]), sr)
        out = trim_silence(clip)
        assert abs(len(out.samples) - len(tone)) <= int(0.02 * sr)

    def test_nothing_to_trim(self):
        clip = make_bandpass_noise([300, 3000], 16000, 0.4, seed=0)
        np.testing.assert_array_equal(trim_silence(clip).samples, clip.samples)

    def test_quiet_pads(self):
        sr = 16000
        rng = np.random.default_rng(0)
        pad = 10 ** (-80 / 20) * rng.uniform(-1, 1, 8000)
        body = 10 ** (-20 / 20) * np.sin(2 * np.pi * 500 * np.arange(16000) / sr)
        clip = AudioClip(np.concatenate([pad, body, pad]), sr)
        out = trim_silence(clip, threshold_db=-60)
        assert abs(len(out.samples) - len(body)) <= int(0.02 * sr)

    def test_silent_clip(self):
        with pytest.raises(EmptyClipError):
            trim_silence(AudioClip(np.zeros(1000), 16000))

    def test_threshold_must_be_negative(self):
        with pytest.raises(ParameterError):
            trim_silence(AudioClip(np.ones(100), 16000), threshold_db=3.0)


class TestWav:
    def test_float_round_trip(self, tmp_path):
        clip = make_bandpass_noise([300, 3000], 16000, 0.1, seed=1)
        write_wav(tmp_path / "a.wav", clip)
        back = read_wav(tmp_path / "a.wav", label=3)
        assert back.sample_rate == 16000 and back.label == 3
        np.testing.assert_allclose(back.samples, clip.samples, atol=1e-7)

    def test_int16_stereo_averaged(self, tmp_path):
        data = np.stack([np.full(100, 16384, np.int16), np.zeros(100, np.int16)], axis=1)
        wavfile.write(tmp_path / "s.wav", 8000, data)
        clip = read_wav(tmp_path / "s.wav")
        np.testing.assert_allclose(clip.samples, 0.25)
