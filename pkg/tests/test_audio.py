import struct
import wave

import numpy as np
import pytest

from tagstress.audio import (AudioClip, AudioFormatError, FrameSpec,
                             SpectrumSizeError, TooShortError,
                             UnsupportedAudioError, frame_signal, load_wav,
                             power_spectrum, resample, save_wav,
                             window_values)


def write_pcm16(path, samples, rate=22050, channels=1):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(np.asarray(samples, dtype="<i2").tobytes())


class TestLoadWav:
    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        write_pcm16(path, [16384, -32768, 0])
        clip = load_wav(path)
        assert clip.samples[0] == pytest.approx(0.5, abs=1.0 / 32768)
        assert clip.samples[1] == -1.0
        assert clip.samples[2] == 0.0

    def test_stereo_downmix_mean(self, tmp_path):
        path = tmp_path / "st.wav"
        left = int(round(0.2 * 32768))
        right = int(round(0.6 * 32768))
        write_pcm16(path, [left, right], channels=2)
        clip = load_wav(path)
        assert clip.samples[0] == pytest.approx(0.4, abs=1.0 / 32768)

    def test_duration_arithmetic(self, tmp_path):
        path = tmp_path / "long.wav"
        rate = 44100
        write_pcm16(path, np.zeros(30 * rate, dtype=np.int16), rate=rate)
        clip = load_wav(path)
        assert len(clip.samples) == 1323000
        assert clip.duration_seconds == pytest.approx(30.0)

    def test_pcm8_and_pcm24_and_float32(self, tmp_path):
        p8 = tmp_path / "b8.wav"
        with wave.open(str(p8), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(1)
            fh.setframerate(8000)
            fh.writeframes(bytes([128, 255, 0]))
        c8 = load_wav(p8)
        assert c8.samples[0] == 0.0
        assert c8.samples[1] == pytest.approx(127 / 128)
        assert c8.samples[2] == -1.0

        p24 = tmp_path / "b24.wav"
        with wave.open(str(p24), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(3)
            fh.setframerate(8000)
            val = 1 << 22  # half of full scale
            fh.writeframes(struct.pack("<i", val)[:3] + struct.pack("<i", -(1 << 23))[:3])
        c24 = load_wav(p24)
        assert c24.samples[0] == pytest.approx(0.5)
        assert c24.samples[1] == -1.0

        pf = tmp_path / "f32.wav"
        data = np.array([0.25, -0.75, 1.5], dtype="<f4").tobytes()
        header = (b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
                  + b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 8000, 32000, 4, 32)
                  + b"data" + struct.pack("<I", len(data)))
        pf.write_bytes(header + data)
        cf = load_wav(pf)
        assert cf.samples[0] == 0.25
        assert cf.samples[1] == -0.75
        assert cf.samples[2] == 1.0  # clipped

    def test_malformed_header_raises_format_error(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFFxxxxNOPE" + b"\x00" * 64)
        with pytest.raises(AudioFormatError):
            load_wav(path)

    def test_unsupported_codec_raises(self, tmp_path):
        path = tmp_path / "ulaw.wav"
        data = b"\x00" * 16
        header = (b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
                  + b"fmt " + struct.pack("<IHHIIHH", 16, 7, 1, 8000, 8000, 1, 8)
                  + b"data" + struct.pack("<I", len(data)))
        path.write_bytes(header + data)
        with pytest.raises(UnsupportedAudioError):
            load_wav(path)

    def test_deterministic(self, tmp_path):
        path = tmp_path / "d.wav"
        rng = np.random.default_rng(5)
        write_pcm16(path, (rng.uniform(-0.5, 0.5, 4000) * 32767).astype(np.int16))
        a = load_wav(path)
        b = load_wav(path)
        assert np.array_equal(a.samples, b.samples)

    def test_save_roundtrip_within_lsb(self, tmp_path):
        rng = np.random.default_rng(11)
        x = rng.uniform(-0.9, 0.9, 3000)
        clip = AudioClip(id="x", samples=x, sample_rate=22050)
        path = tmp_path / "rt.wav"
        save_wav(path, clip)
        back = load_wav(path)
        # write scales by 32767, read by 32768: up to ~1.5 LSB apart
        assert np.max(np.abs(back.samples - x)) <= 2.0 / 32768


class TestFraming:
    def test_frame_count(self):
        clip = AudioClip(id="c", samples=np.ones(1000), sample_rate=22050)
        frames = frame_signal(clip, FrameSpec(400, 200, "rectangular"))
        assert frames.shape == (4, 400)

    def test_rectangular_constant_signal(self):
        clip = AudioClip(id="c", samples=np.ones(1000), sample_rate=22050)
        frames = frame_signal(clip, FrameSpec(400, 200, "rectangular"))
        assert np.all(frames == 1.0)

    def test_hann_all_ones_sum(self):
        # Closed-form oracle: a periodic hann window sums to exactly N/2.
        clip = AudioClip(id="c", samples=np.ones(2048), sample_rate=22050)
        frames = frame_signal(clip, FrameSpec(512, 512, "hann"))
        for frame in frames:
            assert frame.sum() == pytest.approx(256.0, rel=1e-9)

    def test_too_short(self):
        clip = AudioClip(id="c", samples=np.ones(100), sample_rate=22050)
        with pytest.raises(TooShortError):
            frame_signal(clip, FrameSpec(512, 256))

    def test_hop_equals_frame_reconstructs_truncated_input(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 1100)
        clip = AudioClip(id="c", samples=x, sample_rate=22050)
        frames = frame_signal(clip, FrameSpec(256, 256, "rectangular"))
        assert np.array_equal(frames.reshape(-1), x[:1024])


class TestPowerSpectrum:
    def test_pure_cosine_single_bin(self):
        n = 512
        t = np.arange(n)
        frame = np.cos(2 * np.pi * 8 * t / n)
        spec = power_spectrum(frame)
        assert np.argmax(spec) == 8
        others = np.delete(spec, 8)
        assert others.max() < 1e-18 * spec[8] + 1e-12

    def test_zero_frame(self):
        assert np.all(power_spectrum(np.zeros(256)) == 0.0)

    def test_parseval_on_white_noise(self):
        # Direct energy-sum oracle.
        rng = np.random.default_rng(0)
        frame = rng.standard_normal(1024)
        spec = power_spectrum(frame)
        doubled = spec[0] + 2 * spec[1:-1].sum() + spec[-1]
        energy = np.sum(frame ** 2)
        assert doubled / len(frame) == pytest.approx(energy, rel=1e-6)

    def test_sign_flip_invariance(self):
        rng = np.random.default_rng(1)
        frame = rng.standard_normal(512)
        assert np.allclose(power_spectrum(frame), power_spectrum(-frame))

    def test_non_power_of_two_raises(self):
        with pytest.raises(SpectrumSizeError):
            power_spectrum(np.zeros(500))


class TestResample:
    def test_windowed_sinc_preserves_tone(self):
        rate = 44100
        t = np.arange(2 * rate) / rate
        x = 0.5 * np.sin(2 * np.pi * 440 * t)
        clip = AudioClip(id="t", samples=x, sample_rate=rate)
        out = resample(clip, 22050)
        assert out.sample_rate == 22050
        assert len(out.samples) == rate  # half the samples
        mid = out.samples[2000:-2000]
        tt = np.arange(len(out.samples))[2000:-2000] / 22050
        ref = 0.5 * np.sin(2 * np.pi * 440 * tt)
        assert np.max(np.abs(mid - ref)) < 5e-3

    def test_noop_at_canonical_rate(self):
        clip = AudioClip(id="t", samples=np.ones(100) * 0.1, sample_rate=22050)
        assert resample(clip, 22050) is clip
