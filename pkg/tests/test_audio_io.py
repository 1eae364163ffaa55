"""Audio loading, resampling, and clip extraction contracts."""

import numpy as np
import pytest

from orcaug import audio_io, flacio
from orcaug.audio_io import AudioClip, extract_clip, load_and_resample, tone, write_wav
from orcaug.errors import DecodeError, InsufficientAudioError, UpsampleRefusedError

from conftest import dominant_frequency_hz


def test_high_rate_file_downsamples_to_standard(tmp_path):
    # 1 s at 250 kHz must land at exactly 24,000 samples
    path = tmp_path / "hi.wav"
    write_wav(path, tone(3000, 1.0, 250000), 250000, "int16")
    clip = load_and_resample(path)
    assert clip.sample_rate_hz == 24000
    assert len(clip.samples) == 24000


def test_standard_rate_is_passthrough(tmp_path):
    x = tone(440, 3.0, 24000, amplitude=0.25).astype(np.float32)
    path = tmp_path / "same.wav"
    write_wav(path, x, 24000, "float32")
    clip = load_and_resample(path)
    assert len(clip.samples) == 72000
    assert np.array_equal(clip.samples, x)


def test_tone_peak_survives_resampling(tmp_path):
    # FFT-peak oracle: a 5 kHz tone at 64 kHz keeps its peak within one bin
    path = tmp_path / "tone.wav"
    write_wav(path, tone(5000, 1.0, 64000), 64000, "int16")
    clip = load_and_resample(path)
    peak = dominant_frequency_hz(clip.samples, 24000)
    assert abs(peak - 5000) <= 24000 / len(clip.samples)


def test_inband_energy_preserved_within_1db(tmp_path):
    path = tmp_path / "e.wav"
    write_wav(path, tone(2000, 1.0, 96000), 96000, "float32")
    clip = load_and_resample(path)
    rms_in = np.sqrt(np.mean(tone(2000, 1.0, 96000) ** 2))
    rms_out = np.sqrt(np.mean(clip.samples.astype(np.float64) ** 2))
    assert abs(20 * np.log10(rms_out / rms_in)) < 1.0


def test_duration_preserved_within_one_sample(tmp_path):
    for rate in (48000, 44100, 96000):
        path = tmp_path / f"d{rate}.wav"
        write_wav(path, tone(1000, 1.7, rate), rate, "float32")
        clip = load_and_resample(path)
        assert abs(len(clip.samples) - round(1.7 * 24000)) <= 1


@pytest.mark.parametrize("fmt", ["int16", "int24", "int32", "float32"])
def test_wav_sample_formats(tmp_path, fmt):
    x = tone(500, 0.5, 24000, amplitude=0.6)
    path = tmp_path / f"{fmt}.wav"
    write_wav(path, x, 24000, fmt)
    clip = load_and_resample(path)
    assert np.max(np.abs(clip.samples - x)) < 1e-3


def test_flac_input(tmp_path):
    x = (tone(700, 1.0, 48000) * 32767).astype(np.int32)
    path = tmp_path / "x.flac"
    flacio.write_flac(path, x, 48000, 16)
    clip = load_and_resample(path)
    assert clip.sample_rate_hz == 24000
    peak = dominant_frequency_hz(clip.samples, 24000)
    assert abs(peak - 700) <= 24000 / len(clip.samples)


def test_multichannel_keeps_first_channel(tmp_path):
    left = tone(440, 0.5, 24000, amplitude=0.5)
    right = tone(880, 0.5, 24000, amplitude=0.5)
    stereo = np.stack([left, right], axis=1).astype(np.float32)
    from scipy.io import wavfile
    path = tmp_path / "st.wav"
    wavfile.write(str(path), 24000, stereo)
    clip = load_and_resample(path)
    assert abs(dominant_frequency_hz(clip.samples, 24000) - 440) < 10


def test_upsampling_is_refused(tmp_path):
    path = tmp_path / "lo.wav"
    write_wav(path, tone(100, 1.0, 16000), 16000, "int16")
    with pytest.raises(UpsampleRefusedError):
        load_and_resample(path)


def test_unreadable_file_raises_decode_error(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"this is not audio")
    with pytest.raises(DecodeError):
        load_and_resample(path)


def test_samples_bounded_after_load(tmp_path):
    x = tone(300, 0.5, 24000, amplitude=1.0) * 1.5  # clipped on write anyway
    path = tmp_path / "loud.wav"
    write_wav(path, x, 24000, "float32")
    clip = load_and_resample(path)
    assert np.all(np.abs(clip.samples) <= 1.0)


# -- extract_clip ------------------------------------------------------------


def _clip_of(duration_s):
    n = round(duration_s * 24000)
    return AudioClip(samples=np.linspace(-0.5, 0.5, n), sample_rate_hz=24000,
                     source_file="mem")


def test_interior_window():
    audio = _clip_of(60.0)
    clip = extract_clip(audio, 10.0, 3.0)
    assert clip.offset_s == pytest.approx(10.0)
    assert len(clip.samples) == 72000


def test_window_shifts_inward_at_end():
    # Requested [58.5, 61.5] in a 60 s file slides back to [57, 60]
    audio = _clip_of(60.0)
    clip = extract_clip(audio, 58.5, 3.0)
    assert clip.offset_s == pytest.approx(57.0)
    assert len(clip.samples) == 72000


def test_window_shifts_inward_at_start():
    audio = _clip_of(60.0)
    clip = extract_clip(audio, -1.0, 3.0)
    assert clip.offset_s == pytest.approx(0.0)


def test_short_file_raises():
    audio = _clip_of(2.0)
    with pytest.raises(InsufficientAudioError):
        extract_clip(audio, 0.0, 3.0)


@pytest.mark.parametrize("duration_s", [0.7, 1.5, 3.0, 4.25])
def test_exact_length_for_any_duration(duration_s):
    audio = _clip_of(10.0)
    clip = extract_clip(audio, 2.0, duration_s)
    assert len(clip.samples) == round(duration_s * 24000)
