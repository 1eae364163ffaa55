"""Mel spectrogram and tensor normalization contracts."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orcaug.audio_io import AudioClip
from orcaug.errors import InsufficientAudioError, ValidationError
from orcaug.spectrogram import (
    DB_FLOOR,
    MelSpectrogram,
    SpectrogramTensor,
    compute_mel,
    convert_range,
    frame_count,
    mel_bin_centers_hz,
    tensor_to_db,
    to_tensor,
)

from conftest import sine_clip


def slaney_mel_to_hz(mel):
    """Independent mel-scale oracle (linear below 1 kHz, log above)."""
    mel = np.asarray(mel, dtype=float)
    return np.where(mel < 15.0, mel * 200.0 / 3.0,
                    1000.0 * 6.4 ** ((mel - 15.0) / 27.0))


def slaney_hz_to_mel(hz):
    hz = np.asarray(hz, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(hz < 1000.0, hz * 3.0 / 200.0,
                        15.0 + 27.0 * np.log(hz / 1000.0) / np.log(6.4))


def test_three_second_clip_gives_237_frames():
    mel = compute_mel(sine_clip(1000, 3.0))
    assert mel.values.shape == (128, 237)


def test_single_frame_clip():
    clip = AudioClip(samples=np.random.default_rng(0).uniform(-0.5, 0.5, 1200),
                     sample_rate_hz=24000, source_file="m")
    assert compute_mel(clip).values.shape == (128, 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1200, max_value=120000))
def test_frame_count_matches_closed_form(n_samples):
    assert frame_count(n_samples) == (n_samples - 1200) // 300 + 1


def test_too_short_clip_raises():
    clip = AudioClip(samples=np.zeros(1199), sample_rate_hz=24000, source_file="m")
    with pytest.raises(InsufficientAudioError):
        compute_mel(clip)


def test_wrong_rate_rejected():
    clip = AudioClip(samples=np.zeros(48000), sample_rate_hz=48000, source_file="m")
    with pytest.raises(ValidationError):
        compute_mel(clip)


@pytest.mark.parametrize("freq_hz", [500, 1000, 3000, 8000])
def test_tone_lands_in_nearest_mel_bin(freq_hz):
    # Oracle: bin centers recomputed from the Slaney formulas in this test
    mel = compute_mel(sine_clip(freq_hz, 3.0))
    edges = slaney_mel_to_hz(np.linspace(slaney_hz_to_mel(0.0),
                                         slaney_hz_to_mel(12000.0), 130))
    centers = edges[1:-1]
    expected_bin = int(np.argmin(np.abs(centers - freq_hz)))
    observed = np.argmax(mel.values, axis=0)
    assert np.all(np.abs(observed - expected_bin) <= 1)


def test_db_scale_bounded_with_zero_max():
    clip = AudioClip(samples=np.zeros(2400), sample_rate_hz=24000, source_file="m")
    mel = compute_mel(clip)
    assert np.all(mel.values == DB_FLOOR)


def test_db_values_in_range():
    mel = compute_mel(sine_clip(2000, 1.0))
    assert mel.values.max() == pytest.approx(0.0)
    assert mel.values.min() >= DB_FLOOR


# -- to_tensor ---------------------------------------------------------------


def test_floor_maps_to_zero_unit():
    spec = MelSpectrogram(values=np.full((128, 50), -80.0))
    tensor = to_tensor(spec, "unit")
    assert np.all(tensor.values == 0.0)


def test_ceiling_maps_to_one_symmetric():
    spec = MelSpectrogram(values=np.zeros((128, 50)))
    tensor = to_tensor(spec, "symmetric")
    assert np.all(tensor.values == 1.0)


def test_bilinear_columns_match_at_integer_coordinates():
    # Column j of the output samples input time coordinate j*(F-1)/127, so
    # j = 0 and j = 127 align exactly with input columns 0 and F-1.
    rng = np.random.default_rng(7)
    values = rng.uniform(-80, 0, (128, 237))
    tensor = to_tensor(MelSpectrogram(values=values), "unit")
    unit = (values + 80) / 80
    np.testing.assert_allclose(tensor.values[:, 0], unit[:, 0], atol=1e-6)
    np.testing.assert_allclose(tensor.values[:, -1], unit[:, -1], atol=1e-6)
    # interior spot check against a directly computed interpolation
    j = 64
    coord = j * 236 / 127
    lo, frac = int(coord), coord - int(coord)
    expected = unit[:, lo] * (1 - frac) + unit[:, lo + 1] * frac
    np.testing.assert_allclose(tensor.values[:, j], expected, atol=1e-6)


def test_single_column_broadcasts():
    spec = MelSpectrogram(values=np.linspace(-80, 0, 128).reshape(128, 1))
    tensor = to_tensor(spec, "unit")
    assert np.all(tensor.values == tensor.values[:, :1])


def test_normalization_is_monotone(rng):
    a = rng.uniform(-80, 0, (128, 64))
    b = np.clip(a + rng.uniform(0, 10, a.shape), -80, 0)
    ta = to_tensor(MelSpectrogram(values=a), "unit").values
    tb = to_tensor(MelSpectrogram(values=b), "unit").values
    assert np.all(tb >= ta - 1e-6)


def test_affine_round_trip_identity(rng):
    values = rng.uniform(0, 1, (128, 128)).astype(np.float32)
    tensor = SpectrogramTensor(values=values, range_tag="unit")
    db = tensor_to_db(tensor)
    back = (db + 80) / 80
    np.testing.assert_allclose(back, values, atol=1e-6)


def test_range_conversion_round_trip(rng):
    tensor = SpectrogramTensor(values=rng.uniform(0, 1, (128, 128)).astype(np.float32),
                               range_tag="unit")
    sym = convert_range(tensor, "symmetric")
    assert sym.values.min() >= -1 and sym.values.max() <= 1
    back = convert_range(sym, "unit")
    np.testing.assert_allclose(back.values, tensor.values, atol=1e-6)


def test_tensor_shape_enforced():
    with pytest.raises(ValidationError):
        SpectrogramTensor(values=np.zeros((64, 128)), range_tag="unit")


def test_tensor_range_enforced():
    with pytest.raises(ValidationError):
        SpectrogramTensor(values=np.full((128, 128), 2.0), range_tag="unit")
