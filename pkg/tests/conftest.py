"""Shared fixtures and oracle helpers."""

import numpy as np
import pytest

from orcaug.audio_io import AudioClip, STANDARD_RATE_HZ
from orcaug.spectrogram import SpectrogramTensor


def sine_clip(freq_hz, duration_s, rate_hz=STANDARD_RATE_HZ, amplitude=0.5,
              source="synth"):
    t = np.arange(round(duration_s * rate_hz)) / rate_hz
    return AudioClip(samples=amplitude * np.sin(2 * np.pi * freq_hz * t),
                     sample_rate_hz=rate_hz, source_file=source)


def random_unit_tensor(rng, provenance="real"):
    return SpectrogramTensor(values=rng.uniform(0, 1, (128, 128)).astype(np.float32),
                             range_tag="unit", provenance=provenance)


def dominant_frequency_hz(samples, rate_hz):
    """FFT-peak oracle: frequency of the strongest spectral component."""
    spectrum = np.abs(np.fft.rfft(np.asarray(samples, dtype=np.float64)))
    return np.argmax(spectrum) * rate_hz / len(samples)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
