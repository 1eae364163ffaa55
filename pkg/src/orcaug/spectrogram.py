"""Mel spectrograms in dB and their normalized 128x128 tensor form.

Analysis settings are fixed project-wide: 24 kHz audio, 1200-sample Hann
window, 300-sample hop, 128 Slaney-style mel bands spanning 0-12 kHz, dB
relative to the per-spectrogram maximum with a -80 dB floor. Frames start at
sample 0 with no center padding, so a clip of length L yields
floor((L - 1200) / 300) + 1 frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .audio_io import AudioClip, STANDARD_RATE_HZ
from .errors import InsufficientAudioError, ValidationError

N_MELS = 128
NFFT = 1200
HOP = 300
FMIN_HZ = 0.0
FMAX_HZ = 12000.0
DB_FLOOR = -80.0
TENSOR_SIZE = 128

RANGE_TAGS = ("unit", "symmetric")
PROVENANCES = ("real", "timeshift", "mask", "vae", "gan", "ddpm")


@dataclass(frozen=True)
class MelSpectrogram:
    """128-band mel spectrogram in dB relative to its own maximum."""

    values: np.ndarray  # (128, n_frames), dB in [-80, 0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpectrogramTensor:
    """Model-ready 128x128 tensor with a declared value range and provenance."""

    values: np.ndarray
    range_tag: str = "unit"
    provenance: str = "real"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != (TENSOR_SIZE, TENSOR_SIZE):
            raise ValidationError(f"tensor must be {TENSOR_SIZE}x{TENSOR_SIZE}, got {values.shape}")
        if self.range_tag not in RANGE_TAGS:
            raise ValidationError(f"unknown range tag {self.range_tag!r}")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        lo, hi = (0.0, 1.0) if self.range_tag == "unit" else (-1.0, 1.0)
        if values.min() < lo - 1e-6 or values.max() > hi + 1e-6:
            raise ValidationError(f"values outside declared {self.range_tag} range")
        object.__setattr__(self, "values", np.clip(values, lo, hi))


def hz_to_mel(freq_hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq_hz = np.asarray(freq_hz, dtype=np.float64)
    mel = freq_hz * 3.0 / 200.0
    log_region = freq_hz >= 1000.0
    mel = np.where(log_region,
                   15.0 + 27.0 * np.log(np.maximum(freq_hz, 1000.0) / 1000.0) / np.log(6.4),
                   mel)
    return mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * 200.0 / 3.0
    log_region = mel >= 15.0
    hz = np.where(log_region, 1000.0 * np.power(6.4, (mel - 15.0) / 27.0), hz)
    return hz


def mel_filterbank(n_mels: int = N_MELS, nfft: int = NFFT, rate_hz: int = STANDARD_RATE_HZ,
                   fmin_hz: float = FMIN_HZ, fmax_hz: float = FMAX_HZ) -> np.ndarray:
    """Area-normalized triangular filters, shape (n_mels, nfft // 2 + 1)."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    fft_hz = np.arange(nfft // 2 + 1) * rate_hz / nfft
    fb = np.zeros((n_mels, len(fft_hz)))
    for i in range(n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (fft_hz - lo) / (center - lo)
        down = (hi - fft_hz) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down)) * 2.0 / (hi - lo)
    return fb


def mel_bin_centers_hz(n_mels: int = N_MELS, fmin_hz: float = FMIN_HZ,
                       fmax_hz: float = FMAX_HZ) -> np.ndarray:
    """Center frequency of each mel band."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    return edges_hz[1:-1]


def frame_count(n_samples: int, nfft: int = NFFT, hop: int = HOP) -> int:
    if n_samples < nfft:
        raise InsufficientAudioError(f"{n_samples} samples is shorter than one {nfft}-sample frame")
    return (n_samples - nfft) // hop + 1


_FILTERBANK_CACHE: dict[tuple, np.ndarray] = {}


def compute_mel(clip: AudioClip) -> MelSpectrogram:
    """128 x n_frames dB matrix from a standard-rate clip."""
    if clip.sample_rate_hz != STANDARD_RATE_HZ:
        raise ValidationError(
            f"clip rate {clip.sample_rate_hz} Hz; spectrograms require {STANDARD_RATE_HZ} Hz"
        )
    x = np.asarray(clip.samples, dtype=np.float64)
    nframes = frame_count(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(x, NFFT)[::HOP][:nframes]
    window = get_window("hann", NFFT, fftbins=True)
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2).T  # (nfft/2+1, frames)
    key = (N_MELS, NFFT, STANDARD_RATE_HZ, FMIN_HZ, FMAX_HZ)
    if key not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[key] = mel_filterbank()
    mel_power = _FILTERBANK_CACHE[key] @ power
    peak = mel_power.max()
    if peak <= 0.0:
        return MelSpectrogram(values=np.full((N_MELS, nframes), DB_FLOOR))
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(mel_power / peak)
    return MelSpectrogram(values=np.maximum(db, DB_FLOOR))


def _resample_time_axis(values: np.ndarray, n_out: int) -> np.ndarray:
    """Linear interpolation of each row onto n_out evenly spaced columns."""
    n_in = values.shape[1]
    if n_in == n_out:
        return values.copy()
    if n_in == 1:
        return np.repeat(values, n_out, axis=1)
    coords = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    left = np.floor(coords).astype(int)
    right = np.minimum(left + 1, n_in - 1)
    frac = coords - left
    return values[:, left] * (1.0 - frac) + values[:, right] * frac


def to_tensor(spec: MelSpectrogram, range_tag: str = "unit",
              provenance: str = "real") -> SpectrogramTensor:
    """Resize the time axis to 128 columns and map dB affinely onto the range."""
    if range_tag not in RANGE_TAGS:
        raise ValidationError(f"unknown range tag {range_tag!r}")
    resized = _resample_time_axis(np.asarray(spec.values, dtype=np.float64), TENSOR_SIZE)
    unit = (resized - DB_FLOOR) / (-DB_FLOOR)
    values = unit if range_tag == "unit" else unit * 2.0 - 1.0
    return SpectrogramTensor(values=values.astype(np.float32), range_tag=range_tag,
                             provenance=provenance)


def tensor_to_db(tensor: SpectrogramTensor) -> np.ndarray:
    """Invert the affine range mapping back to dB (time axis stays 128)."""
    values = tensor.values.astype(np.float64)
    unit = values if tensor.range_tag == "unit" else (values + 1.0) / 2.0
    return unit * (-DB_FLOOR) + DB_FLOOR


def convert_range(tensor: SpectrogramTensor, range_tag: str) -> SpectrogramTensor:
    """Re-tag a tensor into the other normalized range."""
    if range_tag == tensor.range_tag:
        return tensor
    values = tensor.values.astype(np.float64)
    if range_tag == "symmetric":
        values = values * 2.0 - 1.0
    elif range_tag == "unit":
        values = (values + 1.0) / 2.0
    else:
        raise ValidationError(f"unknown range tag {range_tag!r}")
    return SpectrogramTensor(values=values.astype(np.float32), range_tag=range_tag,
                             provenance=tensor.provenance)
