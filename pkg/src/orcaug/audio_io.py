"""Audio loading, rate standardization, and clip extraction.

All audio leaving this module is mono float32 in [-1, 1] at the pipeline's
standard rate (24 kHz). Downsampling applies a windowed-sinc polyphase
anti-aliasing filter; upsampling is refused because the recordings this
pipeline targets always start at or above the standard rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import flacio
from .errors import DecodeError, InsufficientAudioError, UpsampleRefusedError

STANDARD_RATE_HZ = 24000
CLIP_DURATION_S = 3.0


@dataclass(frozen=True)
class AudioClip:
    """Fixed-rate waveform segment with source provenance."""

    samples: np.ndarray          # float32, mono, |x| <= 1
    sample_rate_hz: int
    source_file: str
    offset_s: float = 0.0

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float32))


def _decode_file(path: Path) -> tuple[np.ndarray, int]:
    """Decode WAV or FLAC to float samples in [-1, 1], shape (n,) or (n, ch)."""
    suffix = path.suffix.lower()
    if suffix == ".flac":
        raw, rate, bps = flacio.read_flac(path)
        return raw.astype(np.float64) / float(1 << (bps - 1)), rate
    if suffix == ".wav":
        try:
            rate, raw = wavfile.read(str(path))
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise DecodeError(f"cannot decode WAV file {path}: {exc}") from exc
        if raw.dtype == np.int16:
            return raw.astype(np.float64) / 32768.0, rate
        if raw.dtype == np.int32:
            # scipy widens 24-bit PCM into the top bytes of int32, so one
            # divisor covers both 24- and 32-bit streams.
            return raw.astype(np.float64) / 2147483648.0, rate
        if raw.dtype == np.uint8:
            return (raw.astype(np.float64) - 128.0) / 128.0, rate
        if raw.dtype in (np.float32, np.float64):
            return raw.astype(np.float64), rate
        raise DecodeError(f"unsupported WAV sample format {raw.dtype} in {path}")
    raise DecodeError(f"unsupported audio container: {path.suffix!r}")


def load_and_resample(path, target_rate_hz: int = STANDARD_RATE_HZ) -> AudioClip:
    """Load a WAV/FLAC file as mono float32 at `target_rate_hz`.

    Multi-channel inputs keep channel 0 only. Sources above the target rate
    are low-pass filtered and decimated by a polyphase windowed-sinc
    resampler; sources below the target rate raise UpsampleRefusedError.
    """
    path = Path(path)
    samples, rate = _decode_file(path)
    if samples.ndim > 1:
        samples = samples[:, 0]
    if samples.size == 0:
        raise DecodeError(f"file {path} contains no samples")
    if rate < target_rate_hz:
        raise UpsampleRefusedError(
            f"{path} is sampled at {rate} Hz, below the {target_rate_hz} Hz target; "
            "only downsampling is supported"
        )
    if rate != target_rate_hz:
        ratio = Fraction(target_rate_hz, rate)
        samples = resample_poly(samples, ratio.numerator, ratio.denominator)
    samples = np.clip(samples, -1.0, 1.0).astype(np.float32)
    return AudioClip(samples=samples, sample_rate_hz=target_rate_hz,
                     source_file=str(path), offset_s=0.0)


def extract_clip(audio: AudioClip, start_s: float, duration_s: float = CLIP_DURATION_S) -> AudioClip:
    """Cut an exact-duration window, shifting inward when it overruns the ends.

    The returned clip's offset_s records the final start relative to the
    source file. Windows are never padded; a source shorter than the clip
    raises InsufficientAudioError.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    rate = audio.sample_rate_hz
    n = round(duration_s * rate)
    if len(audio.samples) < n:
        raise InsufficientAudioError(
            f"{audio.source_file}: {len(audio.samples)} samples cannot fit a "
            f"{duration_s} s window ({n} samples)"
        )
    start_idx = round(start_s * rate)
    start_idx = min(max(start_idx, 0), len(audio.samples) - n)
    clip = audio.samples[start_idx:start_idx + n]
    return AudioClip(samples=clip, sample_rate_hz=rate, source_file=audio.source_file,
                     offset_s=audio.offset_s + start_idx / rate)


def write_wav(path, samples: np.ndarray, sample_rate_hz: int, fmt: str = "float32") -> None:
    """Write mono samples in [-1, 1] as a WAV file.

    fmt is one of float32, int16, int24, int32. The int24 container is
    hand-rolled because scipy does not write 24-bit PCM.
    """
    samples = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    path = Path(path)
    if fmt == "float32":
        wavfile.write(str(path), sample_rate_hz, samples.astype(np.float32))
    elif fmt == "int16":
        wavfile.write(str(path), sample_rate_hz, np.round(samples * 32767).astype(np.int16))
    elif fmt == "int32":
        wavfile.write(str(path), sample_rate_hz, np.round(samples * 2147483647).astype(np.int32))
    elif fmt == "int24":
        ints = np.round(samples * (2**23 - 1)).astype(np.int32)
        payload = bytearray()
        for v in ints:
            payload += int(v).to_bytes(4, "little", signed=True)[:3]
        import struct
        with open(path, "wb") as fh:
            fh.write(b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE")
            fh.write(struct.pack("<4sIHHIIHH", b"fmt ", 16, 1, 1, sample_rate_hz,
                                 sample_rate_hz * 3, 3, 24))
            fh.write(b"data" + struct.pack("<I", len(payload)) + bytes(payload))
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")


def file_duration_s(path) -> float:
    """Duration of a WAV/FLAC file in seconds (decodes the file)."""
    samples, rate = _decode_file(Path(path))
    n = samples.shape[0]
    return n / rate


def tone(freq_hz: float, duration_s: float, rate_hz: int, amplitude: float = 0.5) -> np.ndarray:
    """Pure sine tone, used by tests and the synthetic benchmark."""
    t = np.arange(math.floor(duration_s * rate_hz)) / rate_hz
    return (amplitude * np.sin(2 * np.pi * freq_hz * t)).astype(np.float64)
