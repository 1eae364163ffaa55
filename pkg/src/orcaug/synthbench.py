"""Synthetic two-site benchmark: harmonic FM calls over colored noise.

Stands in for the field recordings when exercising the full pipeline at desk
scale. Site profiles differ in noise color, level, and transient rate, which
emulates the deployment shift between a training and an evaluation site while
keeping the call-parameter distribution identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import STANDARD_RATE_HZ, AudioClip, CLIP_DURATION_S, write_wav
from .dataset import Annotation, DatasetManifest, build_dataset
from .errors import ValidationError
from .rng import derive_seed, np_rng

REF_RMS = 0.05  # 0 dB reference amplitude for calls and noise beds

CONTOURS = ("flat", "up-sweep", "down-sweep", "sinusoidal-FM")
NOISE_COLORS = ("white", "pink", "brown")

_FM_DEPTH = 0.15
_FM_RATE_HZ = 3.0


@dataclass(frozen=True)
class CallParams:
    f0_hz: float
    n_harmonics: int
    duration_s: float
    contour: str
    snr_db: float

    def peak_f0_hz(self) -> float:
        if self.contour == "up-sweep":
            return 2.0 * self.f0_hz
        if self.contour == "sinusoidal-FM":
            return (1.0 + _FM_DEPTH) * self.f0_hz
        return self.f0_hz

    def validate(self) -> None:
        if not 300.0 <= self.f0_hz <= 3000.0:
            raise ValidationError(f"f0 {self.f0_hz} Hz outside [300, 3000]")
        if not 3 <= self.n_harmonics <= 8:
            raise ValidationError(f"n_harmonics {self.n_harmonics} outside [3, 8]")
        if not 0.5 <= self.duration_s <= 2.0:
            raise ValidationError(f"duration {self.duration_s} s outside [0.5, 2.0]")
        if self.contour not in CONTOURS:
            raise ValidationError(f"unknown contour {self.contour!r}")
        if self.peak_f0_hz() * self.n_harmonics > 12000.0:
            raise ValidationError(
                f"harmonic {self.n_harmonics} of a {self.contour} call at "
                f"{self.f0_hz} Hz exceeds the 12 kHz band")


@dataclass(frozen=True)
class SiteProfile:
    noise_color: str = "pink"
    noise_level_db: float = 0.0
    transient_rate_per_min: float = 0.0

    def validate(self) -> None:
        if self.noise_color not in NOISE_COLORS:
            raise ValidationError(f"unknown noise color {self.noise_color!r}")
        if self.transient_rate_per_min < 0:
            raise ValidationError("transient rate must be non-negative")


def _instantaneous_f0(params: CallParams, n: int, rate: int, rng) -> np.ndarray:
    t = np.arange(n) / rate
    if params.contour == "flat":
        return np.full(n, params.f0_hz)
    if params.contour == "up-sweep":
        return params.f0_hz * (1.0 + t / params.duration_s)
    if params.contour == "down-sweep":
        return params.f0_hz * (1.0 - 0.5 * t / params.duration_s)
    phase = rng.uniform(0, 2 * np.pi)
    return params.f0_hz * (1.0 + _FM_DEPTH * np.sin(2 * np.pi * _FM_RATE_HZ * t + phase))


def synth_call(params: CallParams, rng_seed: int) -> AudioClip:
    """Render a harmonic stack following the requested FM contour.

    Output RMS is REF_RMS * 10^(snr_db/20), so a call mixed into a noise bed
    at REF_RMS sits at snr_db relative to that bed.
    """
    params.validate()
    rate = STANDARD_RATE_HZ
    n = round(params.duration_s * rate)
    rng = np_rng(rng_seed, "call")
    f0 = _instantaneous_f0(params, n, rate, rng)
    phase = 2.0 * np.pi * np.cumsum(f0) / rate
    wave = np.zeros(n)
    for k in range(1, params.n_harmonics + 1):
        wave += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    ramp = max(1, round(0.1 * n))
    envelope = np.ones(n)
    fade = 0.5 * (1.0 - np.cos(np.linspace(0, np.pi, ramp)))
    envelope[:ramp] = fade
    envelope[-ramp:] = fade[::-1]
    wave *= envelope
    rms = np.sqrt(np.mean(wave ** 2))
    gain = 10.0 ** (params.snr_db / 20.0)
    if rms > 0 and np.isfinite(gain):
        wave = wave / rms * REF_RMS * gain
    else:
        wave = np.zeros(n)
    return AudioClip(samples=np.clip(wave, -1, 1).astype(np.float32),
                     sample_rate_hz=rate, source_file="<synthetic>")


def colored_noise(color: str, n: int, rng) -> np.ndarray:
    """Unit-RMS noise with flat (white), 1/f (pink), or 1/f^2 (brown) power."""
    white = rng.standard_normal(n)
    if color == "white":
        shaped = white
    else:
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n)
        freqs[0] = freqs[1]
        exponent = 0.5 if color == "pink" else 1.0
        shaped = np.fft.irfft(spectrum / freqs ** exponent, n)
    return shaped / np.sqrt(np.mean(shaped ** 2))


def _render_noise_bed(site: SiteProfile, duration_s: float, rng) -> np.ndarray:
    n = round(duration_s * STANDARD_RATE_HZ)
    bed = colored_noise(site.noise_color, n, rng) * REF_RMS * 10 ** (site.noise_level_db / 20)
    n_transients = rng.poisson(site.transient_rate_per_min * duration_s / 60.0)
    for _ in range(n_transients):
        width = round(rng.uniform(0.005, 0.04) * STANDARD_RATE_HZ)
        pos = rng.integers(0, max(1, n - width))
        burst = rng.standard_normal(width) * np.exp(-np.linspace(0, 5, width))
        level = REF_RMS * 10 ** ((site.noise_level_db + rng.uniform(8, 16)) / 20)
        bed[pos:pos + width] += burst * level
    return bed


def _draw_call_params(rng, snr_range: tuple[float, float]) -> CallParams:
    f0 = float(np.exp(rng.uniform(np.log(320.0), np.log(1200.0))))
    contour = CONTOURS[rng.integers(len(CONTOURS))]
    peak = {"flat": f0, "up-sweep": 2 * f0, "down-sweep": f0,
            "sinusoidal-FM": (1 + _FM_DEPTH) * f0}[contour]
    n_max = min(8, int(12000.0 // peak))
    n_harmonics = int(rng.integers(3, n_max + 1))
    return CallParams(
        f0_hz=f0, n_harmonics=n_harmonics,
        duration_s=float(rng.uniform(0.5, 2.0)),
        contour=contour, snr_db=float(rng.uniform(*snr_range)),
    )


def _render_site_files(site: SiteProfile, n_calls: int, out_audio: Path, seed: int,
                       site_tag: str, snr_range: tuple[float, float],
                       calls_per_file: int = 4, file_duration_s: float = 30.0,
                       annotation_jitter_s: float = 0.5) -> list[Annotation]:
    """Write recordings with embedded calls; return jittered annotations."""
    out_audio.mkdir(parents=True, exist_ok=True)
    annotations = []
    n_files = int(np.ceil(n_calls / calls_per_file))
    call_index = 0
    for file_no in range(n_files):
        rng = np_rng(seed, site_tag, "file", file_no)
        bed = _render_noise_bed(site, file_duration_s, rng)
        file_id = f"rec_{site_tag}_{file_no:04d}.wav"
        calls_here = min(calls_per_file, n_calls - call_index)
        slot = file_duration_s / calls_per_file
        for slot_no in range(calls_here):
            params = _draw_call_params(rng, snr_range)
            lo = slot_no * slot + 0.8
            hi = (slot_no + 1) * slot - params.duration_s - 0.8
            start = float(rng.uniform(lo, max(lo, hi)))
            call = synth_call(params, derive_seed(seed, site_tag, "call", call_index))
            i0 = round(start * STANDARD_RATE_HZ)
            bed[i0:i0 + len(call.samples)] += call.samples
            ann_start = max(0.0, start - rng.uniform(0, annotation_jitter_s))
            ann_end = min(file_duration_s, start + params.duration_s
                          + rng.uniform(0, annotation_jitter_s))
            annotations.append(Annotation(file_id=file_id, start_s=round(ann_start, 3),
                                          end_s=round(ann_end, 3)))
            call_index += 1
        write_wav(out_audio / file_id, np.clip(bed, -1, 1), STANDARD_RATE_HZ, "float32")
    return annotations


def _write_annotation_csv(annotations: list[Annotation], path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("file,start,end,label\n")
        for ann in annotations:
            fh.write(f"{ann.file_id},{ann.start_s},{ann.end_s},{ann.label}\n")


def make_benchmark(site_a: SiteProfile, site_b: SiteProfile, n_train: int, n_test: int,
                   rng_seed: int, out_dir, n_catalogue: int = 64,
                   n_background_pool: int = 192,
                   snr_range: tuple[float, float] = (-3.0, 9.0),
                   ) -> tuple[DatasetManifest, DatasetManifest]:
    """Emit a two-site benchmark tree and build its train/test datasets.

    Output layout under out_dir:
      site_a/audio, site_a/annotations.csv   training-site recordings
      site_b/audio, site_b/annotations.csv   test-site recordings
      site_b/backgrounds/*.wav               call-free clips outside the test files
      catalogue/*.wav                        clean high-SNR template calls
      train_data/, test_data/                built tensor datasets
      benchmark.json                         path index
    """
    if n_train <= 0 or n_test <= 0:
        raise ValidationError("n_train and n_test must be positive")
    site_a.validate()
    site_b.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ann_a = _render_site_files(site_a, n_train // 2, out_dir / "site_a" / "audio",
                               rng_seed, "a", snr_range)
    ann_b = _render_site_files(site_b, n_test // 2, out_dir / "site_b" / "audio",
                               rng_seed, "b", snr_range)
    _write_annotation_csv(ann_a, out_dir / "site_a" / "annotations.csv")
    _write_annotation_csv(ann_b, out_dir / "site_b" / "annotations.csv")

    # Clean template calls: high SNR over a faint white bed, call centered.
    catalogue_dir = out_dir / "catalogue"
    catalogue_dir.mkdir(exist_ok=True)
    n_clip = round(CLIP_DURATION_S * STANDARD_RATE_HZ)
    for i in range(n_catalogue):
        rng = np_rng(rng_seed, "catalogue", i)
        params = _draw_call_params(rng, snr_range=(18.0, 24.0))
        bed = colored_noise("white", n_clip, rng) * REF_RMS * 10 ** (-20 / 20)
        call = synth_call(params, derive_seed(rng_seed, "catalogue", "call", i))
        i0 = (n_clip - len(call.samples)) // 2
        bed[i0:i0 + len(call.samples)] += call.samples
        write_wav(catalogue_dir / f"call_{i:04d}.wav", np.clip(bed, -1, 1),
                  STANDARD_RATE_HZ, "float32")

    # Background pool at the test site, from files disjoint with the test set.
    background_dir = out_dir / "site_b" / "backgrounds"
    background_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_background_pool):
        rng = np_rng(rng_seed, "bgpool", i)
        bed = _render_noise_bed(site_b, CLIP_DURATION_S, rng)
        write_wav(background_dir / f"bg_{i:04d}.wav", np.clip(bed, -1, 1),
                  STANDARD_RATE_HZ, "float32")

    train_manifest = build_dataset(ann_a, out_dir / "site_a" / "audio",
                                   out_dir / "train_data", derive_seed(rng_seed, "train"))
    test_manifest = build_dataset(ann_b, out_dir / "site_b" / "audio",
                                  out_dir / "test_data", derive_seed(rng_seed, "test"))

    index = {
        "seed": rng_seed,
        "site_a": {"noise_color": site_a.noise_color, "noise_level_db": site_a.noise_level_db,
                   "transient_rate_per_min": site_a.transient_rate_per_min},
        "site_b": {"noise_color": site_b.noise_color, "noise_level_db": site_b.noise_level_db,
                   "transient_rate_per_min": site_b.transient_rate_per_min},
        "train_data": "train_data",
        "test_data": "test_data",
        "catalogue": "catalogue",
        "mask_backgrounds": "site_b/backgrounds",
        "annotations_a": "site_a/annotations.csv",
        "annotations_b": "site_b/annotations.csv",
    }
    with open(out_dir / "benchmark.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return train_manifest, test_manifest
