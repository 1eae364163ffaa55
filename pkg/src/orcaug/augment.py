"""Classic augmentation: time-shifted windows and PCA-derived vocalization masks.

Masks follow a fixed recipe: the rank-1 PCA reconstruction of a template
spectrogram (which captures the persistent background pattern shared across
the catalogue) is subtracted out, the residual is clamped to non-negative
energy, and everything at or below the chosen value percentile is zeroed.
The resulting sparse mask composites additively onto real background tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Annotation
from .errors import ValidationError
from .rng import np_rng
from .spectrogram import MelSpectrogram, SpectrogramTensor, to_tensor

DEFAULT_STEP_S = 0.5
DEFAULT_MIN_OVERLAP = 0.5
DEFAULT_PERCENTILE = 80.0
DEFAULT_GAIN_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class VocalizationMask:
    """Sparse non-negative spectrogram residual ready for compositing."""

    values: np.ndarray
    sparsity: float
    source_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.min() < 0 or values.max() > 1 + 1e-6:
            raise ValidationError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", values)


def time_shift_windows(annotation: Annotation, clip_duration_s: float = 3.0,
                       step_s: float = DEFAULT_STEP_S,
                       min_overlap_frac: float = DEFAULT_MIN_OVERLAP) -> list[float]:
    """Start times of the centered window and every valid half-second shift.

    A shifted window is kept while its intersection with the annotation is at
    least min_overlap_frac of min(annotation duration, clip duration), so the
    centered window always qualifies and the result is symmetric around it.
    """
    if not 0 < min_overlap_frac <= 1:
        raise ValidationError("min_overlap_frac must be in (0, 1]")
    if annotation.end_s <= annotation.start_s:
        raise ValidationError("annotation interval is empty")
    center_start = annotation.midpoint_s - clip_duration_s / 2.0
    required = min_overlap_frac * min(annotation.duration_s, clip_duration_s)

    def overlap(offset: float) -> float:
        lo = center_start + offset
        hi = lo + clip_duration_s
        return max(0.0, min(hi, annotation.end_s) - max(lo, annotation.start_s))

    starts = [center_start]
    for direction in (-1, 1):
        k = 1
        while overlap(direction * k * step_s) >= required - 1e-9:
            starts.append(center_start + direction * k * step_s)
            k += 1
    return sorted(starts)


# ---------------------------------------------------------------------------
# Vocalization masks


def _as_unit_tensor(spec) -> np.ndarray:
    if isinstance(spec, MelSpectrogram):
        return to_tensor(spec, range_tag="unit").values.astype(np.float64)
    if isinstance(spec, SpectrogramTensor):
        if spec.range_tag != "unit":
            raise ValidationError("mask construction expects unit-range tensors")
        return spec.values.astype(np.float64)
    raise ValidationError(f"cannot use {type(spec).__name__} as a mask source")


@dataclass(frozen=True)
class BackgroundModel:
    """Catalogue mean and first principal component of flattened tensors."""

    mean: np.ndarray   # (d,)
    pc1: np.ndarray    # (d,) unit norm
    shape: tuple[int, int]

    def reconstruct(self, flat: np.ndarray) -> np.ndarray:
        centered = flat - self.mean
        return self.mean + (centered @ self.pc1) * self.pc1


def fit_background_model(catalogue) -> BackgroundModel:
    """Rank-1 PCA over the flattened catalogue tensors."""
    if len(catalogue) < 2:
        raise ValidationError("mask catalogue needs at least 2 spectrograms")
    tensors = [_as_unit_tensor(s) for s in catalogue]
    shape = tensors[0].shape
    flat = np.stack([t.reshape(-1) for t in tensors])
    mean = flat.mean(axis=0)
    centered = flat - mean
    if not centered.any():
        raise ValidationError("catalogue spectrograms are identical; PCA is degenerate")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return BackgroundModel(mean=mean, pc1=vt[0], shape=shape)


def mask_from_model(model: BackgroundModel, target,
                    percentile_i: float = DEFAULT_PERCENTILE,
                    source_id: str = "") -> VocalizationMask:
    flat = _as_unit_tensor(target).reshape(-1)
    residual = np.maximum(flat - model.reconstruct(flat), 0.0)
    threshold = np.percentile(residual, percentile_i)
    residual[residual <= threshold] = 0.0
    peak = residual.max()
    if peak > 0:
        residual /= peak
    sparsity = float(np.mean(residual == 0.0))
    return VocalizationMask(values=residual.reshape(model.shape).astype(np.float32),
                            sparsity=sparsity, source_id=source_id)


def build_mask(catalogue, target, percentile_i: float = DEFAULT_PERCENTILE) -> VocalizationMask:
    """Fit the catalogue PCA and derive the target's thresholded residual mask."""
    if not 0 <= percentile_i <= 100:
        raise ValidationError("percentile_i must be in [0, 100]")
    return mask_from_model(fit_background_model(catalogue), target, percentile_i)


def overlay_mask(mask: VocalizationMask, background: SpectrogramTensor,
                 gain_alpha: float) -> SpectrogramTensor:
    """Additively composite a mask onto a unit-range background tensor."""
    if background.range_tag != "unit":
        raise ValidationError("backgrounds must be unit-range tensors")
    if not 0 <= gain_alpha <= 1:
        raise ValidationError("gain_alpha must be in [0, 1]")
    if mask.values.shape != background.values.shape:
        raise ValidationError(f"mask shape {mask.values.shape} does not match "
                              f"background {background.values.shape}")
    mixed = np.clip(background.values + gain_alpha * mask.values, 0.0, 1.0)
    return SpectrogramTensor(values=mixed.astype(np.float32), range_tag="unit",
                             provenance="mask")


def composite_masks(catalogue, backgrounds: list[SpectrogramTensor], n: int,
                    percentile_i: float = DEFAULT_PERCENTILE, rng_seed: int = 0,
                    gain_range: tuple[float, float] = DEFAULT_GAIN_RANGE,
                    ) -> list[SpectrogramTensor]:
    """Batch-composite n masked calls onto randomly drawn backgrounds.

    Each composite picks a catalogue template, a background canvas, and a
    mixing gain drawn uniformly from gain_range.
    """
    if n < 0:
        raise ValidationError("n must be non-negative")
    if not backgrounds:
        raise ValidationError("background pool is empty")
    model = fit_background_model(catalogue)
    rng = np_rng(rng_seed, "mask-composites")
    out = []
    for _ in range(n):
        target = catalogue[rng.integers(len(catalogue))]
        canvas = backgrounds[rng.integers(len(backgrounds))]
        gain = float(rng.uniform(*gain_range))
        mask = mask_from_model(model, target, percentile_i)
        out.append(overlay_mask(mask, canvas, gain))
    return out
