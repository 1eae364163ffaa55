"""Time-shift window enumeration and vocalization-mask construction."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orcaug.augment import (
    VocalizationMask,
    build_mask,
    composite_masks,
    fit_background_model,
    mask_from_model,
    overlay_mask,
    time_shift_windows,
)
from orcaug.dataset import Annotation
from orcaug.errors import ValidationError
from orcaug.spectrogram import SpectrogramTensor

from conftest import random_unit_tensor


# -- time_shift_windows -------------------------------------------------------


def test_three_second_annotation_gives_seven_windows():
    # overlap(delta) = 3 - |delta| >= 1.5  =>  offsets {0, ±0.5, ±1.0, ±1.5}
    starts = time_shift_windows(Annotation("f", 10.0, 13.0))
    offsets = [round(s - 10.0, 6) for s in starts]
    assert offsets == [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]


def test_one_second_annotation_gives_seven_windows():
    # centered window [9, 12]; overlap = min(1, 2 - |delta|) >= 0.5
    starts = time_shift_windows(Annotation("f", 10.0, 11.0))
    offsets = [round(s - 9.0, 6) for s in starts]
    assert offsets == [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]


def test_full_overlap_requirement_keeps_only_centered_window():
    starts = time_shift_windows(Annotation("f", 10.0, 13.0), min_overlap_frac=1.0)
    assert starts == [10.0]


def test_result_always_contains_centered_window():
    ann = Annotation("f", 4.2, 5.9)
    centered = ann.midpoint_s - 1.5
    assert any(abs(s - centered) < 1e-12 for s in time_shift_windows(ann))


def test_symmetric_offsets_for_contained_annotation():
    ann = Annotation("f", 20.0, 21.2)
    starts = np.array(time_shift_windows(ann))
    offsets = starts - (ann.midpoint_s - 1.5)
    np.testing.assert_allclose(sorted(offsets), sorted(-offsets), atol=1e-9)


@settings(max_examples=1000, deadline=None)
@given(start=st.floats(0.0, 500.0), duration=st.floats(0.05, 12.0))
def test_every_window_satisfies_overlap_inequality(start, duration):
    ann = Annotation("f", start, start + duration)
    starts = time_shift_windows(ann)
    assert len(starts) >= 1
    required = 0.5 * min(duration, 3.0)
    for s in starts:
        overlap = max(0.0, min(s + 3.0, ann.end_s) - max(s, ann.start_s))
        assert overlap >= required - 1e-6


def test_invalid_overlap_fraction_rejected():
    with pytest.raises(ValidationError):
        time_shift_windows(Annotation("f", 0, 1), min_overlap_frac=0.0)


# -- masks ---------------------------------------------------------------


def _catalogue_with_structure(rng, n=12):
    """Tensors sharing one dominant background pattern plus per-item ridges."""
    base = rng.uniform(0.2, 0.5, (128, 128))
    tensors = []
    for i in range(n):
        values = base * rng.uniform(0.6, 1.4)
        row = 10 + (i * 9) % 100
        values[row:row + 3, 20:110] += 0.45  # the "call"
        tensors.append(SpectrogramTensor(values=np.clip(values, 0, 1).astype(np.float32),
                                         range_tag="unit"))
    return tensors


def test_zero_residual_gives_all_zero_mask(rng):
    catalogue = _catalogue_with_structure(rng)
    model = fit_background_model(catalogue)
    # A target equal to its own rank-1 reconstruction has nothing left.
    flat = catalogue[0].values.astype(np.float64).reshape(-1)
    target = SpectrogramTensor(
        values=np.clip(model.reconstruct(flat), 0, 1).reshape(128, 128).astype(np.float32),
        range_tag="unit")
    flat2 = target.values.astype(np.float64).reshape(-1)
    # reconstruct() is idempotent on its own output only up to clipping, so
    # feed the projection of the clipped tensor directly.
    mask = mask_from_model(model, SpectrogramTensor(
        values=np.clip(model.reconstruct(flat2), 0, 1).reshape(128, 128).astype(np.float32),
        range_tag="unit"))
    assert mask.sparsity >= 0.99


def test_percentile_100_gives_all_zero_mask(rng):
    catalogue = _catalogue_with_structure(rng)
    mask = build_mask(catalogue, catalogue[3], percentile_i=100.0)
    assert np.all(mask.values == 0.0)
    assert mask.sparsity == 1.0


def test_sparsity_meets_percentile(rng):
    # Rank-order oracle: zeroing at the 80th value percentile leaves at
    # least 80% of bins at zero.
    catalogue = _catalogue_with_structure(rng)
    mask = build_mask(catalogue, catalogue[5], percentile_i=80.0)
    assert mask.sparsity >= 0.80
    assert np.all(mask.values >= 0.0)
    assert mask.values.max() <= 1.0


def test_declared_sparsity_matches_measurement(rng):
    catalogue = _catalogue_with_structure(rng)
    mask = build_mask(catalogue, catalogue[2], percentile_i=70.0)
    assert mask.sparsity == pytest.approx(np.mean(mask.values == 0.0))


def test_rank1_subtraction_never_grows_residual(rng):
    catalogue = _catalogue_with_structure(rng)
    model = fit_background_model(catalogue)
    for tensor in catalogue[:5]:
        flat = tensor.values.astype(np.float64).reshape(-1)
        centered_norm = np.linalg.norm(flat - model.mean)
        residual_norm = np.linalg.norm(flat - model.reconstruct(flat))
        assert residual_norm <= centered_norm + 1e-9


def test_small_catalogue_rejected(rng):
    with pytest.raises(ValidationError):
        build_mask([random_unit_tensor(rng)], random_unit_tensor(rng))


def test_identical_catalogue_rejected(rng):
    tensor = random_unit_tensor(rng)
    with pytest.raises(ValidationError):
        build_mask([tensor, tensor], tensor)


# -- overlay_mask -------------------------------------------------------------


def _mask_of(values):
    values = np.asarray(values, dtype=np.float32)
    return VocalizationMask(values=values, sparsity=float(np.mean(values == 0)))


def test_zero_gain_is_identity(rng):
    background = random_unit_tensor(rng)
    mask = _mask_of(np.full((128, 128), 0.5))
    out = overlay_mask(mask, background, 0.0)
    assert np.array_equal(out.values, background.values)
    assert out.provenance == "mask"


def test_zero_mask_is_identity(rng):
    background = random_unit_tensor(rng)
    out = overlay_mask(_mask_of(np.zeros((128, 128))), background, 1.0)
    assert np.array_equal(out.values, background.values)


def test_clamping_at_one():
    background = SpectrogramTensor(values=np.full((128, 128), 0.7, dtype=np.float32),
                                   range_tag="unit")
    mask = _mask_of(np.full((128, 128), 0.6))
    out = overlay_mask(mask, background, 1.0)
    assert np.all(out.values == 1.0)  # 0.7 + 0.6 clamps


def test_output_dominates_background(rng):
    background = random_unit_tensor(rng)
    mask = _mask_of(rng.uniform(0, 1, (128, 128)))
    out = overlay_mask(mask, background, 0.8)
    assert np.all(out.values >= background.values - 1e-6)
    assert out.values.max() <= 1.0


def test_gain_out_of_range_rejected(rng):
    with pytest.raises(ValidationError):
        overlay_mask(_mask_of(np.zeros((128, 128))), random_unit_tensor(rng), 1.5)


def test_composite_batch(rng):
    catalogue = _catalogue_with_structure(rng)
    backgrounds = [random_unit_tensor(rng) for _ in range(6)]
    out = composite_masks(catalogue, backgrounds, 10, rng_seed=3)
    assert len(out) == 10
    assert all(t.provenance == "mask" for t in out)
    repeat = composite_masks(catalogue, backgrounds, 10, rng_seed=3)
    for a, b in zip(out, repeat):
        assert np.array_equal(a.values, b.values)
