"""Shared data loading and batching for the torch-based models."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch

from ..dataset import read_manifest, read_spec_array
from ..errors import EmptyDatasetError, ValidationError


def runtime_device() -> torch.device:
    """Compute device selected via the ORCAUG_DEVICE env var (default cpu)."""
    return torch.device(os.environ.get("ORCAUG_DEVICE", "cpu"))


def resolve_manifest(dataset_or_manifest) -> Path:
    """Accept either a dataset directory or a manifest file path."""
    path = Path(dataset_or_manifest)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise ValidationError(f"no manifest at {path}")
    return path


def load_manifest_arrays(dataset_or_manifest, label: int | None = None,
                         value_range: str = "symmetric") -> tuple[torch.Tensor, torch.Tensor]:
    """Materialize manifest tensors as (N, 1, H, W) float32 plus labels.

    Stored tensors are unit-range; value_range="symmetric" remaps to [-1, 1]
    for the generative models, "unit" leaves them as-is for the classifier.
    """
    manifest_file = resolve_manifest(dataset_or_manifest)
    root = manifest_file.parent
    manifest = read_manifest(manifest_file)
    entries = [e for e in manifest.entries if label is None or e.label == label]
    if not entries:
        raise EmptyDatasetError(f"{manifest_file} has no entries"
                                + (f" with label {label}" if label is not None else ""))
    arrays = np.stack([read_spec_array(root / e.sample_path) for e in entries])
    if value_range == "symmetric":
        arrays = arrays * 2.0 - 1.0
    elif value_range != "unit":
        raise ValidationError(f"unknown value range {value_range!r}")
    x = torch.from_numpy(np.ascontiguousarray(arrays, dtype=np.float32)).unsqueeze(1)
    y = torch.tensor([e.label for e in entries], dtype=torch.float32)
    return x, y


def batch_indices(n: int, batch_size: int, generator: torch.Generator):
    """Yield one epoch of shuffled index batches."""
    perm = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]
