"""Statistical gate rejecting generated spectrograms far from the real data.

Real tensors are flattened and projected onto enough principal components to
explain 95% of their variance (capped at 50). The gate keeps a candidate when
its Mahalanobis distance in that space is at most the j-th percentile of the
real samples' own distances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .checkpoints import load_checkpoint, save_checkpoint
from .errors import ValidationError
from .spectrogram import SpectrogramTensor

DEFAULT_PERCENTILE_J = 95.0
DEFAULT_RIDGE = 1e-6
MAX_COMPONENTS = 50
EXPLAINED_VARIANCE_TARGET = 0.95


@dataclass(frozen=True)
class FilterModel:
    mean: np.ndarray             # (d,) flattened-input mean
    basis: np.ndarray            # (d, k) orthonormal principal directions
    pc_mean: np.ndarray          # (k,) mean of real projections
    pc_cov_inverse: np.ndarray   # (k, k) ridge-regularized inverse covariance
    tau: float
    percentile_j: float

    @property
    def k(self) -> int:
        return self.basis.shape[1]


def _flatten(x) -> np.ndarray:
    if isinstance(x, SpectrogramTensor):
        x = x.values
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _project(model: FilterModel, x) -> np.ndarray:
    return (_flatten(x) - model.mean) @ model.basis


def fit_filter(x_real, k: int | None = None, percentile_j: float = DEFAULT_PERCENTILE_J,
               ridge: float = DEFAULT_RIDGE) -> FilterModel:
    """Fit the PCA projection, projected covariance, and distance threshold.

    k=None selects the smallest component count explaining 95% of variance,
    capped at MAX_COMPONENTS. Requires more real samples than components.
    """
    if not 0 <= percentile_j <= 100:
        raise ValidationError("percentile_j must be in [0, 100]")
    flat = np.stack([_flatten(x) for x in x_real])
    n = len(flat)
    mean = flat.mean(axis=0)
    centered = flat - mean
    if not centered.any():
        raise ValidationError("real samples are identical; covariance is degenerate")
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    explained = svals ** 2 / np.sum(svals ** 2)
    if k is None:
        k = int(np.searchsorted(np.cumsum(explained), EXPLAINED_VARIANCE_TARGET) + 1)
        k = min(k, MAX_COMPONENTS, int((svals > 1e-12).sum()))
    if k < 1:
        raise ValidationError("no usable principal components")
    if n <= k:
        raise ValidationError(f"need more than {k} real samples to fit a "
                              f"{k}-component filter, got {n}")
    basis = vt[:k].T
    projections = centered @ basis
    pc_mean = projections.mean(axis=0)
    cov = np.cov(projections, rowvar=False, ddof=1).reshape(k, k)
    cov += ridge * np.eye(k)
    pc_cov_inverse = np.linalg.inv(cov)
    model = FilterModel(mean=mean, basis=basis, pc_mean=pc_mean,
                        pc_cov_inverse=pc_cov_inverse, tau=0.0,
                        percentile_j=percentile_j)
    # Score the fitting samples through the same code path used at filter
    # time, so threshold comparisons are bit-consistent (matters at j = 100).
    distances = np.array([mahalanobis(model, x) for x in x_real])
    tau = float(np.percentile(distances, percentile_j))  # linear interpolation
    return replace(model, tau=tau)


def mahalanobis(model: FilterModel, x) -> float:
    """Distance of x's projection from the real-data center."""
    delta = _project(model, x) - model.pc_mean
    return float(np.sqrt(delta @ model.pc_cov_inverse @ delta))


def filter_samples(model: FilterModel, x_gen) -> tuple[list, int]:
    """Split candidates into (kept, rejected_count), preserving order."""
    kept = [x for x in x_gen if mahalanobis(model, x) <= model.tau]
    return kept, len(x_gen) - len(kept)


def save_filter(model: FilterModel, path) -> None:
    save_checkpoint(path, "qfilter",
                    config={"percentile_j": model.percentile_j, "k": model.k},
                    state={"mean": model.mean, "basis": model.basis,
                           "pc_mean": model.pc_mean,
                           "pc_cov_inverse": model.pc_cov_inverse},
                    extra={"tau": model.tau})


def load_filter(path) -> FilterModel:
    ckpt = load_checkpoint(path, expected_kind="qfilter")
    state = ckpt["state"]
    return FilterModel(mean=np.asarray(state["mean"]), basis=np.asarray(state["basis"]),
                       pc_mean=np.asarray(state["pc_mean"]),
                       pc_cov_inverse=np.asarray(state["pc_cov_inverse"]),
                       tau=float(ckpt["extra"]["tau"]),
                       percentile_j=float(ckpt["config"]["percentile_j"]))
