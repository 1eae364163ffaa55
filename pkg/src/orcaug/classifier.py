"""18-layer residual binary detector over 128x128 spectrogram tensors.

The backbone is the standard BasicBlock stack [2, 2, 2, 2] with a single
input channel and a single-logit sigmoid head. `width` scales every stage's
channel count so desk-scale experiments can trade capacity for speed; the
default (64) matches the stock 18-layer configuration.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .checkpoints import load_checkpoint, save_checkpoint
from .errors import DivergenceError, EmptyDatasetError, ValidationError
from .rng import derive_seed
from .spectrogram import SpectrogramTensor
from .models.common import batch_indices, load_manifest_arrays, runtime_device


@dataclass
class ClassifierConfig:
    width: int = 64
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    warmup_epochs: int = 1


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False),
                                          nn.BatchNorm2d(c_out))

    def forward(self, x):
        h = torch.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return torch.relu(h + self.shortcut(x))


class ResNet18(nn.Module):
    def __init__(self, width: int = 64):
        super().__init__()
        w = width
        self.stem = nn.Sequential(
            nn.Conv2d(1, w, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(w), nn.ReLU(), nn.MaxPool2d(3, stride=2, padding=1))
        stages = []
        c_in = w
        for i, c_out in enumerate((w, 2 * w, 4 * w, 8 * w)):
            stride = 1 if i == 0 else 2
            stages += [BasicBlock(c_in, c_out, stride), BasicBlock(c_out, c_out)]
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(8 * w, 1)

    def forward(self, x):
        h = self.stages(self.stem(x))
        h = torch.nn.functional.adaptive_avg_pool2d(h, 1).flatten(1)
        return self.head(h).squeeze(1)


def lr_schedule(total_steps: int, warmup_steps: int, lr_max: float) -> np.ndarray:
    """Linear warmup from 0 followed by cosine decay to 0 at the last step."""
    if total_steps < 1:
        raise ValidationError("total_steps must be at least 1")
    lrs = np.empty(total_steps)
    decay_span = max(1, total_steps - 1 - warmup_steps)
    for step in range(total_steps):
        if warmup_steps > 0 and step < warmup_steps:
            lrs[step] = lr_max * step / warmup_steps
        else:
            progress = (step - warmup_steps) / decay_span
            lrs[step] = lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))
    return lrs


def train_classifier(dataset_or_manifest, config: ClassifierConfig, seed: int) -> dict:
    """Train with Adam + warmup/cosine schedule on a balanced unit-range manifest."""
    x, y = load_manifest_arrays(dataset_or_manifest, value_range="unit")
    n_pos = int(y.sum().item())
    if n_pos * 2 != len(y):
        raise ValidationError(f"manifest is unbalanced: {n_pos} positives, "
                              f"{len(y) - n_pos} negatives")
    if len(x) == 0:
        raise EmptyDatasetError("empty training manifest")
    device = runtime_device()
    torch.manual_seed(derive_seed(seed, "clf-init"))
    model = ResNet18(config.width).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    x, y = x.to(device), y.to(device)
    data_gen = torch.Generator().manual_seed(derive_seed(seed, "clf-data"))

    steps_per_epoch = math.ceil(len(x) / config.batch_size)
    schedule = lr_schedule(config.epochs * steps_per_epoch,
                           config.warmup_epochs * steps_per_epoch, config.lr)
    step = 0
    history = {"loss": [], "accuracy": [], "lr_trace": schedule.tolist()}
    for epoch in range(config.epochs):
        total, correct, count = 0.0, 0, 0
        for idx in batch_indices(len(x), config.batch_size, data_gen):
            if len(idx) < 2:  # BatchNorm cannot normalize a single sample
                step += 1
                continue
            for group in opt.param_groups:
                group["lr"] = schedule[step]
            logits = model(x[idx])
            loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, y[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(f"classifier loss diverged at epoch {epoch}",
                                      epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            total += loss.item() * len(idx)
            correct += int(((logits > 0) == (y[idx] > 0.5)).sum().item())
            count += len(idx)
        history["loss"].append(total / count)
        history["accuracy"].append(correct / count)
    model.to("cpu")
    return {
        "format": "orcaug-checkpoint",
        "format_version": 1,
        "kind": "classifier",
        "config": asdict(config),
        "state": model.state_dict(),
        "extra": {"history": history, "seed": seed},
    }


def save_classifier(checkpoint: dict, path) -> None:
    save_checkpoint(path, "classifier", checkpoint["config"], checkpoint["state"],
                    checkpoint["extra"])


def load_classifier(path_or_dict) -> tuple[ResNet18, dict]:
    ckpt = path_or_dict if isinstance(path_or_dict, dict) else \
        load_checkpoint(path_or_dict, expected_kind="classifier")
    model = ResNet18(ClassifierConfig(**ckpt["config"]).width)
    model.load_state_dict(ckpt["state"])
    model.eval()
    return model, ckpt


def _as_batch(tensors) -> torch.Tensor:
    arrays = []
    for t in tensors:
        values = t.values if isinstance(t, SpectrogramTensor) else np.asarray(t)
        if values.shape != (128, 128):
            raise ValidationError(f"classifier inputs must be 128x128, got {values.shape}")
        arrays.append(values.astype(np.float32))
    return torch.from_numpy(np.stack(arrays)).unsqueeze(1)


def predict(model: ResNet18, tensors) -> np.ndarray:
    """Sigmoid scores in (0, 1), one per tensor, batch-order preserved."""
    if isinstance(model, dict) or not isinstance(model, nn.Module):
        model, _ = load_classifier(model)
    model.eval()
    device = runtime_device()
    model.to(device)
    batch = _as_batch(tensors)
    scores = []
    with torch.no_grad():
        for start in range(0, len(batch), 256):
            logits = model(batch[start:start + 256].to(device))
            scores.append(torch.sigmoid(logits).cpu().numpy())
    return np.concatenate(scores).astype(np.float64)
