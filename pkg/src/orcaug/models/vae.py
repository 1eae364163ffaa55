"""Convolutional VAE for spectrogram synthesis.

Encoder: stride-2 convs (kernel 4) ending in two fully connected heads for
the posterior mean and log-variance. Decoder mirrors it with transposed
convs and a tanh output, so decoded samples always land in (-1, 1).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..checkpoints import load_checkpoint, save_checkpoint
from ..errors import DivergenceError, EmptyDatasetError, NumericalError, ValidationError
from ..rng import derive_seed
from ..spectrogram import SpectrogramTensor
from .common import batch_indices, load_manifest_arrays, runtime_device


@dataclass
class VaeConfig:
    latent_dim: int = 32
    channels: tuple = (32, 64, 128)
    image_size: int = 128
    epochs: int = 150
    batch_size: int = 64
    lr: float = 1e-3
    beta: float = 1.0
    label: int | None = 1
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.image_size % (2 ** len(self.channels)) != 0:
            raise ValidationError("image_size must be divisible by 2^len(channels)")


class VaeModel(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        self.config = config
        chans = config.channels
        self.bottleneck = config.image_size // (2 ** len(chans))
        enc = []
        c_in = 1
        for c_out in chans:
            enc += [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1), nn.ReLU()]
            c_in = c_out
        self.encoder = nn.Sequential(*enc)
        flat = chans[-1] * self.bottleneck ** 2
        self.fc_mu = nn.Linear(flat, config.latent_dim)
        self.fc_logvar = nn.Linear(flat, config.latent_dim)
        self.fc_decode = nn.Linear(config.latent_dim, flat)
        dec = []
        rev = list(reversed(chans))  # e.g. (128, 64, 32)
        c_in = rev[0]
        for c_out in rev:
            dec += [nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1), nn.ReLU()]
            c_in = c_out
        dec += [nn.Conv2d(c_in, 1, 3, padding=1), nn.Tanh()]
        self.decoder_net = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.encoder(x).flatten(1)
        return self.fc_mu(h), self.fc_logvar(h)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc_decode(z)
        h = h.view(-1, self.config.channels[-1], self.bottleneck, self.bottleneck)
        return self.decoder_net(h)

    def forward(self, x: torch.Tensor, epsilon: torch.Tensor):
        mu, log_var = self.encode(x)
        sigma = torch.exp(0.5 * log_var)
        z = reparameterize(mu, sigma, epsilon)
        return self.decode(z), mu, log_var


def reparameterize(mu, sigma, epsilon):
    """z = mu + sigma * epsilon, the differentiable posterior sample."""
    sigma = torch.as_tensor(sigma)
    if (sigma <= 0).any():
        raise ValidationError("sigma must be positive elementwise")
    return torch.as_tensor(mu) + sigma * torch.as_tensor(epsilon)


def vae_loss(x, x_hat, mu, log_var, beta: float = 1.0):
    """Pixel-summed reconstruction error plus beta-weighted KL, batch-averaged."""
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    x, x_hat = torch.as_tensor(x), torch.as_tensor(x_hat)
    mu, log_var = torch.as_tensor(mu), torch.as_tensor(log_var)
    for name, tensor in (("x", x), ("x_hat", x_hat), ("mu", mu), ("log_var", log_var)):
        if not torch.isfinite(tensor).all():
            raise NumericalError(f"non-finite values in {name}")
    recon = (x - x_hat).pow(2).flatten(1).sum(dim=1).mean()
    kl = 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=1).mean()
    return recon + beta * kl


def kl_divergence(mu, log_var):
    """Closed-form KL(q || N(0, I)) per batch item, averaged."""
    mu, log_var = torch.as_tensor(mu), torch.as_tensor(log_var)
    return 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=1).mean()


def train_vae(dataset_or_manifest, config: VaeConfig) -> dict:
    """Train on symmetric-range tensors; returns an in-memory checkpoint dict."""
    x, _ = load_manifest_arrays(dataset_or_manifest, label=config.label,
                                value_range="symmetric")
    if len(x) == 0:
        raise EmptyDatasetError("empty training manifest")
    device = runtime_device()
    torch.manual_seed(derive_seed(config.seed, "vae-init"))
    model = VaeModel(config).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    data_gen = torch.Generator().manual_seed(derive_seed(config.seed, "vae-data"))
    noise_gen = torch.Generator().manual_seed(derive_seed(config.seed, "vae-noise"))
    history = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in batch_indices(len(x), config.batch_size, data_gen):
            batch = x[idx].to(device)
            epsilon = torch.randn(len(batch), config.latent_dim,
                                  generator=noise_gen).to(device)
            x_hat, mu, log_var = model(batch, epsilon)
            loss = vae_loss(batch, x_hat, mu, log_var, beta=config.beta)
            if not torch.isfinite(loss):
                raise DivergenceError(f"VAE loss diverged at epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        history.append(total / count)
    model.to("cpu")
    return _checkpoint_dict(model, config, history)


def _checkpoint_dict(model: VaeModel, config: VaeConfig, history: list[float]) -> dict:
    return {
        "format": "orcaug-checkpoint",
        "format_version": 1,
        "kind": "vae",
        "config": asdict(config),
        "state": model.state_dict(),
        "extra": {"loss_history": history},
    }


def save_vae(checkpoint: dict, path) -> None:
    save_checkpoint(path, "vae", checkpoint["config"], checkpoint["state"],
                    checkpoint["extra"])


def load_vae(path_or_dict) -> tuple[VaeModel, dict]:
    ckpt = path_or_dict if isinstance(path_or_dict, dict) else \
        load_checkpoint(path_or_dict, expected_kind="vae")
    config = VaeConfig(**ckpt["config"])
    model = VaeModel(config)
    model.load_state_dict(ckpt["state"])
    model.eval()
    return model, ckpt


def sample_vae(path_or_dict, n: int, seed: int) -> list[SpectrogramTensor]:
    """Decode n prior draws into unit-range tensors tagged provenance=vae."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    model, _ = load_vae(path_or_dict)
    device = runtime_device()
    model.to(device)
    gen = torch.Generator().manual_seed(derive_seed(seed, "vae-sample"))
    out = []
    with torch.no_grad():
        for start in range(0, n, 256):
            count = min(256, n - start)
            z = torch.randn(count, model.config.latent_dim, generator=gen).to(device)
            decoded = model.decode(z).squeeze(1).cpu().numpy()
            for img in decoded:
                unit = (img + 1.0) / 2.0
                out.append(SpectrogramTensor(values=unit, range_tag="unit",
                                             provenance="vae"))
    return out
