"""DCGAN-style generator/discriminator with PhaseShuffle.

The generator projects the latent vector to a 4x4 seed and doubles the
resolution per transposed conv, halving channels, down to a single tanh
channel. The discriminator stacks stride-2 convs with LeakyReLU; PhaseShuffle
after each of the first four convs perturbs feature maps along the time axis
so the discriminator cannot key on absolute call position.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..checkpoints import load_checkpoint, save_checkpoint
from ..errors import DivergenceError, ValidationError
from ..rng import derive_seed
from ..spectrogram import SpectrogramTensor
from .common import batch_indices, load_manifest_arrays, runtime_device

EPS = 1e-7


@dataclass
class GanConfig:
    latent_dim: int = 100
    image_size: int = 128
    g_base_channels: int = 1024
    d_base_channels: int = 64
    phase_shuffle_n: int = 2
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-4
    adam_betas: tuple = (0.5, 0.999)
    label: int | None = 1
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        size = self.image_size
        if size < 8 or size & (size - 1):
            raise ValidationError("image_size must be a power of two, at least 8")


def shift_time_reflect(x: torch.Tensor, k: int) -> torch.Tensor:
    """Shift the last axis by k samples, reflecting (without edge repeat) at
    the boundaries: out[t] = x[reflect(t + k)]."""
    width = x.shape[-1]
    if width == 1 or k == 0:
        return x.clone()
    period = 2 * (width - 1)
    idx = (torch.arange(width, device=x.device) + k) % period
    idx = torch.where(idx >= width, period - idx, idx)
    return x[..., idx]


def phase_shuffle(feature_map: torch.Tensor, max_shift_n: int = 2,
                  rng: torch.Generator | None = None) -> torch.Tensor:
    """Shift each channel's time axis by a uniform integer in [-n, n].

    Accepts (B, C, H, W) maps or a bare (H, W) map treated as one channel.
    """
    if max_shift_n < 0:
        raise ValidationError("max_shift_n must be non-negative")
    squeeze = feature_map.dim() == 2
    x = feature_map[None, None] if squeeze else feature_map
    if max_shift_n == 0:
        out = x.clone()
    else:
        b, c = x.shape[0], x.shape[1]
        shifts = torch.randint(-max_shift_n, max_shift_n + 1, (b, c),
                               generator=rng).to(x.device)
        out = torch.empty_like(x)
        for k in range(-max_shift_n, max_shift_n + 1):
            where = shifts == k
            if where.any():
                out[where] = shift_time_reflect(x[where], k)
    return out[0, 0] if squeeze else out


class _PhaseShuffle(nn.Module):
    def __init__(self, max_shift_n: int):
        super().__init__()
        self.max_shift_n = max_shift_n
        self.generator = None  # set by the trainer for reproducible shifts

    def forward(self, x):
        if not self.training or self.max_shift_n == 0:
            return x
        return phase_shuffle(x, self.max_shift_n, self.generator)


class Generator(nn.Module):
    def __init__(self, config: GanConfig):
        super().__init__()
        n_up = int(math.log2(config.image_size // 4))
        chans = [config.g_base_channels // (2 ** i) for i in range(n_up)]
        layers = [nn.ConvTranspose2d(config.latent_dim, chans[0], 4, 1, 0, bias=False),
                  nn.BatchNorm2d(chans[0]), nn.ReLU()]
        for i in range(n_up - 1):
            layers += [nn.ConvTranspose2d(chans[i], chans[i + 1], 4, 2, 1, bias=False),
                       nn.BatchNorm2d(chans[i + 1]), nn.ReLU()]
        layers += [nn.ConvTranspose2d(chans[-1], 1, 4, 2, 1), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z[:, :, None, None])


class Discriminator(nn.Module):
    def __init__(self, config: GanConfig):
        super().__init__()
        n_down = max(1, int(math.log2(config.image_size // 8)))
        final_kernel = config.image_size // (2 ** n_down)
        layers = []
        c_in = 1
        self.shuffles = []
        for i in range(n_down):
            c_out = config.d_base_channels * (2 ** i)
            layers.append(nn.Conv2d(c_in, c_out, 4, 2, 1, bias=False))
            if i > 0:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.LeakyReLU(0.2))
            if i < 4:
                shuffle = _PhaseShuffle(config.phase_shuffle_n)
                self.shuffles.append(shuffle)
                layers.append(shuffle)
            c_in = c_out
        layers += [nn.Conv2d(c_in, 1, final_kernel, 1, 0), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x).flatten(1).squeeze(1)


def gan_losses(d_real, d_fake):
    """Discriminator and (non-saturating) generator losses from probabilities."""
    d_real = torch.as_tensor(d_real).clamp(EPS, 1.0 - EPS)
    d_fake = torch.as_tensor(d_fake).clamp(EPS, 1.0 - EPS)
    loss_d = -torch.log(d_real).mean() - torch.log(1.0 - d_fake).mean()
    loss_g = -torch.log(d_fake).mean()
    return loss_d, loss_g


def train_gan(dataset_or_manifest, config: GanConfig) -> dict:
    """Alternate single D/G steps per batch; returns a checkpoint dict."""
    x, _ = load_manifest_arrays(dataset_or_manifest, label=config.label,
                                value_range="symmetric")
    device = runtime_device()
    torch.manual_seed(derive_seed(config.seed, "gan-init"))
    generator = Generator(config).to(device)
    discriminator = Discriminator(config).to(device)
    shuffle_gen = torch.Generator().manual_seed(derive_seed(config.seed, "gan-shuffle"))
    for shuffle in discriminator.shuffles:
        shuffle.generator = shuffle_gen
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr,
                             betas=config.adam_betas)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr,
                             betas=config.adam_betas)
    data_gen = torch.Generator().manual_seed(derive_seed(config.seed, "gan-data"))
    noise_gen = torch.Generator().manual_seed(derive_seed(config.seed, "gan-noise"))
    history = {"loss_d": [], "loss_g": []}
    for epoch in range(config.epochs):
        sums = [0.0, 0.0]
        count = 0
        for idx in batch_indices(len(x), config.batch_size, data_gen):
            if len(idx) < 2:  # BatchNorm cannot normalize a single sample
                continue
            real = x[idx].to(device)
            z = torch.randn(len(real), config.latent_dim, generator=noise_gen).to(device)
            fake = generator(z)

            d_real = discriminator(real)
            d_fake = discriminator(fake.detach())
            loss_d, _ = gan_losses(d_real, d_fake)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            _, loss_g = gan_losses(d_real.detach(), discriminator(fake))
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()

            if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
                raise DivergenceError(f"GAN loss diverged at epoch {epoch}", epoch=epoch)
            sums[0] += loss_d.item() * len(real)
            sums[1] += loss_g.item() * len(real)
            count += len(real)
        history["loss_d"].append(sums[0] / count)
        history["loss_g"].append(sums[1] / count)
    generator.to("cpu")
    discriminator.to("cpu")
    return {
        "format": "orcaug-checkpoint",
        "format_version": 1,
        "kind": "gan",
        "config": asdict(config),
        "state": {"generator": generator.state_dict(),
                  "discriminator": discriminator.state_dict()},
        "extra": {"loss_history": history},
    }


def save_gan(checkpoint: dict, path) -> None:
    save_checkpoint(path, "gan", checkpoint["config"], checkpoint["state"],
                    checkpoint["extra"])


def load_gan(path_or_dict) -> tuple[Generator, dict]:
    ckpt = path_or_dict if isinstance(path_or_dict, dict) else \
        load_checkpoint(path_or_dict, expected_kind="gan")
    config = GanConfig(**ckpt["config"])
    generator = Generator(config)
    generator.load_state_dict(ckpt["state"]["generator"])
    generator.eval()
    return generator, ckpt


def sample_gan(path_or_dict, n: int, seed: int) -> list[SpectrogramTensor]:
    """Generate n unit-range tensors tagged provenance=gan."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    generator, ckpt = load_gan(path_or_dict)
    device = runtime_device()
    generator.to(device)
    latent = ckpt["config"]["latent_dim"]
    gen = torch.Generator().manual_seed(derive_seed(seed, "gan-sample"))
    out = []
    with torch.no_grad():
        for start in range(0, n, 256):
            count = min(256, n - start)
            z = torch.randn(count, latent, generator=gen).to(device)
            imgs = generator(z).squeeze(1).cpu().numpy()
            for img in imgs:
                out.append(SpectrogramTensor(values=(img + 1.0) / 2.0,
                                             range_tag="unit", provenance="gan"))
    return out
