"""Denoising diffusion model: cosine schedule, U-Net noise predictor, EMA.

The forward process follows x_t = sqrt(A_t) x0 + sqrt(1 - A_t) eps with A_t
the cumulative signal-retention product; sampling runs the ancestral reverse
update with per-step variance beta_t. Timesteps are 1-based throughout, so
`schedule.A(t)` is valid for t in [1, T].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..checkpoints import load_checkpoint, save_checkpoint
from ..errors import DivergenceError, NumericalError, ValidationError
from ..rng import derive_seed
from ..spectrogram import SpectrogramTensor
from .common import batch_indices, load_manifest_arrays, runtime_device

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion coefficients; arrays are 0-indexed for steps 1..T."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    A_bar: np.ndarray            # cumulative products of alpha
    posterior_var: np.ndarray    # sigma_t^2, set to beta_t

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValidationError(f"step {t} outside [1, {self.T}]")
        return t - 1

    def A(self, t: int) -> float:
        return float(self.A_bar[self._check(t)])

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check(t)])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check(t)])


def cosine_retention(t, T: int, s: float = COSINE_OFFSET):
    """Closed-form A_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)."""
    t = np.asarray(t, dtype=np.float64)
    f = np.cos((t / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
    f0 = np.cos(s / (1.0 + s) * np.pi / 2.0) ** 2
    return f / f0


def make_cosine_schedule(T: int = 1000) -> NoiseSchedule:
    if T < 1:
        raise ValidationError("T must be at least 1")
    closed = cosine_retention(np.arange(T + 1), T)
    beta = np.clip(1.0 - closed[1:] / closed[:-1], 0.0, MAX_BETA)
    alpha = 1.0 - beta
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, A_bar=np.cumprod(alpha),
                         posterior_var=beta.copy())


def forward_diffuse(x0, t: int, epsilon, schedule: NoiseSchedule):
    """Noisy sample at step t; works on numpy arrays and torch tensors alike."""
    a = schedule.A(t)
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * epsilon


def reverse_step(x_t, eps_pred, t: int, schedule: NoiseSchedule, z=None):
    """One ancestral denoising update from step t to t-1.

    z must be None (or zeros) at t = 1, standard normal otherwise.
    """
    beta = schedule.beta_at(t)
    alpha = schedule.alpha_at(t)
    a_bar = schedule.A(t)
    mean = (x_t - beta / math.sqrt(1.0 - a_bar) * eps_pred) / math.sqrt(alpha)
    if z is None or t == 1:
        return mean
    return mean + math.sqrt(schedule.posterior_var[t - 1]) * z


# ---------------------------------------------------------------------------
# U-Net noise predictor


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


def _norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class _ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, c_out)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.temb_proj(torch.nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class _SelfAttention(nn.Module):
    """Single-head attention over spatial positions."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = _norm(channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


@dataclass
class DdpmConfig:
    image_size: int = 128
    channels: tuple = (128, 128, 256, 256, 512, 512)
    num_res_blocks: int = 2
    attention_levels: tuple = (4,)   # level index; 4 is the 8x8 level at 128 input
    T: int = 1000
    epochs: int = 150
    batch_size: int = 32
    lr: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    ema_decay: float = 0.9999
    label: int | None = 1
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.attention_levels = tuple(self.attention_levels)
        self.adam_betas = tuple(self.adam_betas)
        if self.image_size % (2 ** (len(self.channels) - 1)) != 0:
            raise ValidationError("image_size must survive len(channels)-1 halvings")


class UNet(nn.Module):
    """Noise predictor; output shape always equals input shape."""

    def __init__(self, config: DdpmConfig):
        super().__init__()
        chans = config.channels
        temb_dim = chans[0] * 4
        self.temb_dim_in = chans[0]
        self.temb = nn.Sequential(nn.Linear(chans[0], temb_dim), nn.SiLU(),
                                  nn.Linear(temb_dim, temb_dim))
        self.stem = nn.Conv2d(1, chans[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_attns = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        skip_chans = [chans[0]]
        c_prev = chans[0]
        for level, c_out in enumerate(chans):
            blocks, attns = nn.ModuleList(), nn.ModuleList()
            for _ in range(config.num_res_blocks):
                blocks.append(_ResBlock(c_prev, c_out, temb_dim))
                attns.append(_SelfAttention(c_out) if level in config.attention_levels
                             else nn.Identity())
                c_prev = c_out
                skip_chans.append(c_out)
            self.down_blocks.append(blocks)
            self.down_attns.append(attns)
            if level < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(c_out, c_out, 3, stride=2, padding=1))
                skip_chans.append(c_out)

        self.mid1 = _ResBlock(c_prev, c_prev, temb_dim)
        self.mid_attn = _SelfAttention(c_prev)
        self.mid2 = _ResBlock(c_prev, c_prev, temb_dim)

        self.up_blocks = nn.ModuleList()
        self.up_attns = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for level in reversed(range(len(chans))):
            c_out = chans[level]
            blocks, attns = nn.ModuleList(), nn.ModuleList()
            for _ in range(config.num_res_blocks + 1):
                blocks.append(_ResBlock(c_prev + skip_chans.pop(), c_out, temb_dim))
                attns.append(_SelfAttention(c_out) if level in config.attention_levels
                             else nn.Identity())
                c_prev = c_out
            self.up_blocks.append(blocks)
            self.up_attns.append(attns)
            if level > 0:
                self.upsamples.append(nn.Conv2d(c_out, c_out, 3, padding=1))

        self.out_norm = _norm(chans[0])
        self.out_conv = nn.Conv2d(chans[0], 1, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.temb(timestep_embedding(t, self.temb_dim_in))
        h = self.stem(x)
        skips = [h]
        for level, (blocks, attns) in enumerate(zip(self.down_blocks, self.down_attns)):
            for block, attn in zip(blocks, attns):
                h = attn(block(h, temb))
                skips.append(h)
            if level < len(self.downsamples):
                h = self.downsamples[level](h)
                skips.append(h)
        h = self.mid2(self.mid_attn(self.mid1(h, temb)), temb)
        for i, (blocks, attns) in enumerate(zip(self.up_blocks, self.up_attns)):
            for block, attn in zip(blocks, attns):
                h = attn(block(torch.cat([h, skips.pop()], dim=1), temb))
            if i < len(self.upsamples):
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)
        return self.out_conv(torch.nn.functional.silu(self.out_norm(h)))


class Ema:
    """Exponential moving average of named parameters."""

    def __init__(self, model: nn.Module, decay: float):
        self.decay = decay
        self.shadow = {name: p.detach().clone()
                       for name, p in model.named_parameters()}

    def update(self, model: nn.Module) -> None:
        with torch.no_grad():
            for name, p in model.named_parameters():
                self.shadow[name].mul_(self.decay).add_(p.detach(), alpha=1 - self.decay)

    def state_dict(self, model: nn.Module) -> dict:
        """Full state dict with parameters replaced by their EMA shadows."""
        state = {k: v.clone() for k, v in model.state_dict().items()}
        state.update({k: v.clone() for k, v in self.shadow.items()})
        return state


def ddpm_loss(x0: torch.Tensor, model, schedule: NoiseSchedule,
              generator: torch.Generator | None = None) -> torch.Tensor:
    """MSE between drawn and predicted noise at uniformly sampled steps."""
    if len(x0) == 0:
        raise ValidationError("empty batch")
    t = torch.randint(1, schedule.T + 1, (len(x0),), generator=generator).to(x0.device)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype).to(x0.device)
    a = torch.from_numpy(schedule.A_bar).to(x0)[t - 1][:, None, None, None]
    x_t = torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps
    pred = model(x_t, t)
    loss = (eps - pred).pow(2).mean()
    if not torch.isfinite(loss):
        raise NumericalError("non-finite diffusion loss")
    return loss


def train_ddpm(dataset_or_manifest, config: DdpmConfig) -> dict:
    """Train the noise predictor with AdamW and an EMA copy for evaluation."""
    x, _ = load_manifest_arrays(dataset_or_manifest, label=config.label,
                                value_range="symmetric")
    device = runtime_device()
    torch.manual_seed(derive_seed(config.seed, "ddpm-init"))
    model = UNet(config).to(device)
    schedule = make_cosine_schedule(config.T)
    ema = Ema(model, config.ema_decay)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, betas=config.adam_betas,
                            weight_decay=config.weight_decay)
    data_gen = torch.Generator().manual_seed(derive_seed(config.seed, "ddpm-data"))
    noise_gen = torch.Generator().manual_seed(derive_seed(config.seed, "ddpm-noise"))
    history = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in batch_indices(len(x), config.batch_size, data_gen):
            try:
                loss = ddpm_loss(x[idx].to(device), model, schedule, noise_gen)
            except NumericalError:
                raise DivergenceError(f"DDPM loss diverged at epoch {epoch}",
                                      epoch=epoch) from None
            opt.zero_grad()
            loss.backward()
            opt.step()
            ema.update(model)
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
    model.to("cpu")
    ema_cpu = {k: v.cpu() for k, v in ema.state_dict(model).items()}
    return {
        "format": "orcaug-checkpoint",
        "format_version": 1,
        "kind": "ddpm",
        "config": asdict(config),
        "state": {"model": model.state_dict(), "ema": ema_cpu},
        "extra": {"loss_history": history},
    }


def save_ddpm(checkpoint: dict, path) -> None:
    save_checkpoint(path, "ddpm", checkpoint["config"], checkpoint["state"],
                    checkpoint["extra"])


def load_ddpm(path_or_dict, use_ema: bool = True) -> tuple[UNet, dict]:
    ckpt = path_or_dict if isinstance(path_or_dict, dict) else \
        load_checkpoint(path_or_dict, expected_kind="ddpm")
    config = DdpmConfig(**ckpt["config"])
    model = UNet(config)
    model.load_state_dict(ckpt["state"]["ema" if use_ema else "model"])
    model.eval()
    return model, ckpt


def sample_ddpm(path_or_dict, n: int, seed: int, steps: int | None = None,
                batch_size: int = 64) -> list[SpectrogramTensor]:
    """Ancestral sampling with EMA weights; chains use independent RNG streams
    derived from the master seed, so results do not depend on batching."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    model, ckpt = load_ddpm(path_or_dict, use_ema=True)
    device = runtime_device()
    model.to(device)
    config = DdpmConfig(**ckpt["config"])
    schedule = make_cosine_schedule(steps or config.T)
    size = config.image_size
    out = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            count = min(batch_size, n - start)
            gens = [torch.Generator().manual_seed(derive_seed(seed, "ddpm-chain", start + i))
                    for i in range(count)]
            x = torch.stack([torch.randn(1, size, size, generator=g)
                             for g in gens]).to(device)
            for t in range(schedule.T, 0, -1):
                t_batch = torch.full((count,), t, dtype=torch.long, device=device)
                eps_pred = model(x, t_batch)
                z = None
                if t > 1:
                    z = torch.stack([torch.randn(1, size, size, generator=g)
                                     for g in gens]).to(device)
                x = reverse_step(x, eps_pred, t, schedule, z)
            for img in x.squeeze(1).clamp(-1.0, 1.0).cpu().numpy():
                out.append(SpectrogramTensor(values=(img + 1.0) / 2.0,
                                             range_tag="unit", provenance="ddpm"))
    return out
