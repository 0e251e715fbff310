"""DDPM forward process with a linear schedule, and a clean-feature-conditioned U-Net.

The forward process is implemented twice on purpose: the closed-form marginal
(`forward_diffuse`) used in training, and the stepwise Markov chain
(`iterative_diffuse`) kept purely as a statistical cross-check of the closed
form.  The noise predictor is a small U-Net whose bottleneck is concatenated
channel-wise with the clean image's feature map from the contrastive query
encoder; that concatenation is the path through which denoising gradients
reach the contrastive branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ContractError, ParameterError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances β, retentions α = 1−β, and cumulative retentions ᾱ.

    Arrays are float64 and 0-indexed; step arguments throughout the module are
    1-based (t ∈ [1, T]) to match the process definition.
    """

    num_steps: int
    beta_start: float
    beta_end: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ParameterError(f"step must be in [1, {self.num_steps}], got {t}")

    def beta(self, t: int) -> float:
        self.check_step(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self.check_step(t)
        return float(self.alpha_bars[t - 1])


def make_linear_schedule(
    num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linearly spaced β between the endpoints, with α and ᾱ derived exactly."""
    if num_steps < 1:
        raise ParameterError(f"num_steps must be >= 1, got {num_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        num_steps=num_steps,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
    )


@dataclass(frozen=True)
class DiffusionSample:
    """A noised image, the step it was noised to, and the noise realization used."""

    noisy: torch.Tensor
    step: int
    noise: torch.Tensor


def forward_diffuse(
    x0: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> DiffusionSample:
    """Closed-form marginal: x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε with ε ~ N(0, I)."""
    schedule.check_step(t)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    elif noise.shape != x0.shape:
        raise ContractError(f"noise shape {tuple(noise.shape)} != image shape {tuple(x0.shape)}")
    abar = schedule.alpha_bar(t)
    noisy = math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise
    return DiffusionSample(noisy=noisy, step=t, noise=noise)


def iterative_diffuse(
    x0: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Stepwise Markov chain: x_i = √(1−β_i)·x_{i−1} + √β_i·ε_i, applied t times.

    Exists as a verification oracle for the closed form; training never calls it.
    """
    schedule.check_step(t)
    x = x0
    for i in range(1, t + 1):
        beta = schedule.beta(i)
        eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
        x = math.sqrt(1.0 - beta) * x + math.sqrt(beta) * eps
    return x


def sample_steps(batch: int, schedule: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """Uniform step draw in [1, T] per batch element."""
    return torch.randint(1, schedule.num_steps + 1, (batch,), generator=generator)


def diffuse_batch(
    x0: torch.Tensor,
    steps: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Vectorized closed-form noising with a per-element step: returns (x_t, ε)."""
    if x0.ndim != 4:
        raise ParameterError(f"expected (B, C, H, W) images, got {tuple(x0.shape)}")
    if steps.shape != (x0.shape[0],):
        raise ContractError(f"steps shape {tuple(steps.shape)} != batch size {x0.shape[0]}")
    if steps.min().item() < 1 or steps.max().item() > schedule.num_steps:
        raise ParameterError("steps must lie in [1, T]")
    # coefficients in float64 first, matching the scalar path's rounding
    abars = torch.as_tensor(schedule.alpha_bars, dtype=torch.float64)[steps - 1]
    signal = abars.sqrt().to(x0.dtype).view(-1, 1, 1, 1)
    spread = (1.0 - abars).sqrt().to(x0.dtype).view(-1, 1, 1, 1)
    noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return signal * x0 + spread * noise, noise


def diffusion_loss(noise: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Mean squared elementwise error between the injected and estimated noise."""
    if noise.shape != predicted.shape:
        raise ContractError(
            f"noise shape {tuple(noise.shape)} != prediction shape {tuple(predicted.shape)}"
        )
    return F.mse_loss(predicted, noise)


# ---------------------------------------------------------------------------
# Noise predictor
# ---------------------------------------------------------------------------

def sinusoidal_step_embedding(steps: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic transformer-style embedding of integer diffusion steps."""
    if dim % 2 != 0:
        raise ParameterError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    args = steps.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class StepConditionedBlock(nn.Module):
    """Two conv layers with the step embedding added between them."""

    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        groups = 8 if out_channels % 8 == 0 else 1
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_channels)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_channels)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class NoisePredictor(nn.Module):
    """U-Net estimating the injected noise from (x_t, t) and the clean feature map.

    The encoder downsamples three times (H/8 at the bottleneck); the clean
    feature map q is concatenated channel-wise there, so its spatial shape
    must equal the bottleneck's.  The decoder mirrors the encoder with skip
    connections and emits an image-shaped noise estimate.
    """

    def __init__(self, cond_channels: int, base_width: int = 32, time_dim: int = 128):
        super().__init__()
        if cond_channels < 1:
            raise ParameterError(f"cond_channels must be >= 1, got {cond_channels}")
        w = base_width
        self.cond_channels = cond_channels
        self.time_dim = time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.enc1 = StepConditionedBlock(3, w, time_dim)
        self.down1 = nn.Conv2d(w, w, 3, stride=2, padding=1)
        self.enc2 = StepConditionedBlock(w, 2 * w, time_dim)
        self.down2 = nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1)
        self.enc3 = StepConditionedBlock(2 * w, 4 * w, time_dim)
        self.down3 = nn.Conv2d(4 * w, 4 * w, 3, stride=2, padding=1)
        self.bottleneck = StepConditionedBlock(4 * w + cond_channels, 4 * w, time_dim)
        self.up3 = nn.ConvTranspose2d(4 * w, 4 * w, 2, stride=2)
        self.dec3 = StepConditionedBlock(8 * w, 2 * w, time_dim)
        self.up2 = nn.ConvTranspose2d(2 * w, 2 * w, 2, stride=2)
        self.dec2 = StepConditionedBlock(4 * w, w, time_dim)
        self.up1 = nn.ConvTranspose2d(w, w, 2, stride=2)
        self.dec1 = StepConditionedBlock(2 * w, w, time_dim)
        self.head = nn.Conv2d(w, 3, 1)

    def forward(self, x_t: torch.Tensor, steps: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        if x_t.ndim != 4 or x_t.shape[1] != 3:
            raise ParameterError(f"expected (B, 3, H, W) noisy images, got {tuple(x_t.shape)}")
        if x_t.shape[2] % 8 or x_t.shape[3] % 8:
            raise ParameterError(
                f"input height/width must be multiples of 8, got {tuple(x_t.shape[2:])}"
            )
        t_emb = self.time_mlp(sinusoidal_step_embedding(steps, self.time_dim))

        h1 = self.enc1(x_t, t_emb)
        h2 = self.enc2(self.down1(h1), t_emb)
        h3 = self.enc3(self.down2(h2), t_emb)
        bottom = self.down3(h3)
        if condition.shape[0] != bottom.shape[0] or condition.shape[2:] != bottom.shape[2:]:
            raise ContractError(
                f"condition map {tuple(condition.shape)} does not align with "
                f"bottleneck {tuple(bottom.shape)}"
            )
        if condition.shape[1] != self.cond_channels:
            raise ContractError(
                f"condition has {condition.shape[1]} channels, expected {self.cond_channels}"
            )
        mid = self.bottleneck(torch.cat([bottom, condition], dim=1), t_emb)

        d3 = self.dec3(torch.cat([self.up3(mid), h3], dim=1), t_emb)
        d2 = self.dec2(torch.cat([self.up2(d3), h2], dim=1), t_emb)
        d1 = self.dec1(torch.cat([self.up1(d2), h1], dim=1), t_emb)
        return self.head(d1)


def predict_noise(
    x_t: torch.Tensor, steps: torch.Tensor, condition: torch.Tensor, model: NoisePredictor
) -> torch.Tensor:
    """Estimate the injected noise for a batch of noised images."""
    return model(x_t, steps, condition)
