"""Residual inference model (encoder) and generator.

Encoder, for a channel schedule c[0..L] with L = log2(resolution / 4)::

    conv5x5(C_img -> c0) -> avgpool
    [res-block(c[i-1] -> c[i]) -> avgpool]   for i = 1 .. L-1
    res-block(c[L-1] -> c[L])                 at 4x4
    flatten -> FC(16 c[L] -> 2 M_z) -> split (mu, log_var)

Generator, the mirror image::

    FC(M_z -> 16 c[L]) -> ReLU -> reshape (c[L], 4, 4)
    res-block(c[L] -> c[L])                   at 4x4
    [upsample -> res-block(c[i+1] -> c[i])]   for i = L-1 .. 0
    conv5x5(c0 -> C_img), linear output

Residual blocks are pre-activation: ``skip(x) + conv3(act(conv3(act(x))))``
with a bias-free 1x1 projection on the skip path when channels change.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import NetConfig
from .errors import ShapeError
from .losses import LatentStats


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, slope: float = 0.2):
        super().__init__()
        self.slope = slope
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, bias=False) if in_ch != out_ch else None

    def forward(self, x):
        h = self.conv1(F.leaky_relu(x, self.slope))
        h = self.conv2(F.leaky_relu(h, self.slope))
        s = x if self.skip is None else self.skip(x)
        return s + h


class Encoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.stem = nn.Conv2d(cfg.image_channels, c[0], 5, padding=2)
        self.blocks = nn.ModuleList(
            ResBlock(c[i - 1], c[i], cfg.activation_slope) for i in range(1, len(c))
        )
        self.fc = nn.Linear(c[-1] * 16, 2 * cfg.latent_dim)

    def forward(self, x):
        slope = self.cfg.activation_slope
        h = F.avg_pool2d(self.stem(x), 2)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < len(self.blocks) - 1:
                h = F.avg_pool2d(h, 2)
        h = F.leaky_relu(h, slope).flatten(1)
        out = self.fc(h)
        mu, log_var = out.chunk(2, dim=1)
        return mu, log_var


class Generator(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.fc = nn.Linear(cfg.latent_dim, c[-1] * 16)
        self.base_block = ResBlock(c[-1], c[-1], cfg.activation_slope)
        self.blocks = nn.ModuleList(
            ResBlock(c[i + 1], c[i], cfg.activation_slope) for i in reversed(range(len(c) - 1))
        )
        self.head = nn.Conv2d(c[0], cfg.image_channels, 5, padding=2)

    def forward(self, z):
        c = self.cfg.channels
        h = F.relu(self.fc(z)).view(z.shape[0], c[-1], 4, 4)
        h = self.base_block(h)
        for block in self.blocks:
            h = block(F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.head(F.leaky_relu(h, self.cfg.activation_slope))


# modules whose output feeds a leaky activation get the rectifier gain
_LINEAR_OUTPUT = ("fc", "head", "skip")


def _init_params(module: nn.Module, seed: int):
    gen = torch.Generator().manual_seed(int(seed))
    slope = module.cfg.activation_slope
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            nn.init.zeros_(p)
            continue
        fan_in = p[0].numel()
        owner = name.rsplit(".", 1)[0].split(".")[-1]
        if owner in _LINEAR_OUTPUT:
            gain = 1.0
        else:
            gain = math.sqrt(2.0 / (1.0 + slope**2))
        if owner == "conv2":
            # keep the residual branch small at init so blocks start near identity
            gain *= 0.1
        with torch.no_grad():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * (gain / math.sqrt(fan_in)))


def build_encoder(cfg: NetConfig, seed: int = 0, dtype=torch.float32) -> Encoder:
    enc = Encoder(cfg).to(dtype)
    _init_params(enc, seed)
    return enc


def build_generator(cfg: NetConfig, seed: int = 0, dtype=torch.float32) -> Generator:
    gen = Generator(cfg).to(dtype)
    _init_params(gen, seed)
    return gen


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def encode(enc: Encoder, x) -> LatentStats:
    cfg = enc.cfg
    if x.dim() != 4 or tuple(x.shape[1:]) != cfg.image_shape:
        raise ShapeError(f"expected images of shape (B, {', '.join(map(str, cfg.image_shape))}), got {tuple(x.shape)}")
    mu, log_var = enc(x)
    return LatentStats(mu, log_var)


def decode(gen: Generator, z):
    cfg = gen.cfg
    if z.dim() != 2 or z.shape[1] != cfg.latent_dim:
        raise ShapeError(f"expected latents of shape (B, {cfg.latent_dim}), got {tuple(z.shape)}")
    return gen(z)


@torch.no_grad()
def reconstruct(enc: Encoder, gen: Generator, x):
    """Deterministic reconstruction through the posterior mean."""
    return decode(gen, encode(enc, x).mu)


@torch.no_grad()
def latent_interpolate(enc: Encoder, gen: Generator, x_a, x_b, steps: int):
    """Decode evenly spaced points on the segment between the posterior means of two images.

    ``x_a`` and ``x_b`` are single images (C, H, W). Returns (steps, C, H, W).
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    mu = encode(enc, torch.stack([x_a, x_b])).mu
    lam = torch.linspace(0.0, 1.0, steps, dtype=mu.dtype).unsqueeze(1)
    codes = (1.0 - lam) * mu[0] + lam * mu[1]
    # exact endpoints regardless of linspace rounding
    codes[0], codes[-1] = mu[0], mu[1]
    return decode(gen, codes)
