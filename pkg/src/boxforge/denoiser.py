"""Conditional noise-prediction network: a small encoder-decoder with skips.

The network denoises the joint (RGB, analog-bit mask) state, so its output
has 3 + b channels; the input additionally carries the normalized distance
map and the b-channel encoded class map, concatenated at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    """Channel arithmetic plus capacity knobs for the denoiser.

    ``bit_width`` is the analog-bit channel count b; the joint state has
    3 + b channels and the conditioning adds 1 + b more on the input side.
    """

    bit_width: int
    base_width: int = 32
    depth: int = 2
    time_embed_dim: int = 64

    @property
    def out_channels(self) -> int:
        return 3 + self.bit_width

    @property
    def in_channels(self) -> int:
        return self.out_channels + 1 + self.bit_width

    def to_dict(self) -> dict:
        return {
            "bit_width": self.bit_width,
            "base_width": self.base_width,
            "depth": self.depth,
            "time_embed_dim": self.time_embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**{k: int(v) for k, v in d.items()})


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos position features for integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, time_dim):
        super().__init__()
        groups = math.gcd(8, out_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = F.silu(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class ConditionalUNet(nn.Module):
    """Encoder-decoder with skip connections and a sinusoidal time embedding.

    Accepts (B, in_channels, H, W) plus integer timesteps (B,) or a scalar;
    H and W are padded internally to a multiple of 2**depth and cropped back.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        w, d, tdim = config.base_width, config.depth, config.time_embed_dim

        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.stem = nn.Conv2d(config.in_channels, w, 3, padding=1)

        widths = [w * (2**k) for k in range(d + 1)]
        self.down_blocks = nn.ModuleList(
            [ResBlock(widths[k], widths[k + 1], tdim) for k in range(d)]
        )
        self.downsamples = nn.ModuleList(
            [nn.Conv2d(widths[k + 1], widths[k + 1], 4, stride=2, padding=1) for k in range(d)]
        )
        self.mid = ResBlock(widths[d], widths[d], tdim)
        self.up_blocks = nn.ModuleList(
            [ResBlock(widths[k + 1] * 2, widths[k], tdim) for k in reversed(range(d))]
        )
        self.head = nn.Conv2d(w, config.out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.tensor([int(t)], device=x.device)
        if t.ndim == 0:
            t = t[None]
        if t.shape[0] == 1 and x.shape[0] > 1:
            t = t.expand(x.shape[0])
        temb = self.time_mlp(sinusoidal_embedding(t, self.config.time_embed_dim).to(x.dtype))

        h, w = x.shape[-2:]
        mult = 2**self.config.depth
        pad_h = (-h) % mult
        pad_w = (-w) % mult
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")

        out = self.stem(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            out = block(out, temb)
            skips.append(out)
            out = down(out)
        out = self.mid(out, temb)
        for block, skip in zip(self.up_blocks, reversed(skips)):
            out = F.interpolate(out, size=skip.shape[-2:], mode="nearest")
            out = block(torch.cat([out, skip], dim=1), temb)
        out = self.head(out)
        return out[..., :h, :w]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
