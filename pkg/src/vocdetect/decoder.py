"""Waveform reconstruction decoder.

Content embeddings are reshaped to a small 2-D grid, renormalized by AdaIN
statistics projected from the concatenated artifact features, then expanded
by upsampling and 2-D convolutions into a tanh-bounded waveform. The decoder
exists to enforce disentanglement, not to produce listenable audio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

ADAIN_EPS = 1e-5


@dataclass
class DecoderConfig:
    grid_h: int = 8
    grid_w: int = 8
    channels: int = 16
    num_upsample_stages: int = 2
    output_len: int = 16384

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def in_channels(self, embed_dim: int) -> int:
        cells = self.grid_h * self.grid_w
        if embed_dim % cells != 0:
            raise ValueError(
                f"embed_dim {embed_dim} not reshapeable to a {self.grid_h}x{self.grid_w} grid"
            )
        return embed_dim // cells

    def out_channels(self) -> int:
        factor = 2**self.num_upsample_stages
        final_cells = (self.grid_h * factor) * (self.grid_w * factor)
        return max(1, math.ceil(self.output_len / final_cells))


def adain(content_map: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
    """Adaptive instance normalization.

    ``content_map`` is (B, C, H, W) (or unbatched (C, H, W)); ``style`` holds
    the already-projected per-channel scale and shift, concatenated to length
    2C. Each channel is standardized by its own spatial statistics and then
    rescaled: gamma * (x - mean) / (std + eps) + beta.
    """
    squeeze = content_map.dim() == 3
    if squeeze:
        content_map = content_map.unsqueeze(0)
        style = style.unsqueeze(0) if style.dim() == 1 else style
    b, c, _, _ = content_map.shape
    gamma, beta = style[:, :c], style[:, c:]
    flat = content_map.reshape(b, c, -1)
    mu = flat.mean(dim=2, keepdim=True)
    sigma = flat.std(dim=2, keepdim=True, unbiased=False)
    out = (flat - mu) / (sigma + ADAIN_EPS)
    out = gamma.unsqueeze(2) * out + beta.unsqueeze(2)
    out = out.reshape(content_map.shape)
    return out.squeeze(0) if squeeze else out


class WaveDecoder(nn.Module):
    """reshape -> AdaIN -> upsample -> Conv2d + (Conv2d+ReLU) x 2
    -> Conv2d + upsample -> tanh -> flatten/trim."""

    def __init__(self, config: DecoderConfig, embed_dim: int, artifact_proj_dim: int):
        super().__init__()
        self.config = config
        self.embed_dim = embed_dim
        c_in = config.in_channels(embed_dim)
        c_mid = config.channels
        self.style_proj = nn.Linear(2 * artifact_proj_dim, 2 * c_in)
        self.conv_in = nn.Conv2d(c_in, c_mid, 3, padding=1)
        self.conv_mid1 = nn.Conv2d(c_mid, c_mid, 3, padding=1)
        self.conv_mid2 = nn.Conv2d(c_mid, c_mid, 3, padding=1)
        self.conv_out = nn.Conv2d(c_mid, config.out_channels(), 3, padding=1)

    def forward(self, c: torch.Tensor, a_s: torch.Tensor, a_g: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if c.shape[1] != self.embed_dim:
            raise ValueError(f"expected content dim {self.embed_dim}, got {c.shape[1]}")
        style = self.style_proj(torch.cat([a_s, a_g], dim=1))
        grid = c.reshape(c.shape[0], -1, cfg.grid_h, cfg.grid_w)
        h = adain(grid, style)
        first = 2 ** (cfg.num_upsample_stages - 1)
        if first > 1:
            h = F.interpolate(h, scale_factor=first, mode="nearest")
        h = self.conv_in(h)
        h = F.relu(self.conv_mid1(h))
        h = F.relu(self.conv_mid2(h))
        h = self.conv_out(h)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = torch.tanh(h)
        flat = h.reshape(h.shape[0], -1)
        if flat.shape[1] < cfg.output_len:
            raise ValueError(
                f"decoder produces {flat.shape[1]} samples, fewer than output_len {cfg.output_len}"
            )
        return flat[:, : cfg.output_len]


def decode(model, c: torch.Tensor, a_s: torch.Tensor, a_g: torch.Tensor) -> torch.Tensor:
    """Reconstruct waveforms from content features conditioned on artifacts."""
    return model.decoder(c, a_s, a_g)
