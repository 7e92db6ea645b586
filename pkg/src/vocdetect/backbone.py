"""Raw-waveform encoders and classification heads.

Two structurally identical encoders (content and artifact) share a trunk
design: a fixed mel-spaced band-pass filterbank applied by strided 1-D
convolution with log-compressed magnitude envelopes, a stack of residual
blocks with per-example channel normalization and multiplicative
feature-map gates, and a GRU whose final hidden state is the clip
embedding. The artifact embedding is split into
domain-specific and domain-agnostic features by two affine projection heads;
two single-layer heads classify domain and authenticity.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LEAK = 0.3

# gain of the log envelope compression applied to filterbank outputs;
# sized so typical band magnitudes (~0.03) land in the responsive region
FRONT_LOG_GAIN = 30.0

# authenticity class indices
REAL, FAKE = 0, 1


@dataclass
class BackboneConfig:
    num_filters: int = 20
    num_res_blocks: int = 4
    channels: int = 24
    recurrent_dim: int = 64
    embed_dim: int = 64
    artifact_proj_dim: int = 32
    num_domains: int = 2
    input_len: int = 16384
    sample_rate: int = 16000
    frontend_kernel: int = 65
    frontend_stride: int = 8

    def validate(self) -> None:
        dims = (
            self.num_filters,
            self.num_res_blocks,
            self.channels,
            self.recurrent_dim,
            self.embed_dim,
            self.artifact_proj_dim,
            self.input_len,
        )
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1: {self}")
        if self.num_domains < 2:
            raise ValueError("num_domains must be >= 2 (real plus at least one vocoder)")
        if self.frontend_kernel % 2 == 0:
            raise ValueError("frontend_kernel must be odd")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def paper_scale_config(num_domains: int) -> BackboneConfig:
    """Preset mirroring the reference raw-waveform backbone for real-data runs."""
    return BackboneConfig(
        num_filters=20,
        num_res_blocks=6,
        channels=128,
        recurrent_dim=1024,
        embed_dim=1024,
        artifact_proj_dim=256,
        num_domains=num_domains,
        input_len=65536,
        frontend_kernel=1025,
        frontend_stride=16,
    )


def _hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel: np.ndarray | float) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def filterbank_cutoffs(config: BackboneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mel-spaced (low, high) cutoff frequencies in Hz, clamped so each
    filter keeps a strictly positive bandwidth."""
    sr = config.sample_rate
    min_low, min_band = 30.0, 50.0
    edges = _mel_to_hz(np.linspace(_hz_to_mel(min_low), _hz_to_mel(sr / 2 - min_band), config.num_filters + 1))
    low = np.clip(edges[:-1], min_low, sr / 2 - min_band)
    high = np.clip(edges[1:], low + min_band, sr / 2)
    return low, high


def build_sinc_filterbank(config: BackboneConfig) -> torch.Tensor:
    """Fixed band-pass impulse responses from the clamped cutoffs, Hamming
    windowed; (num_filters, 1, kernel) float64, each filter unit-L2."""
    sr = config.sample_rate
    low, high = filterbank_cutoffs(config)
    k = config.frontend_kernel
    tau = (np.arange(k) - (k - 1) / 2) / sr
    window = np.hamming(k)
    filters = np.empty((config.num_filters, k))
    for i in range(config.num_filters):
        with np.errstate(invalid="ignore", divide="ignore"):
            h = (np.sin(2 * np.pi * high[i] * tau) - np.sin(2 * np.pi * low[i] * tau)) / (np.pi * tau)
        h[(k - 1) // 2] = 2.0 * (high[i] - low[i])
        h *= window
        filters[i] = h / np.linalg.norm(h)
    return torch.from_numpy(filters).unsqueeze(1)


class FeatureGate(nn.Module):
    """Per-channel multiplicative scaling from time-averaged activations."""

    def __init__(self, channels: int):
        super().__init__()
        self.fc = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = torch.sigmoid(self.fc(x.mean(dim=2)))
        return x * g.unsqueeze(2)


class ResBlock1d(nn.Module):
    """conv -> per-example channel norm -> leaky relu -> conv -> residual add
    -> max-pool -> feature gate."""

    def __init__(self, c_in: int, c_out: int, pool: int):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.InstanceNorm1d(c_out, affine=True, track_running_stats=False)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.shortcut = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else None
        self.pool_size = pool
        self.gate = FeatureGate(c_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(x)
        h = F.leaky_relu(self.norm1(h), LEAK)
        h = self.conv2(h)
        h = h + (self.shortcut(x) if self.shortcut is not None else x)
        k = min(self.pool_size, h.shape[2])
        if k > 1:
            h = F.max_pool1d(h, k)
        return self.gate(h)


class RawEncoder(nn.Module):
    """Filterbank frontend + residual trunk + recurrent aggregation."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.register_buffer("filters", build_sinc_filterbank(config))
        pools = [4] + [2] * (config.num_res_blocks - 1)
        chans = [config.num_filters] + [config.channels] * config.num_res_blocks
        for i in range(config.num_res_blocks):
            self.add_module(f"resblock{i}", ResBlock1d(chans[i], chans[i + 1], pools[i]))
        self.gru = nn.GRU(config.channels, config.recurrent_dim, batch_first=True)
        self.out_proj = (
            nn.Linear(config.recurrent_dim, config.embed_dim)
            if config.embed_dim != config.recurrent_dim
            else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.dim() != 2 or x.shape[1] != cfg.input_len:
            raise ValueError(f"expected (B, {cfg.input_len}) waveforms, got {tuple(x.shape)}")
        h = F.conv1d(x.unsqueeze(1), self.filters, stride=cfg.frontend_stride, padding=cfg.frontend_kernel // 2)
        # log-compressed band envelopes keep low-level artifact energy
        # (noise floors, hum tones) visible next to the voiced harmonics
        h = torch.log1p(FRONT_LOG_GAIN * torch.abs(h))
        if h.shape[2] >= 2:
            h = F.max_pool1d(h, 2)
        for i in range(cfg.num_res_blocks):
            h = getattr(self, f"resblock{i}")(h)
        _, hidden = self.gru(h.transpose(1, 2))
        emb = hidden[-1]
        if self.out_proj is not None:
            emb = self.out_proj(emb)
        return emb


class DetectorModel(nn.Module):
    """Full parameter tree: both encoders, projection and classification
    heads, the reconstruction decoder, and the MI critic projections."""

    def __init__(self, config: BackboneConfig, decoder_config=None):
        from .decoder import DecoderConfig, WaveDecoder

        super().__init__()
        config.validate()
        self.config = config
        self.decoder_config = decoder_config or DecoderConfig(output_len=config.input_len)
        self.content_encoder = RawEncoder(config)
        self.artifact_encoder = RawEncoder(config)
        self.proj_s = nn.Linear(config.embed_dim, config.artifact_proj_dim)
        self.proj_g = nn.Linear(config.embed_dim, config.artifact_proj_dim)
        self.head_domain = nn.Linear(config.artifact_proj_dim, config.num_domains)
        self.head_auth = nn.Linear(config.artifact_proj_dim, 2)
        self.decoder = WaveDecoder(self.decoder_config, config.embed_dim, config.artifact_proj_dim)
        self.mi_proj_c = nn.Linear(config.embed_dim, config.artifact_proj_dim)
        self.mi_proj_a = nn.Linear(config.artifact_proj_dim, config.artifact_proj_dim)

    @property
    def dtype(self) -> torch.dtype:
        return self.head_auth.weight.dtype


def _component_generator(seed: int, name: str) -> torch.Generator:
    h = hashlib.blake2s(f"{seed}/{name}".encode()).digest()
    g = torch.Generator()
    g.manual_seed(int.from_bytes(h[:8], "little") & 0x7FFFFFFFFFFFFFFF)
    return g


def _kaiming_fill(module: nn.Module, gen: torch.Generator) -> None:
    gain_sq = 2.0 / (1.0 + LEAK**2)
    for name, p in sorted(module.named_parameters()):
        with torch.no_grad():
            if p.dim() >= 2:
                fan_in = p.shape[1] * int(np.prod(p.shape[2:])) if p.dim() > 2 else p.shape[1]
                p.normal_(0.0, math.sqrt(gain_sq / fan_in), generator=gen)
            elif "weight" in name:
                p.fill_(1.0)  # norm scale
            else:
                p.zero_()


def init_model(
    config: BackboneConfig,
    seed: int,
    decoder_config=None,
    dtype: torch.dtype = torch.float32,
) -> DetectorModel:
    """Kaiming-initialized model, deterministic in seed; each top-level
    component draws from its own stream so encoders start independent."""
    model = DetectorModel(config, decoder_config)
    for name, child in sorted(model.named_children()):
        _kaiming_fill(child, _component_generator(seed, name))
    return model.to(dtype)


def encode(model: DetectorModel, batch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(content, domain-specific artifact, domain-agnostic artifact) per clip."""
    x = torch.as_tensor(np.asarray(batch), dtype=model.dtype) if not torch.is_tensor(batch) else batch
    c = model.content_encoder(x)
    a = model.artifact_encoder(x)
    return c, model.proj_s(a), model.proj_g(a)


def classify_domain(model: DetectorModel, a_s: torch.Tensor) -> torch.Tensor:
    return model.head_domain(a_s)


def classify_authenticity(model: DetectorModel, a_g: torch.Tensor) -> torch.Tensor:
    return model.head_auth(a_g)


def score_batch(model: DetectorModel, batch) -> np.ndarray:
    """P(fake) for each waveform; the domain head plays no role here."""
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(batch), dtype=model.dtype) if not torch.is_tensor(batch) else batch
        a = model.artifact_encoder(x)
        logits = model.head_auth(model.proj_g(a))
        return torch.softmax(logits, dim=1)[:, FAKE].cpu().numpy()


def predict(model: DetectorModel, waveform) -> float:
    """Fake-probability of a single preprocessed waveform."""
    x = np.asarray(waveform)
    if x.ndim == 1:
        x = x[None, :]
    return float(score_batch(model, x)[0])
