"""Diffusion-conditioned autoencoder classifier.

Wiring, in forward order:

* encoder: strided conv stack on the clean trial, channel attention on its
  last block, adaptive average pooling to the latent vector;
* autoencoder decoder: upsampling stack from the attended encoder features;
  its intermediate maps condition the U-Net levels of matching resolution;
* U-Net denoiser: estimates x0 from x_t with a sinusoidal step embedding;
* decoder head: clean input and U-Net output are concatenated onto the last
  decoder map before the final convolution;
* classifier: a spline (KAN) layer on the pooled latent.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

from ..alignment import N_VISEMES
from ..errors import ConfigError, ValidationError


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    length: int
    widths: tuple[int, int, int] = (32, 64, 128)
    enc_widths: tuple[int, int, int] = (32, 64, 64)
    kernel: int = 5
    groups: int = 8
    temb_dim: int = 32
    attn_reduction: int = 4
    kan_grid: int = 5
    kan_range: float = 2.0
    kan_order: int = 3
    n_classes: int = N_VISEMES

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "enc_widths", tuple(self.enc_widths))
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.length % 8:
            raise ConfigError(f"trial length {self.length} must be divisible by 8")
        if len(self.widths) != 3 or len(self.enc_widths) != 3:
            raise ConfigError("widths and enc_widths need exactly three entries")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel size must be odd")
        if self.kan_grid < 2:
            raise ConfigError("kan_grid needs at least two points")

    @property
    def latent_dim(self) -> int:
        return self.enc_widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["enc_widths"] = list(self.enc_widths)
        return d


def _norm(ch: int, groups: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(groups, ch), ch)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate with one MLP shared by every channel.

    Each channel is described by its temporal mean and standard deviation
    plus the across-channel average of those; the gate is therefore
    permutation-equivariant and equal for channels with equal statistics.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(2, channels // reduction)
        self.local = nn.Linear(2, hidden)
        self.context = nn.Linear(2, hidden, bias=False)
        self.out = nn.Linear(hidden, 1)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        stats = torch.stack([x.mean(dim=-1), x.std(dim=-1)], dim=-1)  # (B, C, 2)
        ctx = stats.mean(dim=1, keepdim=True)
        h = F.silu(self.local(stats) + self.context(ctx))
        return torch.sigmoid(self.out(h)).squeeze(-1)  # (B, C)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.weights(x).unsqueeze(-1)


class KANLayer(nn.Module):
    """y_j = sum_i (w_ji u_i + sum_k c_jik B_k(u_i)) + b_j with u = r tanh(x / r).

    ``B_k`` are uniform B-splines of the given order over [-r, r].
    """

    def __init__(self, in_dim: int, out_dim: int, grid: int = 5, grid_range: float = 2.0, order: int = 3):
        super().__init__()
        self.in_dim, self.out_dim, self.order = in_dim, out_dim, order
        self.grid_range = float(grid_range)
        h = 2.0 * grid_range / (grid - 1)
        knots = torch.arange(-order, grid + order, dtype=torch.float64) * h - grid_range
        self.register_buffer("knots", knots, persistent=False)
        self.n_basis = grid - 1 + order
        self.base_weight = nn.Parameter(torch.empty(out_dim, in_dim))
        self.spline_weight = nn.Parameter(torch.empty(out_dim, in_dim, self.n_basis))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        nn.init.kaiming_uniform_(self.base_weight, a=math.sqrt(5))
        nn.init.normal_(self.spline_weight, std=0.1 / math.sqrt(in_dim))

    def squash(self, x: torch.Tensor) -> torch.Tensor:
        r = self.grid_range
        return r * torch.tanh(x / r)

    def bases(self, u: torch.Tensor) -> torch.Tensor:
        """(..., in_dim) -> (..., in_dim, n_basis) B-spline values (Cox-de Boor)."""
        g = self.knots.to(u.dtype)
        u = u.unsqueeze(-1)
        b = ((u >= g[:-1]) & (u < g[1:])).to(u.dtype)
        for k in range(1, self.order + 1):
            b = (u - g[: -k - 1]) / (g[k:-1] - g[: -k - 1]) * b[..., :-1] + \
                (g[k + 1:] - u) / (g[k + 1:] - g[1:-k]) * b[..., 1:]
        return b

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = self.squash(x)
        spline = torch.einsum("bik,oik->bo", self.bases(u), self.spline_weight)
        return F.linear(u, self.base_weight, self.bias) + spline


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb_dim: int, kernel: int, groups: int):
        super().__init__()
        pad = kernel // 2
        self.norm1 = _norm(cin, groups)
        self.conv1 = nn.Conv1d(cin, cout, kernel, padding=pad)
        self.temb = nn.Sequential(nn.Linear(temb_dim, cout), nn.SiLU(), nn.Linear(cout, cout))
        self.norm2 = _norm(cout, groups)
        self.conv2 = nn.Conv1d(cout, cout, kernel, padding=pad)
        self.skip = nn.Conv1d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


def _conv_block(cin, cout, kernel, groups, stride=1):
    return nn.Sequential(nn.Conv1d(cin, cout, kernel, stride=stride, padding=kernel // 2),
                         _norm(cout, groups), nn.SiLU())


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w, k, g = cfg.enc_widths, cfg.kernel, cfg.groups
        self.blocks = nn.Sequential(
            _conv_block(cfg.in_channels, w[0], k, g, stride=2),
            _conv_block(w[0], w[1], k, g, stride=2),
            _conv_block(w[1], w[2], k, g, stride=2),
        )
        self.attention = ChannelAttention(w[2], cfg.attn_reduction)

    def forward(self, x0):
        feats = self.attention(self.blocks(x0))
        latent = F.adaptive_avg_pool1d(feats, 1).squeeze(-1)
        return feats, latent


class AEDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        e, w, k, g = cfg.enc_widths, cfg.widths, cfg.kernel, cfg.groups
        # d2 at L/4 (width widths[1]), d1 at L/2 (widths[0]), d0 at L (widths[0])
        self.up2 = _conv_block(e[2], w[1], k, g)
        self.up1 = _conv_block(w[1], w[0], k, g)
        self.up0 = _conv_block(w[0], w[0], k, g)
        self.penultimate = _conv_block(w[0] + 2 * cfg.in_channels, w[0], k, g)
        self.final = nn.Conv1d(w[0], cfg.in_channels, 1)

    def features(self, z):
        up = lambda h: F.interpolate(h, scale_factor=2, mode="nearest")  # noqa: E731
        d2 = self.up2(up(z))
        d1 = self.up1(up(d2))
        d0 = self.up0(up(d1))
        return d0, d1, d2

    def head(self, d0, x0, ddpm_out):
        return self.final(self.penultimate(torch.cat([d0, x0, ddpm_out], dim=1)))


class UNet1D(nn.Module):
    """Three-level time-conditional U-Net predicting x0 from x_t."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w, k, g, td = cfg.widths, cfg.kernel, cfg.groups, cfg.temb_dim
        self.temb_dim = td
        self.conv_in = nn.Conv1d(cfg.in_channels, w[0], k, padding=k // 2)
        self.enc0 = ResBlock(w[0], w[0], td, k, g)
        self.down0 = nn.Conv1d(w[0], w[0], k, stride=2, padding=k // 2)
        self.enc1 = ResBlock(w[0], w[1], td, k, g)
        self.down1 = nn.Conv1d(w[1], w[1], k, stride=2, padding=k // 2)
        self.mid = ResBlock(w[1], w[2], td, k, g)
        self.dec1 = ResBlock(w[2] + w[1], w[1], td, k, g)
        self.dec0 = ResBlock(w[1] + w[0], w[0], td, k, g)
        # 1x1 projections of the autoencoder-decoder maps into each level
        self.cond0 = nn.Conv1d(w[0], w[0], 1)
        self.cond1 = nn.Conv1d(w[0], w[1], 1)
        self.cond2 = nn.Conv1d(w[1], w[2], 1)
        self.norm_out = _norm(w[0], g)
        self.conv_out = nn.Conv1d(w[0], cfg.in_channels, k, padding=k // 2)

    def forward(self, x_t, t, cond):
        d0, d1, d2 = cond
        temb = timestep_embedding(t, self.temb_dim).to(x_t.dtype)
        h0 = self.enc0(self.conv_in(x_t), temb) + self.cond0(d0)
        h1 = self.enc1(self.down0(h0), temb) + self.cond1(d1)
        h2 = self.mid(self.down1(h1), temb) + self.cond2(d2)
        u1 = self.dec1(torch.cat([F.interpolate(h2, scale_factor=2, mode="nearest"), h1], 1), temb)
        u0 = self.dec0(torch.cat([F.interpolate(u1, scale_factor=2, mode="nearest"), h0], 1), temb)
        return self.conv_out(F.silu(self.norm_out(u0)))


class VisemeDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = AEDecoder(cfg)
        self.ddpm = UNet1D(cfg)
        self.classifier = KANLayer(cfg.latent_dim, cfg.n_classes, cfg.kan_grid, cfg.kan_range, cfg.kan_order)

    def check_input(self, x0):
        if x0.dim() != 3 or x0.shape[1:] != (self.cfg.in_channels, self.cfg.length):
            raise ValidationError(
                f"expected input (batch, {self.cfg.in_channels}, {self.cfg.length}), got {tuple(x0.shape)}"
            )

    def classify(self, x0):
        """Logits and latent; this path never looks at the noised input."""
        self.check_input(x0)
        _, latent = self.encoder(x0)
        return self.classifier(latent), latent

    def forward(self, x0, x_t, t):
        self.check_input(x0)
        if x_t.shape != x0.shape:
            raise ValidationError("noised input must match x0 in shape")
        feats, latent = self.encoder(x0)
        d0, d1, d2 = self.decoder.features(feats)
        ddpm_out = self.ddpm(x_t, t, (d0, d1, d2))
        recon = self.decoder.head(d0, x0, ddpm_out)
        logits = self.classifier(latent)
        return ddpm_out, recon, latent, logits
