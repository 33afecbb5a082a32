"""U-Net noise generator conditioned on noise embeddings via SFT layers.

The generator maps a clean image, a noise embedding and per-level Gaussian
noise maps to a noisy image. Conditioning happens through spatial feature
transform (SFT) layers: the embedding is broadcast over space to predict a
per-position scale, and is concatenated with a random noise map ``z`` to
predict a per-position shift, so every forward pass realizes fresh noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm

from ..errors import ConfigError

LRELU_SLOPE = 0.2


def _conv(in_ch: int, out_ch: int, stride: int = 1, spectral: bool = True) -> nn.Conv2d:
    conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)
    return spectral_norm(conv) if spectral else conv


@dataclass
class GeneratorConfig:
    base_channels: int = 64
    depth: int = 3
    z_dim: int = 32
    embed_dim: int = 128
    spectral_norm: bool = True
    residual_head: bool = False
    in_channels: int = 3

    def validate(self) -> None:
        if self.base_channels < 1 or self.depth < 1 or self.z_dim < 1 or self.embed_dim < 1:
            raise ConfigError("generator sizes must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class SftLayer(nn.Module):
    """gamma(e) * F + beta(e, z) feature modulation.

    gamma is predicted from the spatially-broadcast embedding alone, so it is
    constant over space; beta sees the embedding concatenated with an i.i.d.
    Gaussian map z, which is what injects randomness into the generator.
    """

    def __init__(self, channels: int, embed_dim: int, z_dim: int, spectral: bool = True):
        super().__init__()
        self.gamma1 = _conv(embed_dim, channels, spectral=spectral)
        self.gamma2 = _conv(channels, channels, spectral=spectral)
        self.beta1 = _conv(embed_dim + z_dim, channels, spectral=spectral)
        self.beta2 = _conv(channels, channels, spectral=spectral)
        # start near the identity: gamma ~ 1, beta ~ 0
        with torch.no_grad():
            bias = self.gamma2.bias
            if bias is not None:
                bias.fill_(1.0)

    def forward(self, feat: torch.Tensor, e_map: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if e_map.shape[-2:] != feat.shape[-2:] or z.shape[-2:] != feat.shape[-2:]:
            raise ConfigError(
                f"SFT shape mismatch: feat {tuple(feat.shape)}, e_map {tuple(e_map.shape)}, "
                f"z {tuple(z.shape)}"
            )
        gamma = self.gamma2(F.leaky_relu(self.gamma1(e_map), LRELU_SLOPE))
        beta = self.beta2(F.leaky_relu(self.beta1(torch.cat([e_map, z], dim=1)), LRELU_SLOPE))
        return gamma * feat + beta


class NoiseGenerator(nn.Module):
    """Encoder/decoder with skip concatenation and one SFT layer per level."""

    def __init__(self, cfg: GeneratorConfig | None = None, **overrides):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        if overrides:
            cfg = GeneratorConfig(**{**cfg.__dict__, **overrides})
        cfg.validate()
        self.cfg = cfg
        c, d, sn = cfg.base_channels, cfg.depth, cfg.spectral_norm
        chans = [c * (2**i) for i in range(d + 1)]  # per-level channel counts

        self.stem = _conv(cfg.in_channels, chans[0], spectral=sn)
        self.down = nn.ModuleList()
        self.enc = nn.ModuleList()
        for lvl in range(d):
            self.down.append(_conv(chans[lvl], chans[lvl + 1], stride=2, spectral=sn))
            self.enc.append(_conv(chans[lvl + 1], chans[lvl + 1], spectral=sn))

        self.sft_bottleneck = SftLayer(chans[d], cfg.embed_dim, cfg.z_dim, spectral=sn)
        self.bottleneck = _conv(chans[d], chans[d], spectral=sn)

        self.up = nn.ModuleList()
        self.fuse = nn.ModuleList()
        self.sft = nn.ModuleList()
        self.dec = nn.ModuleList()
        for lvl in reversed(range(d)):
            self.up.append(_conv(chans[lvl + 1], chans[lvl], spectral=sn))
            self.fuse.append(_conv(2 * chans[lvl], chans[lvl], spectral=sn))
            self.sft.append(SftLayer(chans[lvl], cfg.embed_dim, cfg.z_dim, spectral=sn))
            self.dec.append(_conv(chans[lvl], chans[lvl], spectral=sn))
        self.head = _conv(chans[0], cfg.in_channels, spectral=sn)

    def z_shapes(self, batch: int, height: int, width: int) -> list[tuple[int, ...]]:
        """Shapes of the noise maps consumed by one forward, coarsest first."""
        d, z = self.cfg.depth, self.cfg.z_dim
        shapes = [(batch, z, height >> d, width >> d)]
        for lvl in reversed(range(d)):
            shapes.append((batch, z, height >> lvl, width >> lvl))
        return shapes

    def sample_z(
        self,
        batch: int,
        height: int,
        width: int,
        rng: torch.Generator | None = None,
        device=None,
        dtype=None,
    ) -> list[torch.Tensor]:
        """Draw the per-level N(0,1) noise maps for one forward pass."""
        param = next(self.parameters())
        device = device or param.device
        dtype = dtype or param.dtype
        return [
            torch.randn(shape, generator=rng, device=device, dtype=dtype)
            for shape in self.z_shapes(batch, height, width)
        ]

    def forward(
        self,
        x: torch.Tensor,
        e: torch.Tensor,
        z: list[torch.Tensor] | None = None,
        rng: torch.Generator | None = None,
    ) -> torch.Tensor:
        cfg = self.cfg
        if x.ndim != 4:
            raise ConfigError(f"expected NCHW input, got shape {tuple(x.shape)}")
        b, _, h, w = x.shape
        if e.ndim != 2 or e.shape[0] != b or e.shape[1] != cfg.embed_dim:
            raise ConfigError(
                f"expected embeddings of shape ({b}, {cfg.embed_dim}), got {tuple(e.shape)}"
            )
        divisor = 2**cfg.depth
        if h % divisor or w % divisor:
            raise ConfigError(f"input size {h}x{w} must be divisible by {divisor}")
        if z is None:
            z = self.sample_z(b, h, w, rng=rng, device=x.device, dtype=x.dtype)
        expected = self.z_shapes(b, h, w)
        if len(z) != len(expected) or any(tuple(zi.shape) != s for zi, s in zip(z, expected)):
            raise ConfigError(f"z shapes {[tuple(zi.shape) for zi in z]} != expected {expected}")

        def e_map(ref: torch.Tensor) -> torch.Tensor:
            return e[:, :, None, None].expand(b, cfg.embed_dim, ref.shape[-2], ref.shape[-1])

        feat = F.leaky_relu(self.stem(x), LRELU_SLOPE)
        skips = []
        for lvl in range(cfg.depth):
            skips.append(feat)
            feat = F.leaky_relu(self.down[lvl](feat), LRELU_SLOPE)
            feat = F.leaky_relu(self.enc[lvl](feat), LRELU_SLOPE)

        feat = self.sft_bottleneck(feat, e_map(feat), z[0])
        feat = F.leaky_relu(self.bottleneck(feat), LRELU_SLOPE)

        for i, lvl in enumerate(reversed(range(cfg.depth))):
            feat = F.interpolate(feat, scale_factor=2, mode="nearest")
            feat = F.leaky_relu(self.up[i](feat), LRELU_SLOPE)
            feat = torch.cat([feat, skips[lvl]], dim=1)
            feat = F.leaky_relu(self.fuse[i](feat), LRELU_SLOPE)
            feat = self.sft[i](feat, e_map(feat), z[i + 1])
            feat = F.leaky_relu(self.dec[i](feat), LRELU_SLOPE)

        out = self.head(feat)
        return x + out if cfg.residual_head else out

    def describe(self) -> str:
        """Human-readable layer table."""
        lines = [f"NoiseGenerator (config: {self.cfg.to_dict()})"]
        total = 0
        for name, p in self.named_parameters():
            lines.append(f"  {name:<44s} {str(tuple(p.shape)):<22s} {p.numel():>9d}")
            total += p.numel()
        lines.append(f"  total parameters: {total}")
        return "\n".join(lines)
