"""Dual-head discriminator with a shared residual trunk.

One set of residual convolutions serves two forward paths:

* the noise path embeds a noisy image alone into a bounded 128-d noise
  embedding (per-level features are globally average-pooled, concatenated,
  standardized and projected by a two-layer MLP ending in tanh);
* the GAN path scores (clean, embedding, noisy) triples as real/fake at
  three receptive-field levels, with instance-normalization scale/shift
  predicted from the noise embedding.

The noise path deliberately runs the shared convolutions without
normalization: instance statistics are exactly the signal the embedding has
to preserve.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm

from ..errors import ConfigError

LRELU_SLOPE = 0.2
NUM_LEVELS = 3


def _conv(in_ch: int, out_ch: int, stride: int = 1, spectral: bool = True) -> nn.Conv2d:
    conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)
    return spectral_norm(conv) if spectral else conv


@dataclass
class DiscriminatorConfig:
    base_channels: int = 64
    embed_dim: int = 128
    mlp_hidden: int = 256
    spectral_norm: bool = True
    in_channels: int = 3

    def validate(self) -> None:
        if self.base_channels < 1 or self.embed_dim < 1 or self.mlp_hidden < 1:
            raise ConfigError("discriminator sizes must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DiscriminatorOutputs:
    """GAN-path outputs: score maps and pre-final feature maps, one per level."""

    gan_scores: list[torch.Tensor]  # sigmoid probabilities, largest map first
    m_gan: list[torch.Tensor]  # feature maps before each level's last conv


class CondInstanceNorm(nn.Module):
    """Instance norm whose affine scale/shift are linear in the noise embedding."""

    def __init__(self, channels: int, embed_dim: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels, affine=False)
        self.to_gamma = nn.Linear(embed_dim, channels)
        self.to_beta = nn.Linear(embed_dim, channels)
        with torch.no_grad():
            self.to_gamma.bias.fill_(1.0)

    def forward(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        gamma = self.to_gamma(e)[:, :, None, None]
        beta = self.to_beta(e)[:, :, None, None]
        return self.norm(x) * gamma + beta


class SharedResBlock(nn.Module):
    """Residual block whose conv weights are shared by both forward paths.

    The GAN path applies embedding-conditioned instance norm before each
    conv; the noise path applies the convolutions bare.
    """

    def __init__(self, channels: int, embed_dim: int, spectral: bool = True):
        super().__init__()
        self.conv1 = _conv(channels, channels, spectral=spectral)
        self.conv2 = _conv(channels, channels, spectral=spectral)
        self.norm1 = CondInstanceNorm(channels, embed_dim)
        self.norm2 = CondInstanceNorm(channels, embed_dim)

    def forward(self, x: torch.Tensor, e: torch.Tensor | None = None) -> torch.Tensor:
        h = x
        if e is not None:
            h = self.norm1(h, e)
        h = self.conv1(F.leaky_relu(h, LRELU_SLOPE))
        if e is not None:
            h = self.norm2(h, e)
        h = self.conv2(F.leaky_relu(h, LRELU_SLOPE))
        return x + h


class _Level(nn.Module):
    """One receptive-field level: shared trunk block plus per-path heads."""

    def __init__(self, channels: int, embed_dim: int, spectral: bool):
        super().__init__()
        self.block = SharedResBlock(channels, embed_dim, spectral=spectral)
        # noise head: features before pooling (m_noise)
        self.noise_conv = _conv(channels, channels, spectral=spectral)
        # gan head: two convs -> score map; m_gan taps before the last conv
        self.gan_conv = _conv(channels, channels, spectral=spectral)
        self.gan_norm = CondInstanceNorm(channels, embed_dim)
        self.gan_last = _conv(channels, 1, spectral=spectral)


class NoiseDiscriminator(nn.Module):
    """Three-level discriminator; see module docstring."""

    def __init__(self, cfg: DiscriminatorConfig | None = None, **overrides):
        super().__init__()
        cfg = cfg or DiscriminatorConfig()
        if overrides:
            cfg = DiscriminatorConfig(**{**cfg.__dict__, **overrides})
        cfg.validate()
        self.cfg = cfg
        c, sn = cfg.base_channels, cfg.spectral_norm
        chans = [c * (2**i) for i in range(NUM_LEVELS)]
        self.chans = chans

        self.stem_noise = _conv(cfg.in_channels, chans[0], spectral=sn)
        self.stem_gan = _conv(2 * cfg.in_channels, chans[0], spectral=sn)
        self.levels = nn.ModuleList(
            _Level(chans[i], cfg.embed_dim, sn) for i in range(NUM_LEVELS)
        )
        # shared stride-2 transitions between levels
        self.downs = nn.ModuleList(
            _conv(chans[i], chans[i + 1], stride=2, spectral=sn)
            for i in range(NUM_LEVELS - 1)
        )
        pooled_dim = sum(chans)
        # pooled activations sit on a large shared offset with only a
        # few-percent per-sample spread; without standardization the
        # embeddings of all inputs share one direction and the contrastive
        # loss has no usable gradient
        self.pool_norm = nn.BatchNorm1d(pooled_dim)
        self.mlp = nn.Sequential(
            nn.Linear(pooled_dim, cfg.mlp_hidden),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Linear(cfg.mlp_hidden, cfg.embed_dim),
        )

    def embed_noise(self, noisy: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Noise embedding of a noisy image batch (no clean conditioning).

        Returns the tanh-bounded (B, embed_dim) embedding and m_noise, the
        per-level feature maps right before global average pooling.
        """
        h = F.leaky_relu(self.stem_noise(noisy), LRELU_SLOPE)
        m_noise: list[torch.Tensor] = []
        pooled: list[torch.Tensor] = []
        for i, level in enumerate(self.levels):
            h = level.block(h)
            feats = F.leaky_relu(level.noise_conv(h), LRELU_SLOPE)
            m_noise.append(feats)
            pooled.append(feats.mean(dim=(2, 3)))
            if i < NUM_LEVELS - 1:
                h = F.leaky_relu(self.downs[i](h), LRELU_SLOPE)
        emb = torch.tanh(self.mlp(self.pool_norm(torch.cat(pooled, dim=1))))
        return emb, m_noise

    def score_gan(
        self, x: torch.Tensor, e: torch.Tensor, noisy: torch.Tensor
    ) -> DiscriminatorOutputs:
        """Real/fake probabilities for a (clean, embedding, noisy) triple.

        Score maps come out largest (smallest receptive field) first.
        The embedding conditions every instance norm in this path; it is
        expected to be detached from any generator graph by the caller.
        """
        if x.shape != noisy.shape:
            raise ConfigError(f"clean {tuple(x.shape)} vs noisy {tuple(noisy.shape)} mismatch")
        if e.ndim != 2 or e.shape[0] != x.shape[0] or e.shape[1] != self.cfg.embed_dim:
            raise ConfigError(
                f"expected embeddings of shape ({x.shape[0]}, {self.cfg.embed_dim}),"
                f" got {tuple(e.shape)}"
            )
        h = F.leaky_relu(self.stem_gan(torch.cat([x, noisy], dim=1)), LRELU_SLOPE)
        scores: list[torch.Tensor] = []
        m_gan: list[torch.Tensor] = []
        for i, level in enumerate(self.levels):
            h = level.block(h, e)
            feats = F.leaky_relu(level.gan_norm(level.gan_conv(h), e), LRELU_SLOPE)
            m_gan.append(feats)
            scores.append(torch.sigmoid(level.gan_last(feats)))
            if i < NUM_LEVELS - 1:
                h = F.leaky_relu(self.downs[i](h), LRELU_SLOPE)
        return DiscriminatorOutputs(gan_scores=scores, m_gan=m_gan)

    def describe(self) -> str:
        lines = [f"NoiseDiscriminator (config: {self.cfg.to_dict()})"]
        total = 0
        for name, p in self.named_parameters():
            lines.append(f"  {name:<44s} {str(tuple(p.shape)):<22s} {p.numel():>9d}")
            total += p.numel()
        lines.append(f"  total parameters: {total}")
        return "\n".join(lines)
