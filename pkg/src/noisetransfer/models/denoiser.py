"""Small convolutional denoiser for the downstream harness.

DnCNN-flavored: a plain stack of conv/ReLU layers that predicts the noise
residual (default) or the clean image directly. It is intentionally modest;
the harness cares about relative PSNR between training-data regimes, not
state-of-the-art restoration.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ConfigError


class DenoiserNet(nn.Module):
    def __init__(
        self,
        in_channels: int = 3,
        channels: int = 48,
        layers: int = 7,
        residual: bool = True,
    ):
        super().__init__()
        if layers < 2:
            raise ConfigError("denoiser needs at least 2 layers")
        self.residual = residual
        body: list[nn.Module] = [
            nn.Conv2d(in_channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
        ]
        for _ in range(layers - 2):
            body += [nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU(inplace=True)]
        body.append(nn.Conv2d(channels, in_channels, 3, padding=1))
        self.body = nn.Sequential(*body)

    def forward(self, noisy: torch.Tensor) -> torch.Tensor:
        out = self.body(noisy)
        return noisy - out if self.residual else out
