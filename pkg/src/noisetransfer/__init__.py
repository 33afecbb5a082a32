"""Reference-conditioned generative image noise modeling.

One generator synthesizes noise of many distributions by conditioning on a
contrastive noise embedding extracted from a reference noisy image. The
package covers noise samplers, the embedding/GAN networks, the training
loop, distribution metrics, and a downstream denoising harness.
"""

__version__ = "0.1.0"

from .contrastive import EmbeddingQueue, cosine_sim, info_nce, momentum_update
from .errors import ConfigError, DataError, NoiseTransferError, NumericError
from .losses import AblationFlags, LossWeights, ReconLossConfig
from .metrics import akld, ks_value, psnr, ssim
from .models import (
    DenoiserNet,
    DiscriminatorConfig,
    GeneratorConfig,
    NoiseDiscriminator,
    NoiseGenerator,
)
from .noise import NoiseSpec, clip01, sample_noisy, sample_spec

__all__ = [
    "__version__",
    "AblationFlags",
    "ConfigError",
    "DataError",
    "DenoiserNet",
    "DiscriminatorConfig",
    "EmbeddingQueue",
    "GeneratorConfig",
    "LossWeights",
    "NoiseDiscriminator",
    "NoiseGenerator",
    "NoiseSpec",
    "NoiseTransferError",
    "NumericError",
    "ReconLossConfig",
    "akld",
    "clip01",
    "cosine_sim",
    "info_nce",
    "ks_value",
    "momentum_update",
    "psnr",
    "sample_noisy",
    "sample_spec",
    "ssim",
]
