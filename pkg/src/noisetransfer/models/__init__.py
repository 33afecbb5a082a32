from .generator import GeneratorConfig, NoiseGenerator
from .discriminator import DiscriminatorConfig, DiscriminatorOutputs, NoiseDiscriminator
from .denoiser import DenoiserNet

__all__ = [
    "GeneratorConfig",
    "NoiseGenerator",
    "DiscriminatorConfig",
    "DiscriminatorOutputs",
    "NoiseDiscriminator",
    "DenoiserNet",
]
