import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def make_clean(rng: np.random.Generator, h: int = 64, w: int = 64,
               cells: int = 8) -> np.ndarray:
    """Smooth-ish synthetic clean image in [0.1, 0.9], float32 H×W×C."""
    grid = rng.random((cells, cells, 3))
    img = np.kron(grid, np.ones((h // cells, w // cells, 1)))
    return (0.1 + 0.8 * img).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clean64(rng):
    return make_clean(rng, 64, 64)


@pytest.fixture
def tiny_gen_cfg():
    from noisetransfer.models import GeneratorConfig

    return GeneratorConfig(base_channels=8, depth=2, z_dim=4, embed_dim=16)


@pytest.fixture
def tiny_disc_cfg():
    from noisetransfer.models import DiscriminatorConfig

    return DiscriminatorConfig(base_channels=8, embed_dim=16, mlp_hidden=32)
