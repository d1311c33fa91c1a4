import numpy as np
import pytest
import torch

torch.set_num_threads(1)
torch.use_deterministic_algorithms(True)

from mcgan.config import Hyperparams
from mcgan.models import Discriminator, Generator
from mcgan.training import init_weights


@pytest.fixture
def tiny_hp() -> Hyperparams:
    """Small enough for sub-second forwards, deep enough to exercise every
    code path (two blocks, two background levels)."""
    return Hyperparams(width=16, height=16, num_blocks=2, noise_dim=8,
                       embed_dim=12, cond_dim=6, seed_channels=16,
                       disc_channels=8)


@pytest.fixture
def tiny_gen(tiny_hp) -> Generator:
    torch.manual_seed(0)
    gen = Generator(tiny_hp)
    init_weights(gen, torch.Generator().manual_seed(1))
    return gen


@pytest.fixture
def tiny_disc(tiny_hp) -> Discriminator:
    torch.manual_seed(0)
    disc = Discriminator(tiny_hp)
    init_weights(disc, torch.Generator().manual_seed(2))
    return disc


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_inputs(hp, batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    base = torch.rand(batch, 3, hp.height, hp.width, generator=g) * 2 - 1
    phi = torch.randn(batch, hp.embed_dim, generator=g)
    eps = torch.randn(batch, hp.cond_dim, generator=g)
    z = torch.randn(batch, hp.noise_dim, generator=g)
    return base, phi, eps, z
