from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # reference/stubs imports

from cci.model_io import ViTConfig, new_random_bundle

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(image_size=32, patch_size=8, depth=2, heads=2, embed_dim=16):
    return ViTConfig(
        image_size=image_size,
        patch_size=patch_size,
        depth=depth,
        heads=heads,
        embed_dim=embed_dim,
        preprocess_mean=(0.48, 0.46, 0.41),
        preprocess_std=(0.27, 0.26, 0.28),
    )


@pytest.fixture
def config():
    return tiny_config()

@pytest.fixture
def bundle(config):
    return new_random_bundle(config, seed=7)


@pytest.fixture
def image(config):
    rng = np.random.default_rng(11)
    return rng.normal(0.0, 1.0, size=(3, config.image_size, config.image_size)).astype(np.float32)


def random_image(config, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=(3, config.image_size, config.image_size)).astype(np.float32)


def random_raster(h, w, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
