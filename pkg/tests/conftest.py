"""
Shared fixtures: a tiny model configuration and a small synthetic dataset.
"""

import numpy as np
import pytest

from yoro.config import ModelConfig
from yoro.data import SyntheticSpec, generate
from yoro.geometry import Box
from yoro.losses import build_ground_truth

TINY = dict(d=16, depth=2, heads=2, vocab_size=12, image_height=32, image_width=32, patch=8,
            q=2, d_align=16)


@pytest.fixture
def tiny_config():
    """16-wide, 2-layer model on 32x32 images (a 4x4 patch grid)."""
    return ModelConfig(**TINY)


@pytest.fixture
def tiny_pair(tiny_config):
    """Token ids, pixels and ground truth of one hand-made sample."""
    rng = np.random.default_rng(11)
    ids = [int(i) for i in rng.integers(1, tiny_config.vocab_size, size=6)]
    pixels = rng.uniform(size=(32, 32, 3))
    gt = build_ground_truth([Box(0.35, 0.6, 0.3, 0.4)], [(1, 2, 4)], len(ids), tiny_config)
    return ids, pixels, gt


@pytest.fixture(scope="session")
def shapes32():
    """Twelve synthetic samples on a 32x32 canvas."""
    return list(generate(SyntheticSpec(seed=3, size=32, min_side=6, max_side=10), 12))
