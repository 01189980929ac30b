from __future__ import annotations

import numpy as np
import pytest

from decoder import PRESETS, DecoderSpec, LatentCode, init_weights, make_latent
from numeric import SeededRng


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(1234)


@pytest.fixture
def tiny_spec() -> DecoderSpec:
    """4×4 output, 12 weights."""
    return DecoderSpec(layer_channels=(3, 3, 1), latent_side=2, channel_norm=False, sigmoid=False)


@pytest.fixture
def small_spec() -> DecoderSpec:
    """8×8 output through two doublings, norm and sigmoid on."""
    return DecoderSpec(layer_channels=(4, 3, 2, 1), latent_side=2)


@pytest.fixture
def mnist_spec() -> DecoderSpec:
    return PRESETS["mnist"]


@pytest.fixture
def rec_spec() -> DecoderSpec:
    return PRESETS["rec"]


def latent_for(spec: DecoderSpec, seed: int = 0) -> LatentCode:
    return make_latent(spec, seed)


def in_range_image(spec: DecoderSpec, weight_seed: int = 99, latent_seed: int = 0):
    """Ground truth x* = G(w*; z) together with w* and z."""
    from decoder import decode

    latent = make_latent(spec, latent_seed)
    w_star = init_weights(spec, SeededRng(weight_seed))
    return decode(spec, w_star, latent), w_star, latent


def toy_1d() -> tuple[DecoderSpec, list[np.ndarray], LatentCode]:
    spec = DecoderSpec(layer_channels=(1, 1, 1), latent_side=2, channel_norm=False, sigmoid=False, dims=1)
    weights = [np.array([[2.0]]), np.array([[1.0]])]
    latent = LatentCode(z=np.array([[1.0], [-1.0]]), seed=0)
    return spec, weights, latent
