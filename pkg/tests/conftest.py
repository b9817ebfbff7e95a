import numpy as np
import pytest

from sphere_depth.data.models import PairPolicy
from sphere_depth.geometry.sphere_geom import erp_directions
from sphere_depth.synth.renderer import make_benchmark_sequence


def smooth_image(width: int, height: int, channels: int = 0) -> np.ndarray:
    """Low-frequency function of the ray direction, continuous across the seam and the poles."""
    d = erp_directions(width, height)
    base = 0.5 + 0.25 * d[..., 0] - 0.15 * d[..., 1] + 0.1 * d[..., 2] * d[..., 0]
    if not channels:
        return base
    return np.stack([base * (0.8 + 0.1 * c) for c in range(channels)], axis=-1)


@pytest.fixture
def smooth_erp():
    return smooth_image


@pytest.fixture(scope="session")
def small_benchmark():
    """Three-frame rendered sequence at 64x32 with consecutive and gap-2 flows."""
    return make_benchmark_sequence(seed=3, frames=3, width=64, height=32)


@pytest.fixture(scope="session")
def pair_benchmark():
    """Two-frame rendered sequence at 128x64 with only the forward flow."""
    return make_benchmark_sequence(seed=11, frames=2, width=128, height=64,
                                   policy=PairPolicy(long_term_gap=0, bidirectional=False))
