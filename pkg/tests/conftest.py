import numpy as np
import pytest

from haze_physics import SynthesisConfig, make_toy_clip, synthesize_video
from layers import Initializer
from map_net import NetworkConfig
from training import TrainingClip


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def init():
    return Initializer(7)


@pytest.fixture
def tiny_cfg():
    return NetworkConfig(scales=2, channels=(4, 8), ranges=2, d_bins=4, memory=2,
                         window=2, heads=2, total_steps=10)


@pytest.fixture
def tiny_clip():
    """Four 8x8 frames of synthetic haze with their clear counterparts."""
    frames, depths = make_toy_clip(num_frames=4, height=8, width=8, seed=3)
    video = synthesize_video(frames, depths, SynthesisConfig(rng_seed=3))
    return TrainingClip(video.hazy, frames, video.transmissions)
