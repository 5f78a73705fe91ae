import numpy as np
import pytest
from scipy import ndimage

from maskpipe.imaging import Image, Pose


def make_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smooth random texture in [0.1, 0.9], independent of the package's
    synthetic generator."""
    noise = ndimage.gaussian_filter(rng.random((height, width)), sigma=3.0)
    lo, hi = noise.min(), noise.max()
    span = hi - lo if hi > lo else 1.0
    return 0.1 + (noise - lo) / span * 0.8


def textured_image(
    seed: int, width: int = 192, height: int = 160, frame_id: str = "img", pose: Pose | None = None
) -> Image:
    rng = np.random.default_rng(seed)
    return Image(make_texture(rng, height, width), frame_id=frame_id, pose=pose)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
