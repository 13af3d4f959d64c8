import numpy as np
import pytest
from skimage import data


@pytest.fixture(scope="session")
def natural_crops():
    """64x64 crops from bundled grayscale photographs, shuffled."""
    srcs = [data.camera().astype(float), data.moon().astype(float),
            data.coins().astype(float)]
    rng = np.random.default_rng(7)
    crops = []
    for img in srcs:
        h, w = img.shape
        for _ in range(9):
            y = int(rng.integers(0, h - 64))
            x = int(rng.integers(0, w - 64))
            crops.append(img[y:y + 64, x:x + 64].copy())
    rng.shuffle(crops)
    return crops
