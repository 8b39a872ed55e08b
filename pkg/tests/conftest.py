import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rgb(rng, w, h):
    from spdetect.imgcore import RasterImage

    return RasterImage(rng.uniform(0.0, 255.0, size=(3, h, w)).astype(np.float32))
