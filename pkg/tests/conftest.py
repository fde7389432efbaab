import numpy as np
import pytest

from mgtc.tokenizer import CubeShape, tokenize
from mgtc.video_io import VideoClip

ACCEPTANCE_RESULTS = []


def grid_from_values(values, shape=(1, 1, 1)):
    """Grid over a grayscale clip given as a T x H x W integer array."""
    frames = np.asarray(values, dtype=np.uint8)[..., None]
    return tokenize(VideoClip(frames, 30.0, "grayscale"), CubeShape(*shape))


def random_grid(rng, t_blocks, rows, cols, shape=(1, 2, 2), levels=256):
    c, p1, p2 = shape
    frames = rng.integers(0, levels, size=(t_blocks * c, rows * p1, cols * p2))
    return grid_from_values(frames, shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
