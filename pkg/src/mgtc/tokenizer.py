"""Non-overlapping spatio-temporal cube lattice over a clip."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mgtc.errors import BoundsError, ConfigError, ShapeError
from mgtc.video_io import VideoClip


@dataclass(frozen=True)
class CubeShape:
    c: int = 2
    p1: int = 16
    p2: int = 16

    def __post_init__(self):
        for name in ("c", "p1", "p2"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"cube {name} must be a positive integer, got {value}")

    @classmethod
    def parse(cls, text):
        """``"2,16,16"`` or ``"2x16x16"`` -> CubeShape."""
        parts = text.replace("x", ",").split(",")
        if len(parts) != 3:
            raise ConfigError(f"cube shape needs three integers c,p1,p2, got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError:
            raise ConfigError(f"cube shape needs three integers c,p1,p2, got {text!r}") from None

    @property
    def volume(self):
        return self.c * self.p1 * self.p2


@dataclass(frozen=True)
class CubeGrid:
    """Lattice of ``t_blocks x s_blocks`` cubes; spatial index j is row-major over patches."""

    shape: CubeShape
    t_blocks: int
    rows: int
    cols: int
    data: np.ndarray

    @property
    def s_blocks(self):
        return self.rows * self.cols

    @property
    def L(self):
        return self.t_blocks * self.s_blocks

    @property
    def lattice(self):
        return (self.t_blocks, self.s_blocks)

    @property
    def channels(self):
        return self.data.shape[3]

    @property
    def token_dim(self):
        return self.shape.volume * self.channels

    def spatial_coords(self, j):
        return divmod(j, self.cols)

    def cubes(self, dtype=np.float64):
        """All cubes as a ``t_blocks x s_blocks x (c*p1*p2*C)`` array.

        Each cube is flattened frame-major, then row, column, channel.
        """
        s = self.shape
        a = np.asarray(self.data, dtype=dtype)
        a = a.reshape(self.t_blocks, s.c, self.rows, s.p1, self.cols, s.p2, self.channels)
        a = a.transpose(0, 2, 4, 1, 3, 5, 6)
        return a.reshape(self.t_blocks, self.s_blocks, self.token_dim)


def tokenize(clip: VideoClip, shape: CubeShape = CubeShape()) -> CubeGrid:
    t, h, w, _ = clip.frames.shape
    for dim, size, extent in (("T", t, shape.c), ("H", h, shape.p1), ("W", w, shape.p2)):
        if size % extent:
            raise ShapeError(f"{dim}={size} is not divisible by cube extent {extent}")
    data = clip.frames.view()
    data.flags.writeable = False
    return CubeGrid(shape, t // shape.c, h // shape.p1, w // shape.p2, data)


def cube_pixels(grid: CubeGrid, i: int, j: int) -> np.ndarray:
    """Read-only ``c x p1 x p2 x C`` view of cube (i, j)."""
    if not (0 <= i < grid.t_blocks and 0 <= j < grid.s_blocks):
        raise BoundsError(f"cube ({i}, {j}) outside lattice {grid.t_blocks} x {grid.s_blocks}")
    s = grid.shape
    r, col = grid.spatial_coords(j)
    view = grid.data[i * s.c : (i + 1) * s.c, r * s.p1 : (r + 1) * s.p1, col * s.p2 : (col + 1) * s.p2]
    view = view.view()
    view.flags.writeable = False
    return view
