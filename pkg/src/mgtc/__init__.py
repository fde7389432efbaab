"""Motion-guided token compression for video transformers."""

__version__ = "0.1.0"

from mgtc.errors import (
    BoundsError,
    ConfigError,
    FeasibilityError,
    FormatError,
    MGTCError,
    NumericError,
    OutOfRangeError,
    ShapeError,
    TruncationError,
    UnsupportedFormatError,
)
from mgtc.video_io import ClipSpec, VideoClip, load_raw, load_y4m, resample_fps, write_raw, write_y4m
from mgtc.tokenizer import CubeGrid, CubeShape, cube_pixels, tokenize
from mgtc.masking import (
    ResidualField,
    TokenMask,
    compute_residuals,
    mgtc_mask,
    select_threshold,
)
from mgtc.baselines import cell_running_mask, random_mask, tube_mask
from mgtc.flops import EncoderSpec, FlopsProfile, estimate_flops, savings_report

__all__ = [
    "BoundsError",
    "ClipSpec",
    "ConfigError",
    "CubeGrid",
    "CubeShape",
    "EncoderSpec",
    "FeasibilityError",
    "FlopsProfile",
    "FormatError",
    "MGTCError",
    "NumericError",
    "OutOfRangeError",
    "ResidualField",
    "ShapeError",
    "TokenMask",
    "TruncationError",
    "UnsupportedFormatError",
    "VideoClip",
    "cell_running_mask",
    "compute_residuals",
    "cube_pixels",
    "estimate_flops",
    "load_raw",
    "load_y4m",
    "mgtc_mask",
    "random_mask",
    "resample_fps",
    "savings_report",
    "select_threshold",
    "tokenize",
    "tube_mask",
    "write_raw",
    "write_y4m",
]
