"""Uncompressed video ingest (YUV4MPEG2, raw u8 + JSON sidecar) and FPS resampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from mgtc.fileio import atomic_write
from mgtc.errors import (
    ConfigError,
    FormatError,
    OutOfRangeError,
    TruncationError,
    UnsupportedFormatError,
)

GRAYSCALE = "grayscale"
RGB = "rgb"
_CHANNELS = {GRAYSCALE: 1, RGB: 3}

# (horizontal, vertical) chroma subsampling factors
_CHROMA_MODES = {
    "420": (2, 2),
    "420jpeg": (2, 2),
    "420paldv": (2, 2),
    "420mpeg2": (2, 2),
    "422": (2, 1),
    "444": (1, 1),
}

_SIDECAR_KEYS = ("width", "height", "channels", "frame_count", "fps", "dtype")


def round_half_up(x):
    """Round to nearest integer, halves away from -inf (``floor(x + 0.5)``)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class VideoClip:
    """Frames as a ``T x H x W x C`` array with values in [0, 255]."""

    frames: np.ndarray
    source_fps: float
    colorspace_tag: str = RGB

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4:
            raise FormatError(f"frames must be T x H x W x C, got shape {f.shape}")
        if min(f.shape[:3]) < 1:
            raise FormatError(f"empty clip dimensions {f.shape}")
        if self.colorspace_tag not in _CHANNELS:
            raise FormatError(f"unknown colorspace {self.colorspace_tag!r}")
        if f.shape[3] != _CHANNELS[self.colorspace_tag]:
            raise FormatError(
                f"{self.colorspace_tag} clip needs {_CHANNELS[self.colorspace_tag]} channels, got {f.shape[3]}"
            )
        if not (self.source_fps > 0 and math.isfinite(self.source_fps)):
            raise FormatError(f"source_fps must be positive, got {self.source_fps}")
        if f.dtype != np.uint8:
            if not np.all(np.isfinite(f)):
                raise FormatError("frames contain non-finite values")
            if f.min() < 0 or f.max() > 255:
                raise FormatError("pixel values outside [0, 255]")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def channels(self):
        return self.frames.shape[3]


@dataclass(frozen=True)
class ClipSpec:
    target_fps: float
    num_frames: int
    start_offset: int = 0

    def __post_init__(self):
        if not self.target_fps > 0:
            raise ConfigError(f"target_fps must be positive, got {self.target_fps}")
        if self.num_frames < 1:
            raise ConfigError(f"num_frames must be positive, got {self.num_frames}")
        if self.start_offset < 0:
            raise ConfigError(f"start_offset must be non-negative, got {self.start_offset}")


def _parse_rate(value):
    try:
        num, den = value.split(":")
        rate = Fraction(int(num), int(den))
    except (ValueError, ZeroDivisionError):
        raise FormatError(f"malformed frame rate tag F{value}") from None
    if rate <= 0:
        raise FormatError(f"non-positive frame rate F{value}")
    return float(rate)


def _parse_y4m_header(line):
    parts = line.split(b" ")
    if parts[0] != b"YUV4MPEG2":
        raise FormatError("missing YUV4MPEG2 signature")
    tags = {}
    for raw in parts[1:]:
        if not raw:
            continue
        tag = raw[:1].decode("ascii", "replace")
        tags[tag] = raw[1:].decode("ascii", "replace")
    for key in ("W", "H", "F"):
        if key not in tags:
            raise FormatError(f"YUV4MPEG2 header missing {key} tag")
    try:
        width, height = int(tags["W"]), int(tags["H"])
    except ValueError:
        raise FormatError("non-integer W/H tag") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid frame size {width}x{height}")
    chroma = tags.get("C", "420jpeg")
    if chroma not in _CHROMA_MODES:
        raise UnsupportedFormatError(f"unsupported chroma subsampling C{chroma}")
    interlace = tags.get("I", "p")
    if interlace not in ("p", "?"):
        raise UnsupportedFormatError(f"interlaced streams not supported (I{interlace})")
    return width, height, _parse_rate(tags["F"]), chroma


def ycbcr_to_rgb(y, cb, cr):
    """BT.601 full-range conversion; float math, round half up, clamp to u8."""
    y = y.astype(np.float64)
    cb = cb.astype(np.float64) - 128.0
    cr = cr.astype(np.float64) - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(round_half_up(rgb), 0, 255).astype(np.uint8)


def load_y4m(path) -> VideoClip:
    data = Path(path).read_bytes()
    end = data.find(b"\n")
    if end < 0:
        raise FormatError("unterminated YUV4MPEG2 header")
    width, height, fps, chroma = _parse_y4m_header(data[:end])
    sx, sy = _CHROMA_MODES[chroma]
    cw, ch = -(-width // sx), -(-height // sy)
    luma_size = width * height
    chroma_size = cw * ch
    frame_size = luma_size + 2 * chroma_size

    frames = []
    pos = end + 1
    while pos < len(data):
        index = len(frames)
        marker_end = data.find(b"\n", pos)
        if marker_end < 0:
            raise TruncationError(f"frame {index}: truncated FRAME header")
        if not data[pos:marker_end].startswith(b"FRAME"):
            raise FormatError(f"frame {index}: expected FRAME delimiter")
        start = marker_end + 1
        payload = data[start : start + frame_size]
        if len(payload) < frame_size:
            raise TruncationError(
                f"frame {index}: truncated payload ({len(payload)} of {frame_size} bytes)"
            )
        buf = np.frombuffer(payload, dtype=np.uint8)
        y = buf[:luma_size].reshape(height, width)
        cb = buf[luma_size : luma_size + chroma_size].reshape(ch, cw)
        cr = buf[luma_size + chroma_size :].reshape(ch, cw)
        # nearest-neighbour chroma upsampling
        cb = np.repeat(np.repeat(cb, sy, axis=0), sx, axis=1)[:height, :width]
        cr = np.repeat(np.repeat(cr, sy, axis=0), sx, axis=1)[:height, :width]
        frames.append(ycbcr_to_rgb(y, cb, cr))
        pos = start + frame_size
    if not frames:
        raise FormatError("YUV4MPEG2 stream contains no frames")
    return VideoClip(np.stack(frames), fps, RGB)


def write_y4m(path, luma, fps, chroma="420jpeg", cb=None, cr=None):
    """Write planar frames to a YUV4MPEG2 file.

    ``luma`` is ``T x H x W`` u8. Chroma planes default to neutral 128, which
    loads back as a gray RGB clip with R = G = B = Y.
    """
    luma = np.asarray(luma, dtype=np.uint8)
    t, height, width = luma.shape
    if chroma not in _CHROMA_MODES:
        raise UnsupportedFormatError(f"unsupported chroma subsampling C{chroma}")
    sx, sy = _CHROMA_MODES[chroma]
    cshape = (t, -(-height // sy), -(-width // sx))
    cb = np.full(cshape, 128, np.uint8) if cb is None else np.asarray(cb, np.uint8)
    cr = np.full(cshape, 128, np.uint8) if cr is None else np.asarray(cr, np.uint8)
    rate = Fraction(fps).limit_denominator(1001)
    out = bytearray(f"YUV4MPEG2 W{width} H{height} F{rate.numerator}:{rate.denominator} Ip A1:1 C{chroma}\n".encode())
    for k in range(t):
        out += b"FRAME\n"
        out += luma[k].tobytes() + cb[k].tobytes() + cr[k].tobytes()
    atomic_write(path, bytes(out))


def _read_sidecar(sidecar):
    try:
        meta = json.loads(Path(sidecar).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"sidecar is not valid JSON: {exc}") from None
    if not isinstance(meta, dict):
        raise FormatError("sidecar must be a JSON object")
    missing = [k for k in _SIDECAR_KEYS if k not in meta]
    if missing:
        raise FormatError(f"sidecar missing keys: {', '.join(missing)}")
    for key in ("width", "height", "channels", "frame_count"):
        value = meta[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise FormatError(f"sidecar {key} must be a positive integer, got {value!r}")
    if meta["channels"] not in (1, 3):
        raise FormatError(f"sidecar channels must be 1 or 3, got {meta['channels']}")
    fps = meta["fps"]
    if not isinstance(fps, (int, float)) or isinstance(fps, bool) or not fps > 0:
        raise FormatError(f"sidecar fps must be positive, got {fps!r}")
    if meta["dtype"] != "u8":
        raise FormatError(f"sidecar dtype must be 'u8', got {meta['dtype']!r}")
    return meta


def default_sidecar(path):
    return Path(str(path) + ".json")


def load_raw(path, sidecar=None) -> VideoClip:
    meta = _read_sidecar(sidecar if sidecar is not None else default_sidecar(path))
    t, h, w, c = meta["frame_count"], meta["height"], meta["width"], meta["channels"]
    data = Path(path).read_bytes()
    expected = t * h * w * c
    if len(data) != expected:
        raise TruncationError(f"raw file size mismatch: expected {expected} bytes, got {len(data)}")
    frames = np.frombuffer(data, dtype=np.uint8).reshape(t, h, w, c)
    return VideoClip(frames, float(meta["fps"]), GRAYSCALE if c == 1 else RGB)


def write_raw(clip: VideoClip, path, sidecar=None):
    frames = np.asarray(clip.frames)
    if frames.dtype != np.uint8:
        if not np.array_equal(frames, np.round(frames)):
            raise FormatError("raw output needs integer pixel values")
        frames = frames.astype(np.uint8)
    t, h, w, c = frames.shape
    fps = clip.source_fps
    meta = {
        "width": w,
        "height": h,
        "channels": c,
        "frame_count": t,
        "fps": int(fps) if float(fps).is_integer() else fps,
        "dtype": "u8",
    }
    atomic_write(path, np.ascontiguousarray(frames).tobytes())
    side = sidecar if sidecar is not None else default_sidecar(path)
    atomic_write(side, (json.dumps(meta, indent=2) + "\n").encode())


def resample_fps(clip: VideoClip, spec: ClipSpec) -> VideoClip:
    """Nearest-index resampling: frame k is source index ``offset + round(k * stride)``."""
    stride = clip.source_fps / spec.target_fps
    span = math.ceil(spec.num_frames * stride - 1e-9)
    indices = spec.start_offset + round_half_up(np.arange(spec.num_frames) * stride).astype(np.int64)
    if spec.start_offset + span > clip.num_frames or indices[-1] >= clip.num_frames:
        raise OutOfRangeError(
            f"need source frames [{spec.start_offset}, {spec.start_offset + span}) "
            f"but clip has {clip.num_frames}"
        )
    return VideoClip(clip.frames[indices], float(spec.target_fps), clip.colorspace_tag)

