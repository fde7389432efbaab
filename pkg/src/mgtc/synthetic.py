"""Synthetic clips for offline tests and demos: static scenes, noise, moving blocks."""

from __future__ import annotations

import numpy as np

from mgtc.errors import ConfigError
from mgtc.video_io import GRAYSCALE, RGB, VideoClip

KINDS = ("static", "noise", "moving-block")


def _texture(rng, shape, lo=0, hi=256):
    return rng.integers(lo, hi, size=shape, dtype=np.uint8)


def _channels(colorspace):
    return 1 if colorspace == GRAYSCALE else 3


def static_clip(frames=16, height=64, width=64, seed=0, colorspace=RGB, fps=30.0):
    """One random-texture frame repeated: every temporal residual is exactly zero."""
    rng = np.random.default_rng(seed)
    frame = _texture(rng, (height, width, _channels(colorspace)))
    return VideoClip(np.repeat(frame[None], frames, axis=0), fps, colorspace)


def noise_clip(frames=16, height=64, width=64, seed=0, colorspace=RGB, fps=30.0):
    """Independent uniform pixels in every frame."""
    rng = np.random.default_rng(seed)
    return VideoClip(_texture(rng, (frames, height, width, _channels(colorspace))), fps, colorspace)


def block_path(frames, height, width, block, velocity, start):
    """Top-left corner of the block at each frame, bouncing off the borders."""
    y, x = start
    vy, vx = velocity
    path = []
    for _ in range(frames):
        path.append((y, x))
        y, x = y + vy, x + vx
        if not 0 <= y <= height - block:
            vy = -vy
            y = min(max(y, 0), height - block)
        if not 0 <= x <= width - block:
            vx = -vx
            x = min(max(x, 0), width - block)
    return path


def moving_block_clip(frames=16, height=96, width=96, block=16, velocity=(0, 3), start=None,
                      seed=0, colorspace=RGB, fps=30.0, background=None, bounce=True, block_value=None):
    """A textured block sliding over a static textured background.

    The block texture is drawn from [0, 128) and the background from
    [128, 256), so any cube the block enters or leaves changes pixel values.
    Returns ``(clip, path)`` where ``path[f]`` is the block's top-left corner
    in frame f. ``block_value`` paints a solid block instead of a texture.
    """
    if block > min(height, width):
        raise ConfigError(f"block {block} larger than frame {height}x{width}")
    rng = np.random.default_rng(seed)
    c = _channels(colorspace)
    bg = _texture(rng, (height, width, c), 128, 256) if background is None else background
    sprite = _texture(rng, (block, block, c), 0, 128)
    if block_value is not None:
        sprite = np.full((block, block, c), block_value, dtype=np.uint8)
    if start is None:
        start = (int(rng.integers(0, height - block + 1)), int(rng.integers(0, width - block + 1)))
    if bounce:
        path = block_path(frames, height, width, block, velocity, start)
    else:
        path = [(start[0] + f * velocity[0], start[1] + f * velocity[1]) for f in range(frames)]
        for y, x in path:
            if not (0 <= y <= height - block and 0 <= x <= width - block):
                raise ConfigError("block leaves the frame; shorten the clip or slow it down")
    out = np.repeat(bg[None], frames, axis=0)
    for f, (y, x) in enumerate(path):
        out[f, y : y + block, x : x + block] = sprite
    return VideoClip(out, fps, colorspace), path


def motion_touched(path, block, shape, t_blocks, rows, cols):
    """Lattice cells (i, j) whose footprint the block overlaps in any of their frames."""
    c, p1, p2 = shape
    touched = set()
    for f, (y, x) in enumerate(path):
        i = f // c
        if i >= t_blocks:
            break
        for r in range(y // p1, min((y + block - 1) // p1, rows - 1) + 1):
            for col in range(x // p2, min((x + block - 1) // p2, cols - 1) + 1):
                touched.add((i, r * cols + col))
    return touched


def corpus(kind, count, seed=0, **kwargs):
    """``count`` clips of one kind with per-clip seeds ``seed, seed+1, ...``."""
    if kind == "static":
        return [static_clip(seed=seed + n, **kwargs) for n in range(count)]
    if kind == "noise":
        return [noise_clip(seed=seed + n, **kwargs) for n in range(count)]
    if kind == "moving-block":
        return [moving_block_clip(seed=seed + n, **kwargs)[0] for n in range(count)]
    raise ConfigError(f"unknown corpus kind {kind!r}; choose from {', '.join(KINDS)}")


def parse_corpus(text, seed=0, **kwargs):
    """``"static:4,noise:2"`` -> list of clips, kinds in the order given."""
    clips, offset = [], seed
    for part in text.split(","):
        kind, _, n = part.partition(":")
        try:
            count = int(n) if n else 1
        except ValueError:
            raise ConfigError(f"bad corpus entry {part!r}") from None
        clips += corpus(kind.strip(), count, seed=offset, **kwargs)
        offset += count
    return clips


def direction_dataset(count, frames=8, size=16, block=4, speed=1, seed=0):
    """Balanced two-class set of grayscale clips: label 0 = block moving left, 1 = right.

    The block is solid bright on a dark, lightly textured background; it
    starts at a random row and at a column that keeps it inside the frame
    for the whole clip.
    """
    rng = np.random.default_rng(seed)
    clips, labels = [], []
    travel = speed * (frames - 1)
    for n in range(count):
        label = n % 2
        y = int(rng.integers(0, size - block + 1))
        if label == 1:
            x = int(rng.integers(0, size - block - travel + 1))
            v = (0, speed)
        else:
            x = int(rng.integers(travel, size - block + 1))
            v = (0, -speed)
        bg = rng.integers(20, 60, size=(size, size, 1), dtype=np.uint8)
        clip, _ = moving_block_clip(frames, size, size, block, v, (y, x), colorspace=GRAYSCALE,
                                    background=bg, bounce=False, block_value=220)
        clips.append(clip)
        labels.append(label)
    return clips, labels
