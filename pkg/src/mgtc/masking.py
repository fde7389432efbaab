"""Motion-guided masking: temporal residuals, rank-based threshold, key-frame retention."""

from __future__ import annotations

import base64
import json
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mgtc.errors import ConfigError, FeasibilityError, FormatError
from mgtc.fileio import atomic_write
from mgtc.rng import SplitMix64
from mgtc.tokenizer import CubeGrid

FORWARD_LAST_COPIES_PREV = "forward_last_copies_prev"
# stands in for +inf when a clip has a single temporal block
RESIDUAL_SENTINEL = sys.float_info.max

STRATEGIES = ("mgtc", "random", "tube", "cell_running")
MASK_FORMAT_VERSION = 1


def masked_count(ratio, L):
    """``round(ratio * L)`` with halves rounded up."""
    return int(np.floor(ratio * L + 0.5))


def check_ratio(ratio):
    if not (0.0 <= ratio < 1.0):
        raise ConfigError(f"masking ratio must lie in [0, 1), got {ratio}")


@dataclass(frozen=True)
class ResidualField:
    values: np.ndarray
    boundary_rule: str = FORWARD_LAST_COPIES_PREV

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class TokenMask:
    """Per-cube keep decision (``True`` = token is fed to the model) plus provenance."""

    keep: np.ndarray
    ratio_requested: float
    strategy_tag: str
    key_frame_index: Optional[int] = None
    seed: Optional[int] = None
    threshold_lambda: Optional[float] = None

    def __post_init__(self):
        if self.keep.ndim != 2 or self.keep.dtype != np.bool_:
            raise FormatError("keep must be a 2-D boolean array")
        if self.strategy_tag not in STRATEGIES:
            raise FormatError(f"unknown strategy {self.strategy_tag!r}")

    @property
    def t_blocks(self):
        return self.keep.shape[0]

    @property
    def s_blocks(self):
        return self.keep.shape[1]

    @property
    def L(self):
        return self.keep.size

    @property
    def num_masked(self):
        return int(self.L - np.count_nonzero(self.keep))

    @property
    def num_kept(self):
        return int(np.count_nonzero(self.keep))

    @property
    def ratio_realized(self):
        return self.num_masked / self.L

    def masked_set(self):
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(~self.keep))}

    def __eq__(self, other):
        if not isinstance(other, TokenMask):
            return NotImplemented
        return (
            np.array_equal(self.keep, other.keep)
            and self.ratio_requested == other.ratio_requested
            and self.strategy_tag == other.strategy_tag
            and self.key_frame_index == other.key_frame_index
            and self.seed == other.seed
            and self.threshold_lambda == other.threshold_lambda
        )

    def to_dict(self):
        bits = np.packbits(self.keep.reshape(-1), bitorder="little")
        return {
            "version": MASK_FORMAT_VERSION,
            "strategy": self.strategy_tag,
            "ratio": self.ratio_requested,
            "L": self.L,
            "t_blocks": self.t_blocks,
            "s_blocks": self.s_blocks,
            "key_frame_index": self.key_frame_index,
            "seed": self.seed,
            "lambda": self.threshold_lambda,
            "keep_bitmap": base64.b64encode(bits.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            if doc["version"] != MASK_FORMAT_VERSION:
                raise FormatError(f"unsupported mask format version {doc['version']}")
            t, s = int(doc["t_blocks"]), int(doc["s_blocks"])
            if t * s != doc["L"]:
                raise FormatError(f"L={doc['L']} inconsistent with {t} x {s} lattice")
            raw = np.frombuffer(base64.b64decode(doc["keep_bitmap"], validate=True), dtype=np.uint8)
            if raw.size != -(-t * s // 8):
                raise FormatError("keep_bitmap length does not match lattice size")
            keep = np.unpackbits(raw, bitorder="little", count=t * s).astype(bool).reshape(t, s)
            return cls(
                keep=keep,
                ratio_requested=doc["ratio"],
                strategy_tag=doc["strategy"],
                key_frame_index=doc["key_frame_index"],
                seed=doc["seed"],
                threshold_lambda=doc["lambda"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed mask document: {exc!r}") from None

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"mask file is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def save(self, path):
        atomic_write(path, self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


def compute_residuals(grid: CubeGrid) -> ResidualField:
    """Temporal MSE between each cube and its successor at the same spatial index.

    The last temporal index reuses the residual of the one before it. A grid
    with a single temporal block gets the sentinel everywhere so it is never
    preferred for masking.
    """
    if grid.t_blocks == 1:
        return ResidualField(np.full((1, grid.s_blocks), RESIDUAL_SENTINEL))
    cubes = grid.cubes(np.float64)
    diff = cubes[1:] - cubes[:-1]
    # cumsum is strictly sequential, so the result matches a pixel-major loop bit for bit
    sums = np.cumsum(diff * diff, axis=-1)[..., -1]
    d = np.empty(grid.lattice)
    d[:-1] = sums / cubes.shape[-1]
    d[-1] = d[-2]
    return ResidualField(d)


def select_threshold(field: ResidualField, ratio: float, key_frame: Optional[int] = None):
    """Mask the ``round(ratio * L)`` smallest residuals outside the key frame.

    Ties go to the lower (i, j). Returns ``(lambda, masked_set)`` where lambda
    is the largest residual that got masked (0 when nothing is).
    """
    check_ratio(ratio)
    values = field.values
    t_blocks, s_blocks = values.shape
    L = values.size
    k = masked_count(ratio, L)
    candidates = np.arange(L)
    if key_frame is not None:
        if not 0 <= key_frame < t_blocks:
            raise ConfigError(f"key frame {key_frame} outside [0, {t_blocks})")
        if k > L - s_blocks:
            max_ratio = (L - s_blocks) / L
            raise FeasibilityError(
                f"ratio {ratio} masks {k} of {L} cubes but the key frame pins {s_blocks}; "
                f"maximum achievable ratio is {max_ratio:g}",
                max_ratio=max_ratio,
            )
        candidates = candidates[candidates // s_blocks != key_frame]
    flat = values.reshape(-1)
    order = candidates[np.argsort(flat[candidates], kind="stable")]
    chosen = order[:k]
    lam = float(flat[chosen].max()) if k else 0.0
    return lam, {(int(idx // s_blocks), int(idx % s_blocks)) for idx in chosen}


def pick_key_frame(t_blocks, mode, seed=None):
    if mode == "eval":
        return t_blocks // 2
    if mode == "train":
        if seed is None:
            raise ConfigError("train mode draws the key frame at random and needs a seed")
        return SplitMix64(seed).below(t_blocks)
    raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


def keep_from_masked(lattice, masked):
    keep = np.ones(lattice, dtype=bool)
    if masked:
        rows, cols = zip(*masked)
        keep[list(rows), list(cols)] = False
    return keep


def mgtc_mask(grid: CubeGrid, ratio: float, mode: str = "eval", seed: Optional[int] = None,
              field: Optional[ResidualField] = None) -> TokenMask:
    check_ratio(ratio)
    key_frame = pick_key_frame(grid.t_blocks, mode, seed)
    if field is None:
        field = compute_residuals(grid)
    lam, masked = select_threshold(field, ratio, key_frame)
    return TokenMask(
        keep=keep_from_masked(grid.lattice, masked),
        ratio_requested=ratio,
        strategy_tag="mgtc",
        key_frame_index=key_frame,
        seed=seed if mode == "train" else None,
        threshold_lambda=lam,
    )
