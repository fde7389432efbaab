"""Closed-form compute cost of a ViT-style encoder as a function of token count.

Per block, for N tokens of width d::

    qkv + output projection   4 N d^2
    scores and weighted sum   2 N^2 d
    MLP                       2 r N d^2      (r = mlp_ratio)

plus a classifier term ``N d num_classes``. The coefficients count one
multiply-accumulate as one operation, the convention commonly used when
quoting "GFLOPs" for video transformers.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass

from mgtc.errors import ConfigError
from mgtc.masking import check_ratio, masked_count


@dataclass(frozen=True)
class EncoderSpec:
    depth: int
    width: int
    mlp_ratio: float = 4.0
    num_classes: int = 400
    num_heads: int = 1

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.num_classes < 1 or self.num_heads < 1:
            raise ConfigError(f"encoder dimensions must be positive: {self}")
        if not self.mlp_ratio > 0:
            raise ConfigError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.width % self.num_heads:
            raise ConfigError(f"width {self.width} not divisible by {self.num_heads} heads")


PRESETS = {
    "vit-b": EncoderSpec(depth=12, width=768, mlp_ratio=4.0, num_classes=400, num_heads=12),
    "vit-l": EncoderSpec(depth=24, width=1024, mlp_ratio=4.0, num_classes=400, num_heads=16),
}


@dataclass(frozen=True)
class FlopsProfile:
    tokens: int
    depth: int
    qkv_and_proj: float
    attention_scores_and_values: float
    mlp: float
    head: float

    @property
    def per_block(self):
        return self.qkv_and_proj + self.attention_scores_and_values + self.mlp

    @property
    def total_flops(self):
        return self.depth * self.per_block + self.head

    @property
    def total_gflops(self):
        return self.total_flops / 1e9

    def to_dict(self):
        out = asdict(self)
        out["per_block"] = self.per_block
        out["total_flops"] = self.total_flops
        out["total_gflops"] = self.total_gflops
        return out


def estimate_flops(spec: EncoderSpec, tokens: int) -> FlopsProfile:
    if tokens < 0:
        raise ConfigError(f"token count must be non-negative, got {tokens}")
    n, d = float(tokens), float(spec.width)
    return FlopsProfile(
        tokens=int(tokens),
        depth=spec.depth,
        qkv_and_proj=4.0 * n * d * d,
        attention_scores_and_values=2.0 * n * n * d,
        mlp=2.0 * spec.mlp_ratio * n * d * d,
        head=n * d * spec.num_classes,
    )


def savings_report(spec: EncoderSpec, full_tokens: int, mask_ratio: float) -> dict:
    check_ratio(mask_ratio)
    kept = full_tokens - masked_count(mask_ratio, full_tokens)
    full = estimate_flops(spec, full_tokens).total_flops
    masked = estimate_flops(spec, kept).total_flops
    return {
        "full_tokens": full_tokens,
        "kept_tokens": kept,
        "mask_ratio": mask_ratio,
        "flops_full": full,
        "flops_masked": masked,
        "relative_saving": 1.0 - masked / full if full else 0.0,
    }


def tokens_for(frames, height, width, cube):
    """Token count of a ``frames x height x width`` clip cut into ``cube`` = (c, p1, p2)."""
    c, p1, p2 = cube
    return (frames // c) * (height // p1) * (width // p2)


def parse_views(text):
    """``"5x3"`` / ``"5×3"`` -> (clips, crops)."""
    m = re.fullmatch(r"\s*(\d+)\s*[x×X*]\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"views must look like 5x3, got {text!r}")
    clips, crops = int(m.group(1)), int(m.group(2))
    if clips < 1 or crops < 1:
        raise ConfigError(f"views must be positive, got {text!r}")
    return clips, crops
