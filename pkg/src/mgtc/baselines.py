"""Comparison masking strategies: random, tube and cell-running.

All stochastic choices go through :class:`mgtc.rng.SplitMix64` so masks are
reproducible across platforms. ``key_frame`` on random and tube masking lets
them run under the same retained temporal index as MGTC for fair comparisons;
by default none is enforced.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from mgtc.errors import ConfigError, FeasibilityError
from mgtc.masking import TokenMask, check_ratio, masked_count
from mgtc.rng import SplitMix64
from mgtc.tokenizer import CubeGrid

CELL_RATIOS = (0.0, 0.25, 0.5, 0.75)
# cell positions a, b, c, d walked clockwise from the top-left: (row, col) offsets
CELL_ORDER = ((0, 0), (0, 1), (1, 1), (1, 0))


def random_mask(grid: CubeGrid, ratio: float, seed: int, key_frame: Optional[int] = None) -> TokenMask:
    """Mask exactly ``round(ratio * L)`` cubes chosen uniformly without replacement.

    The flattened (i-major) candidate indices are Fisher-Yates shuffled and
    the first k are masked.
    """
    check_ratio(ratio)
    L, s = grid.L, grid.s_blocks
    k = masked_count(ratio, L)
    candidates = list(range(L))
    if key_frame is not None:
        if k > L - s:
            raise FeasibilityError(
                f"ratio {ratio} infeasible with a key frame; maximum is {(L - s) / L:g}",
                max_ratio=(L - s) / L,
            )
        candidates = [idx for idx in candidates if idx // s != key_frame]
    order = SplitMix64(seed).shuffle(candidates)
    keep = np.ones(L, dtype=bool)
    keep[order[:k]] = False
    return TokenMask(keep.reshape(grid.lattice), ratio, "random", key_frame, seed, None)


def tube_mask(grid: CubeGrid, ratio: float, seed: int, key_frame: Optional[int] = None) -> TokenMask:
    """Mask ``round(ratio * s_blocks)`` spatial positions at every temporal index.

    The realized ratio is ``k / s_blocks`` (see ``TokenMask.ratio_realized``);
    with a key frame its row stays visible and the realized ratio drops
    accordingly.
    """
    check_ratio(ratio)
    k = masked_count(ratio, grid.s_blocks)
    columns = SplitMix64(seed).permutation(grid.s_blocks)[:k]
    keep = np.ones(grid.lattice, dtype=bool)
    keep[:, columns] = False
    if key_frame is not None:
        keep[key_frame] = True
    return TokenMask(keep, ratio, "tube", key_frame, seed, None)


def cell_running_mask(grid: CubeGrid, ratio: float) -> TokenMask:
    """Deterministic running-cell pattern.

    The patch lattice is cut into 2x2 cells. At temporal index t the masked
    cell positions are ``CELL_ORDER[(t + q) % 4]`` for ``q < 4 * ratio``, so
    the masked group slides one step per index and every position is seen
    within any four consecutive indices. This is a reproducible stand-in for
    MAR's cell-running tables, not a copy of them.
    """
    check_ratio(ratio)
    matches = [r for r in CELL_RATIOS if abs(r - ratio) < 1e-9]
    if not matches:
        raise ConfigError(
            f"cell-running masking supports ratios {', '.join(map(str, CELL_RATIOS))}; got {ratio}"
        )
    if grid.rows % 2 or grid.cols % 2:
        raise ConfigError(
            f"cell-running masking needs an even patch lattice, got {grid.rows} x {grid.cols}"
        )
    m = int(round(4 * matches[0]))
    keep = np.ones((grid.t_blocks, grid.rows, grid.cols), dtype=bool)
    for t in range(grid.t_blocks):
        for q in range(m):
            dr, dc = CELL_ORDER[(t + q) % 4]
            keep[t, dr::2, dc::2] = False
    return TokenMask(keep.reshape(grid.lattice), ratio, "cell_running", None, None, None)
