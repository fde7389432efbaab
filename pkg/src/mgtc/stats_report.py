"""Residual distributions and masking-strategy comparisons, emitted as plot-ready JSON/CSV."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from mgtc.baselines import CELL_RATIOS, cell_running_mask, random_mask, tube_mask
from mgtc.errors import FormatError, MGTCError, ShapeError
from mgtc.fileio import atomic_write
from mgtc.masking import TokenMask, compute_residuals, mgtc_mask
from mgtc.tokenizer import CubeGrid, CubeShape, tokenize

REPORT_VERSION = 1
MAX_RESIDUAL = 255.0**2
DEFAULT_EPSILON = 1.0
DEFAULT_LOG_BINS = 24
# prediction for a masked cube whose whole spatial column is masked
MID_GRAY = 127.5

HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "count")
SUMMARY_COLUMNS = ("clip", "strategy", "ratio", "ratio_realized", "key_frame_index",
                   "kept_motion_energy_fraction", "reconstruction_proxy_error")


@dataclass(frozen=True)
class ResidualHistogram:
    """Counts of cube residuals; bin k covers ``[bin_edges[k], bin_edges[k+1])``.

    The first bin is the linear near-zero bin ``[0, epsilon)``; the rest are
    log-spaced up to the largest possible residual. Values beyond the last
    edge land in the last bin.
    """

    bin_edges: tuple
    counts: tuple
    total: int
    near_zero_fraction: float
    epsilon: float = DEFAULT_EPSILON

    def to_dict(self):
        return {
            "schema": "residual_histogram",
            "version": REPORT_VERSION,
            "epsilon": self.epsilon,
            "total": self.total,
            "near_zero_fraction": self.near_zero_fraction,
            "bin_edges": list(self.bin_edges),
            "counts": list(self.counts),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(doc["bin_edges"]), tuple(doc["counts"]), doc["total"],
                   doc["near_zero_fraction"], doc["epsilon"])

    def csv_rows(self):
        return [(lo, hi, n) for lo, hi, n in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)]


@dataclass(frozen=True)
class CompareRecord:
    clip: str
    strategy: str
    ratio: float
    ratio_realized: float
    key_frame_index: Optional[int]
    kept_motion_energy_fraction: float
    reconstruction_proxy_error: float


@dataclass(frozen=True)
class CompareSummary:
    """Comparison rows, one per (clip, strategy, ratio); ``seed`` is the run-level seed."""

    records: tuple
    seed: int

    def to_dict(self):
        return {
            "schema": "compare_summary",
            "version": REPORT_VERSION,
            "seed": self.seed,
            "records": [vars(r).copy() for r in self.records],
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(CompareRecord(**r) for r in doc["records"]), doc["seed"])

    def csv_rows(self):
        return [tuple("" if getattr(r, c) is None else getattr(r, c) for c in SUMMARY_COLUMNS)
                for r in self.records]

    def get(self, strategy, ratio, clip=None):
        for r in self.records:
            if r.strategy == strategy and r.ratio == ratio and (clip is None or r.clip == clip):
                return r
        raise KeyError((strategy, ratio, clip))

    def merged(self, other):
        return CompareSummary(self.records + other.records, self.seed)


def histogram_edges(epsilon=DEFAULT_EPSILON, log_bins=DEFAULT_LOG_BINS):
    lo = epsilon if epsilon > 0 else 1.0
    return np.concatenate([[0.0], np.logspace(np.log10(lo), np.log10(MAX_RESIDUAL), log_bins + 1)])


def residual_histogram(clips: Sequence, shape: CubeShape = CubeShape(), epsilon: float = DEFAULT_EPSILON,
                       names: Optional[Sequence[str]] = None, log_bins: int = DEFAULT_LOG_BINS) -> ResidualHistogram:
    """Pool the residuals of every clip into one histogram."""
    if not clips:
        raise ValueError("residual_histogram needs at least one clip")
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    edges = histogram_edges(epsilon, log_bins)
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    total = near_zero = 0
    for n, clip in enumerate(clips):
        try:
            grid = tokenize(clip, shape)
        except ShapeError as exc:
            label = names[n] if names else f"#{n}"
            raise ShapeError(f"clip {label}: {exc}") from None
        d = compute_residuals(grid).values.reshape(-1)
        idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, len(counts) - 1)
        counts += np.bincount(idx, minlength=len(counts))
        total += d.size
        near_zero += int(np.count_nonzero(d < epsilon))
    return ResidualHistogram(
        tuple(float(e) for e in edges),
        tuple(int(c) for c in counts),
        int(total),
        near_zero / total,
        float(epsilon),
    )


def kept_motion_energy_fraction(residuals: np.ndarray, keep: np.ndarray) -> float:
    """Share of total residual mass carried by kept cubes (1.0 for a motionless grid)."""
    peak = residuals.max()
    if peak <= 0:
        return 1.0
    scaled = residuals / peak  # keeps the sentinel-valued grids finite
    return float(scaled[keep].sum() / scaled.sum())


def reconstruction_proxy_error(cubes: np.ndarray, keep: np.ndarray) -> float:
    """Mean MSE of each masked cube against the nearest kept cube at the same spatial index.

    Ties between an earlier and a later neighbour go to the earlier one; a
    masked cube with no kept cube in its column is compared to mid-gray.
    """
    t_blocks, s_blocks = keep.shape
    errors = []
    for j in range(s_blocks):
        kept_t = np.flatnonzero(keep[:, j])
        for i in np.flatnonzero(~keep[:, j]):
            if kept_t.size:
                ref = cubes[kept_t[np.argmin(np.abs(kept_t - i))], j]
            else:
                ref = MID_GRAY
            errors.append(np.mean((cubes[i, j] - ref) ** 2))
    return float(np.mean(errors)) if errors else 0.0


def _annotated(strategy, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except MGTCError as exc:
        annotated = type(exc)(f"{strategy}: {exc}")
        annotated.__dict__.update(exc.__dict__)
        raise annotated from exc


def _record(mask: TokenMask, residuals, cubes, clip):
    return CompareRecord(
        clip=clip,
        strategy=mask.strategy_tag,
        ratio=float(mask.ratio_requested),
        ratio_realized=mask.ratio_realized,
        key_frame_index=mask.key_frame_index,
        kept_motion_energy_fraction=kept_motion_energy_fraction(residuals, mask.keep),
        reconstruction_proxy_error=reconstruction_proxy_error(cubes, mask.keep),
    )


def compare_strategies(grid: CubeGrid, ratios: Sequence[float], seed: int, clip: str = "") -> CompareSummary:
    """MGTC (eval mode) against random, tube and cell-running masks at each ratio.

    Random and tube masking retain the same key frame MGTC picks, so the
    comparison isolates which non-key cubes each strategy drops. Cell-running
    runs only where its pattern can express the ratio.
    """
    field = compute_residuals(grid)
    cubes = grid.cubes(np.float64)
    records = []
    cell_ok = grid.rows % 2 == 0 and grid.cols % 2 == 0
    for ratio in ratios:
        m = _annotated("mgtc", mgtc_mask, grid, ratio, mode="eval", field=field)
        key_frame = m.key_frame_index
        masks = [
            m,
            _annotated("random", random_mask, grid, ratio, seed, key_frame=key_frame),
            _annotated("tube", tube_mask, grid, ratio, seed, key_frame=key_frame),
        ]
        if cell_ok and any(abs(ratio - r) < 1e-9 for r in CELL_RATIOS):
            masks.append(_annotated("cell_running", cell_running_mask, grid, ratio))
        records += [_record(mask, field.values, cubes, clip) for mask in masks]
    return CompareSummary(tuple(records), seed)


def _columns_for(report):
    return HISTOGRAM_COLUMNS if isinstance(report, ResidualHistogram) else SUMMARY_COLUMNS


def render_report(report, fmt="json", provenance=None) -> str:
    if fmt == "json":
        doc = report.to_dict()
        if provenance is not None:
            doc["provenance"] = provenance
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_columns_for(report))
        writer.writerows(report.csv_rows())
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report, path, fmt="json", provenance=None):
    """Write a histogram or comparison summary as JSON (version-tagged) or CSV."""
    atomic_write(path, render_report(report, fmt, provenance))


def parse_report(text):
    doc = json.loads(text)
    kinds = {"residual_histogram": ResidualHistogram, "compare_summary": CompareSummary}
    if doc.get("schema") not in kinds:
        raise FormatError(f"unknown report schema {doc.get('schema')!r}")
    if doc.get("version") != REPORT_VERSION:
        raise FormatError(f"unsupported report version {doc.get('version')}")
    return kinds[doc["schema"]].from_dict(doc)
