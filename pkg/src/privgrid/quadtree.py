"""Hierarchical pattern recognition over the training prefix.

The training prefix of the normalized matrix is cut into one time segment
per quadtree depth.  Depth d tiles the grid into 4**d square neighborhoods;
each neighborhood contributes one representative series (the per-step mean
over its cells) on that depth's segment.  Coarse depths average many cells,
so their series tolerate far less Laplace noise for the same per-step
budget, which is the whole point of the hierarchy.

Representative series are stacked (never concatenated across
neighborhoods) and swept with a fixed-size window to produce supervised
samples for the sequence model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dp import SEQUENTIAL, BudgetLedger, depth_sensitivity, laplace_sample
from .matrix import ConsumptionMatrix, GridSpec

#: sanitized training values are clamped here before windowing; wider than
#: [0, 1] to keep gradient signal, bounded to stop Laplace tails from
#: destabilizing training (post-processing, charges nothing)
TRAIN_CLAMP = (-0.5, 1.5)


@dataclass(frozen=True)
class Neighborhood:
    """Square tile of cells: origin (x0, y0), side cells per axis."""

    x0: int
    y0: int
    side: int


@dataclass(frozen=True)
class QuadLevel:
    """One quadtree depth: its tiling of the grid and its time segment."""

    depth: int
    neighborhoods: tuple[Neighborhood, ...]
    time_interval: tuple[int, int]  # [t0, t1)


@dataclass
class RepresentativeSeries:
    depth: int
    neighborhood: int
    values: np.ndarray
    sanitized: bool = False


@dataclass(frozen=True)
class TrainingSample:
    window: np.ndarray
    target: float


def split_training_time(t_train: int, c_x: int, depth: int | None = None) -> tuple[int, int]:
    """Number of levels and per-level segment length for the training prefix.

    Levels default to log2(c_x) + 1 (root through single cells); the
    segment length is ceil(t_train / levels).  Every level must get at
    least one step.
    """
    max_depth = int(round(math.log2(c_x)))
    if 2 ** max_depth != c_x:
        raise ValueError(f"grid side {c_x} is not a power of two")
    if depth is None:
        depth = max_depth
    if not 0 <= depth <= max_depth:
        raise ValueError(f"depth {depth} outside 0..{max_depth}")
    levels = depth + 1
    if t_train < levels:
        raise ValueError(f"training prefix {t_train} shorter than {levels} levels")
    return levels, math.ceil(t_train / levels)


def quad_levels(grid: GridSpec, t_train: int, depth: int | None = None) -> list[QuadLevel]:
    """Build every level's tiling and (possibly truncated) time segment.

    The last segment is truncated at the prefix end when levels * t_prime
    overshoots t_train.
    """
    if t_train > grid.c_t:
        raise ValueError(f"training prefix {t_train} exceeds matrix length {grid.c_t}")
    levels, t_prime = split_training_time(t_train, grid.c_x, depth)
    out = []
    for d in range(levels):
        side = grid.c_x // 2 ** d
        tiles = tuple(
            Neighborhood(i * side, j * side, side)
            for i in range(2 ** d)
            for j in range(2 ** d)
        )
        t0 = min(d * t_prime, t_train)
        t1 = min((d + 1) * t_prime, t_train)
        out.append(QuadLevel(d, tiles, (t0, t1)))
    return out


def build_representative_series(matrix: ConsumptionMatrix, level: QuadLevel) -> list[RepresentativeSeries]:
    """Per-neighborhood mean series over the level's time segment.

    The mean is over the neighborhood's cell count (empty cells included
    as zeros), which is what bounds the series sensitivity by depth.
    """
    t0, t1 = level.time_interval
    out = []
    for idx, nb in enumerate(level.neighborhoods):
        block = matrix.cells[nb.x0 : nb.x0 + nb.side, nb.y0 : nb.y0 + nb.side, t0:t1]
        out.append(RepresentativeSeries(level.depth, idx, block.mean(axis=(0, 1))))
    return out


def sanitize_representatives(series: list[RepresentativeSeries], eps_pattern: float,
                             t_train: int, ledger: BudgetLedger, rng: np.random.Generator,
                             c_x: int) -> list[RepresentativeSeries]:
    """Perturb every representative value with depth-scaled Laplace noise.

    Each time step is one sequential charge of eps_pattern / t_train; the
    neighborhoods sharing a step occupy disjoint cells and compose in
    parallel, so the step is charged once.  Series are processed in
    canonical depth-then-row-major order so a fixed seed reproduces the
    output exactly.
    """
    if eps_pattern <= 0:
        raise ValueError(f"pattern budget must be positive, got {eps_pattern}")
    eps_step = eps_pattern / t_train
    ordered = sorted(series, key=lambda s: (s.depth, s.neighborhood))
    seg_len: dict[int, int] = {}
    for s in ordered:
        if seg_len.setdefault(s.depth, len(s.values)) != len(s.values):
            raise ValueError(f"series at depth {s.depth} have unequal lengths")
    # a depth's segment starts where the previous depths' segments end
    origins = {d: sum(seg_len[p] for p in seg_len if p < d) for d in seg_len}
    charged_steps: set[int] = set()
    out = []
    for s in ordered:
        scale = depth_sensitivity(s.depth, c_x) / eps_step
        length = len(s.values)
        for t in range(origins[s.depth], origins[s.depth] + length):
            if t not in charged_steps:
                ledger.charge(f"pattern-step-{t}", eps_step, "pattern", SEQUENTIAL)
                charged_steps.add(t)
        noise = laplace_sample(scale, rng, size=length) if length else np.zeros(0)
        out.append(RepresentativeSeries(s.depth, s.neighborhood, s.values + noise, sanitized=True))
    return out


def windowize(series: list[RepresentativeSeries], ws: int,
              clamp: tuple[float, float] | None = TRAIN_CLAMP) -> list[TrainingSample]:
    """Sweep a window of ws values (stride 1) over each series individually.

    A series of length L yields max(0, L - ws) samples; series shorter
    than ws + 1 contribute nothing.  Windows never cross series.
    """
    if ws < 1:
        raise ValueError(f"window size must be >= 1, got {ws}")
    samples = []
    for s in series:
        values = np.asarray(s.values, dtype=float)
        if clamp is not None:
            values = np.clip(values, clamp[0], clamp[1])
        for p in range(len(values) - ws):
            samples.append(TrainingSample(values[p : p + ws].copy(), float(values[p + ws])))
    return samples


def stack_prefix(series: list[RepresentativeSeries], grid: GridSpec, t_train: int,
                 levels: list[QuadLevel]) -> np.ndarray:
    """Reassemble sanitized series into a (c_x, c_y, t_train) prefix block.

    Every cell's value at step t is the series of the unique neighborhood
    covering it at the level that owns t; values are clamped to [0, 1]
    (budget-free post-processing of sanitized data).
    """
    if any(not s.sanitized for s in series):
        raise ValueError("prefix must be built from sanitized series only")
    by_key = {(s.depth, s.neighborhood): s for s in series}
    prefix = np.full((grid.c_x, grid.c_y, t_train), np.nan)
    for level in levels:
        t0, t1 = level.time_interval
        if t1 <= t0:
            continue
        for idx, nb in enumerate(level.neighborhoods):
            s = by_key[(level.depth, idx)]
            prefix[nb.x0 : nb.x0 + nb.side, nb.y0 : nb.y0 + nb.side, t0:t1] = s.values
    if np.isnan(prefix).any():
        raise ValueError("levels do not cover the training prefix")
    return np.clip(prefix, 0.0, 1.0)


def dump_series_csv(path, unsanitized: list[RepresentativeSeries],
                    sanitized: list[RepresentativeSeries]):
    """Debug dump of representative series before and after sanitization."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["depth", "neighborhood", "t", "value", "sanitized"])
        for group, flag in ((unsanitized, 0), (sanitized, 1)):
            for s in group:
                for t, v in enumerate(s.values):
                    writer.writerow([s.depth, s.neighborhood, t, repr(float(v)), flag])
