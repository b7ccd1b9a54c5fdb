"""Range-query workload generation and interchange.

Three categories: ``small`` (single cells), ``large`` (10x10x10 boxes),
and ``random`` (independent uniform extents per axis).  Origins are
uniform over the placements that keep the box inside the grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .dp import make_rng
from .matrix import GridSpec, RangeQuery

CATEGORIES = ("random", "small", "large")
LARGE_EXTENT = 10


@dataclass
class QueryWorkload:
    category: str
    count: int
    seed: int
    queries: list[RangeQuery]


def generate_queries(category: str, count: int, grid: GridSpec, seed) -> QueryWorkload:
    if category not in CATEGORIES:
        raise ValueError(f"unknown workload category {category!r}")
    if count < 1:
        raise ValueError("count must be positive")
    sizes = grid.shape
    if category == "large" and min(sizes) < LARGE_EXTENT:
        raise ValueError(f"grid {sizes} too small for {LARGE_EXTENT}^3 queries")
    rng = make_rng((seed, "workload", category))
    queries = []
    for _ in range(count):
        if category == "small":
            extents = (1, 1, 1)
        elif category == "large":
            extents = (LARGE_EXTENT,) * 3
        else:
            extents = tuple(int(rng.integers(1, size + 1)) for size in sizes)
        origins = tuple(int(rng.integers(0, size - ext + 1)) for size, ext in zip(sizes, extents))
        queries.append(RangeQuery(
            (origins[0], origins[0] + extents[0] - 1),
            (origins[1], origins[1] + extents[1] - 1),
            (origins[2], origins[2] + extents[2] - 1),
        ))
    return QueryWorkload(category, count, seed if isinstance(seed, int) else 0, queries)


WORKLOAD_HEADER = ["x0", "x1", "y0", "y1", "t0", "t1"]


def write_workload_csv(workload: QueryWorkload, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WORKLOAD_HEADER)
        for q in workload.queries:
            writer.writerow([q.x_range[0], q.x_range[1], q.y_range[0], q.y_range[1],
                             q.t_range[0], q.t_range[1]])


def read_workload_csv(path) -> list[RangeQuery]:
    path = Path(path)
    queries = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WORKLOAD_HEADER:
            raise ValueError(f"{path}: expected header {','.join(WORKLOAD_HEADER)}")
        for row in reader:
            x0, x1, y0, y1, t0, t1 = (int(v) for v in row)
            queries.append(RangeQuery((x0, x1), (y0, y1), (t0, t1)))
    return queries
