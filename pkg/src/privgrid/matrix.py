"""Consumption matrix core: grid types, dataset ingestion, range queries, MRE.

The central data structure is a dense 3-D array of per-cell, per-interval
electricity totals (x, y, t).  Household readings are aggregated into it,
optionally after clipping, and the same array type carries the normalized,
pattern-estimate, and sanitized variants (distinguished by a provenance tag).

CSV formats:
  - dataset (long):  header ``household_id,x,y,t,kwh``, one row per reading,
    strict (every household must cover every interval exactly once).
  - matrix:          header ``x,y,t,value`` plus a JSON sidecar with grid
    dims, provenance, normalization params and consumed budget.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROVENANCES = ("raw", "normalized", "pattern", "sanitized")

#: true answers at or below this are excluded from relative-error averages
MRE_TRUE_ANSWER_FLOOR = 1e-6


class DegenerateQueryError(ValueError):
    """True answer too small for a relative error to be meaningful."""


@dataclass(frozen=True)
class GridSpec:
    """Spatial grid of c_x * c_y cells and c_t time intervals.

    The side must be square and a power of two: the pattern-recognition
    stage tiles the grid into quadrants down to single cells.
    """

    c_x: int
    c_y: int
    c_t: int

    def __post_init__(self):
        if self.c_x != self.c_y:
            raise ValueError(f"grid must be square, got {self.c_x}x{self.c_y}")
        if self.c_x < 1 or (self.c_x & (self.c_x - 1)) != 0:
            raise ValueError(f"grid side must be a power of two, got {self.c_x}")
        if self.c_t < 1:
            raise ValueError(f"interval count must be positive, got {self.c_t}")

    @property
    def depth(self) -> int:
        """Number of quadrant subdivisions down to single cells, log2(side)."""
        return int(round(math.log2(self.c_x)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.c_x, self.c_y, self.c_t)


@dataclass(frozen=True)
class HouseholdRecord:
    """One household: an opaque id, a grid cell, and its reading series."""

    id: str
    cell: tuple[int, int]
    readings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "readings", np.asarray(self.readings, dtype=float))
        if self.readings.ndim != 1:
            raise ValueError("readings must be a 1-D series")
        if np.any(self.readings < 0):
            raise ValueError(f"household {self.id}: negative reading")


@dataclass
class HouseholdDataset:
    """A set of household records validated against one grid."""

    grid: GridSpec
    records: list[HouseholdRecord] = field(default_factory=list)

    def __post_init__(self):
        for rec in self.records:
            self._check(rec)

    def _check(self, rec: HouseholdRecord):
        x, y = rec.cell
        if not (0 <= x < self.grid.c_x and 0 <= y < self.grid.c_y):
            raise ValueError(f"household {rec.id}: cell {rec.cell} outside {self.grid.c_x}x{self.grid.c_y} grid")
        if len(rec.readings) != self.grid.c_t:
            raise ValueError(
                f"household {rec.id}: {len(rec.readings)} readings, expected {self.grid.c_t}"
            )

    def __len__(self) -> int:
        return len(self.records)

    def max_reading(self) -> float:
        if not self.records:
            raise ValueError("empty dataset")
        return max(float(rec.readings.max()) for rec in self.records)


@dataclass(frozen=True)
class NormalizationParams:
    """Global min/max used for the affine [0, 1] rescaling of matrix cells."""

    global_min: float
    global_max: float

    def __post_init__(self):
        if not self.global_max > self.global_min:
            raise ValueError("normalization requires global_max > global_min")

    @property
    def span(self) -> float:
        return self.global_max - self.global_min


@dataclass
class ConsumptionMatrix:
    """Dense (c_x, c_y, c_t) array of consumption values.

    Immutable after construction; the cells buffer is set read-only so
    concurrent range queries are safe.
    """

    grid: GridSpec
    cells: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        arr = np.array(self.cells, dtype=float)
        if arr.shape != self.grid.shape:
            raise ValueError(f"cells shape {arr.shape} does not match grid {self.grid.shape}")
        if self.provenance == "raw" and np.any(arr < 0):
            raise ValueError("raw matrix must be non-negative")
        if self.provenance == "normalized" and (arr.min() < -1e-9 or arr.max() > 1 + 1e-9):
            raise ValueError("normalized matrix must lie in [0, 1]")
        arr.flags.writeable = False
        self.cells = arr

    def total(self) -> float:
        return float(self.cells.sum())


@dataclass(frozen=True)
class RangeQuery:
    """Axis-aligned box of cells; all bounds are inclusive indices."""

    x_range: tuple[int, int]
    y_range: tuple[int, int]
    t_range: tuple[int, int]

    def __post_init__(self):
        for name, (lo, hi) in zip("xyt", (self.x_range, self.y_range, self.t_range)):
            if lo > hi:
                raise ValueError(f"empty {name}-interval ({lo}, {hi})")
            if lo < 0:
                raise ValueError(f"negative {name}-index {lo}")

    def check_bounds(self, grid: GridSpec):
        for name, (_, hi), size in zip("xyt", (self.x_range, self.y_range, self.t_range), grid.shape):
            if hi >= size:
                raise ValueError(f"{name}-interval exceeds grid extent {size}")

    @property
    def extents(self) -> tuple[int, int, int]:
        return (
            self.x_range[1] - self.x_range[0] + 1,
            self.y_range[1] - self.y_range[0] + 1,
            self.t_range[1] - self.t_range[0] + 1,
        )


def clip_readings(dataset: HouseholdDataset, clip: float) -> HouseholdDataset:
    """Cap every reading at ``clip`` so one household moves any cell by at most ``clip``."""
    if clip <= 0:
        raise ValueError(f"clip factor must be positive, got {clip}")
    records = [
        HouseholdRecord(rec.id, rec.cell, np.minimum(rec.readings, clip))
        for rec in dataset.records
    ]
    return HouseholdDataset(dataset.grid, records)


def build_consumption_matrix(dataset: HouseholdDataset, grid: GridSpec | None = None) -> ConsumptionMatrix:
    """Sum household series into their cells; provenance ``raw``."""
    grid = grid or dataset.grid
    if grid != dataset.grid:
        raise ValueError("dataset was validated against a different grid")
    cells = np.zeros(grid.shape)
    for rec in dataset.records:
        x, y = rec.cell
        cells[x, y, :] += rec.readings
    return ConsumptionMatrix(grid, cells, "raw")


def minmax_normalize(matrix: ConsumptionMatrix) -> tuple[ConsumptionMatrix, NormalizationParams]:
    """Rescale cells to [0, 1] by the global cell min/max.

    Raises ValueError for a constant matrix (max == min), which has no
    meaningful normalization.
    """
    lo = float(matrix.cells.min())
    hi = float(matrix.cells.max())
    if not hi > lo:
        raise ValueError("degenerate matrix: all cells equal, cannot normalize")
    params = NormalizationParams(lo, hi)
    cells = (matrix.cells - lo) / params.span
    return ConsumptionMatrix(matrix.grid, cells, "normalized"), params


def denormalize(matrix: ConsumptionMatrix, params: NormalizationParams, provenance: str = "sanitized") -> ConsumptionMatrix:
    """Invert :func:`minmax_normalize` back to raw units."""
    cells = matrix.cells * params.span + params.global_min
    return ConsumptionMatrix(matrix.grid, cells, provenance)


def answer_range_query(matrix: ConsumptionMatrix, query: RangeQuery) -> float:
    """Aggregated consumption inside the query box."""
    query.check_bounds(matrix.grid)
    (x0, x1), (y0, y1), (t0, t1) = query.x_range, query.y_range, query.t_range
    return float(matrix.cells[x0 : x1 + 1, y0 : y1 + 1, t0 : t1 + 1].sum())


def mre(true_answer: float, noisy_answer: float, floor: float = MRE_TRUE_ANSWER_FLOOR) -> float:
    """Relative error of a noisy answer, in percent.

    Raises DegenerateQueryError when the true answer is at or below the
    floor; such queries are excluded from averages by the caller.
    """
    if true_answer <= floor:
        raise DegenerateQueryError(f"true answer {true_answer} <= floor {floor}")
    return abs(true_answer - noisy_answer) / true_answer * 100.0


def mean_mre(true_answers, noisy_answers, floor: float = MRE_TRUE_ANSWER_FLOOR) -> tuple[float, int]:
    """Average MRE over answer pairs, returning (mean percent, excluded count).

    Returns (nan, n) when every query was excluded.
    """
    errors = []
    excluded = 0
    for p, pbar in zip(true_answers, noisy_answers, strict=True):
        try:
            errors.append(mre(p, pbar, floor))
        except DegenerateQueryError:
            excluded += 1
    if not errors:
        return float("nan"), excluded
    return float(np.mean(errors)), excluded


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

DATASET_HEADER = ["household_id", "x", "y", "t", "kwh"]
MATRIX_HEADER = ["x", "y", "t", "value"]


def write_dataset_csv(dataset: HouseholdDataset, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for rec in dataset.records:
            x, y = rec.cell
            for t, v in enumerate(rec.readings):
                writer.writerow([rec.id, x, y, t, repr(float(v))])


def read_dataset_csv(path, grid: GridSpec) -> HouseholdDataset:
    """Parse a long-format dataset CSV, rejecting gaps and duplicates."""
    path = Path(path)
    per_household: dict[str, dict] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            hid, xs, ys, ts, vs = row
            try:
                x, y, t, v = int(xs), int(ys), int(ts), float(vs)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= t < grid.c_t:
                raise ValueError(f"{path}:{lineno}: interval {t} outside 0..{grid.c_t - 1}")
            entry = per_household.setdefault(hid, {"cell": (x, y), "readings": np.full(grid.c_t, np.nan)})
            if entry["cell"] != (x, y):
                raise ValueError(f"{path}:{lineno}: household {hid} has inconsistent cells")
            if not np.isnan(entry["readings"][t]):
                raise ValueError(f"{path}:{lineno}: duplicate interval {t} for household {hid}")
            entry["readings"][t] = v
    records = []
    for hid in sorted(per_household):
        entry = per_household[hid]
        missing = np.flatnonzero(np.isnan(entry["readings"]))
        if missing.size:
            raise ValueError(f"{path}: household {hid} missing interval {missing[0]}")
        records.append(HouseholdRecord(hid, entry["cell"], entry["readings"]))
    return HouseholdDataset(grid, records)


def write_matrix_csv(matrix: ConsumptionMatrix, path, norm_params: NormalizationParams | None = None,
                     consumed_budget: float | None = None, extra_meta: dict | None = None):
    """Write cell values plus a ``<path>.meta.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MATRIX_HEADER)
        c_x, c_y, c_t = matrix.grid.shape
        for x in range(c_x):
            for y in range(c_y):
                for t in range(c_t):
                    writer.writerow([x, y, t, repr(float(matrix.cells[x, y, t]))])
    meta = {
        "c_x": matrix.grid.c_x,
        "c_y": matrix.grid.c_y,
        "c_t": matrix.grid.c_t,
        "provenance": matrix.provenance,
        "normalization": None if norm_params is None else {
            "global_min": norm_params.global_min,
            "global_max": norm_params.global_max,
        },
        "consumed_budget": consumed_budget,
    }
    if extra_meta:
        meta.update(extra_meta)
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def read_matrix_csv(path) -> tuple[ConsumptionMatrix, dict]:
    """Read a matrix CSV and its sidecar; returns (matrix, metadata dict)."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    grid = GridSpec(meta["c_x"], meta["c_y"], meta["c_t"])
    cells = np.full(grid.shape, np.nan)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MATRIX_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MATRIX_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            x, y, t = int(row[0]), int(row[1]), int(row[2])
            cells[x, y, t] = float(row[3])
    if np.isnan(cells).any():
        raise ValueError(f"{path}: matrix has missing cells")
    return ConsumptionMatrix(grid, cells, meta["provenance"]), meta
