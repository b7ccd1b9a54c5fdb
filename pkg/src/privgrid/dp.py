"""Laplace mechanism, sensitivity bounds, and privacy-budget accounting.

Noise is sampled by inverse CDF from a named 64-bit generator (numpy PCG64)
so that runs reproduce bit-for-bit across platforms for a fixed seed.
Concurrent users should derive one stream per worker via
:func:`spawn_stream`; the ledger itself is single-writer.

Budget arithmetic is strict: a charge that would push a phase past its
budget raises instead of clamping, so a privacy violation can never pass
silently.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEQUENTIAL = "sequential-time"
PARALLEL = "parallel-space"

#: slack for floating-point drift when summing many small charges; the
#: relative part keeps large budgets (vanishing-noise runs at eps ~ 1e6+)
#: from tripping on float ulps
BUDGET_TOLERANCE = 1e-12


def _budget_slack(budget: float) -> float:
    return BUDGET_TOLERANCE + BUDGET_TOLERANCE * abs(budget)


class BudgetExhaustedError(RuntimeError):
    """A charge would exceed the remaining budget of its phase."""


def _seed_entropy(seed) -> int:
    """Map an int, or any repr-stable key (tuples of ints/strings), to entropy."""
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    digest = hashlib.sha256(repr(seed).encode()).digest()
    return int.from_bytes(digest[:16], "little")


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; the single RNG type used across the package.

    ``seed`` may be an int or a structured key like (master, "phase", 3);
    structured keys are hashed to entropy, so distinct keys give
    independent, reproducible streams.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_seed_entropy(seed))))


def spawn_stream(seed, stream_id: int) -> np.random.Generator:
    """Independent, reproducible child stream (seed, stream_id)."""
    return make_rng((_seed_entropy(seed), stream_id))


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Sample Lap(0, scale) by inverse CDF.

    With u uniform on (-1/2, 1/2), x = -scale * sign(u) * ln(1 - 2|u|).
    Returns a scalar when size is None, else an ndarray.
    """
    if scale <= 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    u = rng.random(size) - 0.5
    x = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(x) if size is None else x


@dataclass(frozen=True)
class Charge:
    label: str
    epsilon: float
    klass: str
    phase: str
    group: str | None
    timestamp: float


@dataclass
class BudgetLedger:
    """Tracks privacy-budget consumption for one mechanism run.

    The total budget splits into a pattern phase and a sanitize phase.
    Sequential charges within a phase add up; parallel charges sharing a
    group key (disjoint sub-populations, e.g. cells of one time slice)
    count once at their maximum.
    """

    eps_pattern: float
    eps_sanitize: float
    charges: list[Charge] = field(default_factory=list)

    def __post_init__(self):
        if self.eps_pattern < 0 or self.eps_sanitize < 0:
            raise ValueError("phase budgets must be non-negative")

    @property
    def eps_tot(self) -> float:
        return self.eps_pattern + self.eps_sanitize

    def _phase_budget(self, phase: str) -> float:
        if phase == "pattern":
            return self.eps_pattern
        if phase == "sanitize":
            return self.eps_sanitize
        raise ValueError(f"unknown phase {phase!r}")

    def phase_total(self, phase: str) -> float:
        sequential = 0.0
        group_max: dict[str, float] = {}
        for ch in self.charges:
            if ch.phase != phase:
                continue
            if ch.klass == SEQUENTIAL:
                sequential += ch.epsilon
            else:
                key = ch.group if ch.group is not None else ch.label
                group_max[key] = max(group_max.get(key, 0.0), ch.epsilon)
        return sequential + sum(group_max.values())

    def total(self) -> float:
        return self.phase_total("pattern") + self.phase_total("sanitize")

    def remaining(self, phase: str) -> float:
        return self._phase_budget(phase) - self.phase_total(phase)

    def charge(self, label: str, epsilon: float, phase: str, klass: str = SEQUENTIAL,
               group: str | None = None):
        if epsilon <= 0:
            raise ValueError(f"charge must be positive, got {epsilon}")
        if klass not in (SEQUENTIAL, PARALLEL):
            raise ValueError(f"unknown composition class {klass!r}")
        budget = self._phase_budget(phase)
        spent = self.phase_total(phase)
        if klass == SEQUENTIAL:
            increment = epsilon
        else:
            key = group if group is not None else label
            current_max = max(
                (ch.epsilon for ch in self.charges
                 if ch.phase == phase and ch.klass == PARALLEL
                 and (ch.group if ch.group is not None else ch.label) == key),
                default=0.0,
            )
            increment = max(0.0, epsilon - current_max)
        if spent + increment > budget + _budget_slack(budget):
            raise BudgetExhaustedError(
                f"charge {label!r} of {epsilon} exceeds {phase} budget "
                f"({spent} of {budget} already spent)"
            )
        self.charges.append(Charge(label, epsilon, klass, phase, group, time.time()))

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "epsilon", "class", "phase", "timestamp"])
            for ch in self.charges:
                writer.writerow([ch.label, repr(ch.epsilon), ch.klass, ch.phase, repr(ch.timestamp)])


def laplace_mechanism(value, sensitivity: float, epsilon: float, rng: np.random.Generator,
                      ledger: BudgetLedger, phase: str, label: str,
                      klass: str = SEQUENTIAL, group: str | None = None):
    """Release value + Lap(sensitivity/epsilon) and record the charge.

    ``value`` may be an array when its elements are queries over disjoint
    sub-populations (parallel composition); the single recorded charge then
    covers the whole group.
    """
    if sensitivity <= 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    ledger.charge(label, epsilon, phase, klass, group)
    scale = sensitivity / epsilon
    value = np.asarray(value, dtype=float)
    noise = laplace_sample(scale, rng, size=value.shape if value.shape else None)
    out = value + noise
    return float(out) if out.shape == () else out


# ---------------------------------------------------------------------------
# Sensitivity bounds
# ---------------------------------------------------------------------------


def identity_cell_sensitivity(dataset) -> float:
    """Worst-case change of a single cell when one household is added/removed.

    Each cell holds at most one reading per household per interval, so the
    bound is the largest reading present (1.0 for normalized series, the
    clipping factor after clipping).
    """
    return dataset.max_reading()


def depth_sensitivity(depth: int, c_x: int) -> float:
    """Per-value sensitivity of a neighborhood-mean series at a quadtree depth.

    A neighborhood at depth d of a side-c_x grid averages over
    4**(log2(c_x) - d) cells, and one household can move exactly one of
    those cells by at most 1 (normalized data).
    """
    max_depth = int(round(np.log2(c_x)))
    if 2 ** max_depth != c_x:
        raise ValueError(f"grid side {c_x} is not a power of two")
    if not 0 <= depth <= max_depth:
        raise ValueError(f"depth {depth} outside 0..{max_depth}")
    return 1.0 / 4 ** (max_depth - depth)


def partition_sensitivity(cells, grid, per_cell_bound: float) -> float:
    """Sensitivity of a partition aggregate: per-cell bound times the
    largest number of the partition's cells stacked in any (x, y) pillar.

    A household contributes to exactly one pillar, by at most
    ``per_cell_bound`` per cell, so its removal moves the aggregate by at
    most bound * (cells of that pillar inside the partition).
    """
    if per_cell_bound <= 0:
        raise ValueError(f"per-cell bound must be positive, got {per_cell_bound}")
    cells = np.asarray(cells, dtype=int)
    if cells.size == 0:
        raise ValueError("empty partition has no sensitivity; drop it")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise ValueError("cells must be an (n, 3) array of (x, y, t) indices")
    pillar = cells[:, 0] * grid.c_y + cells[:, 1]
    counts = np.bincount(pillar, minlength=grid.c_x * grid.c_y)
    return per_cell_bound * int(counts.max())


def pillar_counts(assignment: np.ndarray, n_buckets: int) -> np.ndarray:
    """Max pillar occupancy per bucket for a full-matrix bucket assignment.

    ``assignment`` has shape (c_x, c_y, c_t); returns an array of length
    n_buckets with the largest per-(x, y) cell count of each bucket.
    """
    c_x, c_y, _ = assignment.shape
    pillar_idx = np.repeat(np.arange(c_x * c_y), assignment.shape[2])
    flat = assignment.reshape(c_x * c_y, -1).ravel()
    joint = np.bincount(flat * (c_x * c_y) + pillar_idx, minlength=n_buckets * c_x * c_y)
    return joint.reshape(n_buckets, c_x * c_y).max(axis=1)


def allocate_budget(sensitivities, eps_sanitize: float) -> np.ndarray:
    """Split a sanitization budget across partitions, minimizing total
    Laplace noise variance sum(s_i^2 / eps_i^2) subject to sum(eps_i) = budget.

    The minimizer is proportional to s_i^(2/3).
    """
    s = np.asarray(sensitivities, dtype=float)
    if s.size == 0:
        raise ValueError("no partitions to allocate budget to")
    if np.any(s <= 0):
        raise ValueError("all sensitivities must be positive")
    if eps_sanitize <= 0:
        raise ValueError(f"budget must be positive, got {eps_sanitize}")
    weights = s ** (2.0 / 3.0)
    return eps_sanitize * weights / weights.sum()
