"""Release stage: quantize the pattern matrix into partitions, then publish
noisy partition aggregates of the raw matrix.

Cells whose pattern estimates fall into the same of k equal-width value
buckets form one partition.  Each partition's true aggregate gets Laplace
noise scaled to its pillar sensitivity and its share of the sanitization
budget, and the noisy total is divided evenly over the partition's cells.
Partitions share individuals through pillars, so their charges compose
sequentially: the per-partition budgets sum to the full sanitize budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp import (
    SEQUENTIAL,
    BudgetLedger,
    allocate_budget,
    laplace_sample,
    pillar_counts,
)
from .matrix import ConsumptionMatrix


@dataclass
class Partition:
    bucket: int
    cells: np.ndarray          # (n, 3) int indices
    sensitivity: float = 0.0
    epsilon: float = 0.0


@dataclass
class PartitionSet:
    """k-quantization result: per-cell bucket ids plus non-empty partitions."""

    k: int
    assignment: np.ndarray     # (c_x, c_y, c_t) int bucket ids
    partitions: list[Partition]


def bucketize(values: np.ndarray, lo: float, hi: float, k: int) -> np.ndarray:
    """Equal-width bucket ids over [lo, hi]; the top edge belongs to k-1."""
    if k < 1:
        raise ValueError(f"quantization level count must be >= 1, got {k}")
    if not hi > lo:
        return np.zeros_like(np.asarray(values), dtype=int)
    raw = np.floor((np.asarray(values, dtype=float) - lo) * k / (hi - lo)).astype(int)
    return np.clip(raw, 0, k - 1)


def k_quantize(pattern: ConsumptionMatrix, k: int) -> PartitionSet:
    """Partition cells by k equal-width buckets of the pattern values."""
    if not np.all(np.isfinite(pattern.cells)):
        raise ValueError("pattern matrix contains non-finite values")
    cells = pattern.cells
    assignment = bucketize(cells, float(cells.min()), float(cells.max()), k)
    partitions = []
    flat = assignment.ravel()
    order = np.argsort(flat, kind="stable")
    coords = np.stack(np.unravel_index(order, assignment.shape), axis=1)
    boundaries = np.searchsorted(flat[order], np.arange(k + 1))
    for bucket in range(k):
        members = coords[boundaries[bucket] : boundaries[bucket + 1]]
        if len(members):
            partitions.append(Partition(bucket, members))
    return PartitionSet(k, assignment, partitions)


def sanitize_partitions(cons: ConsumptionMatrix, parts: PartitionSet, eps_sanitize: float,
                        clip: float, ledger: BudgetLedger, rng: np.random.Generator,
                        clamp_nonnegative: bool = False) -> ConsumptionMatrix:
    """Noisy partition totals of the raw matrix, spread evenly over cells.

    Negative noisy aggregates are kept by default: clamping would bias
    range-query sums.  ``clamp_nonnegative`` floors cells at zero for
    presentation (budget-free post-processing).
    """
    if not parts.partitions:
        raise ValueError("partition set is empty")
    if cons.provenance != "raw":
        raise ValueError(f"expected the raw consumption matrix, got {cons.provenance!r}")

    occupancy = pillar_counts(parts.assignment, parts.k)
    for part in parts.partitions:
        part.sensitivity = clip * float(occupancy[part.bucket])
    budgets = allocate_budget([p.sensitivity for p in parts.partitions], eps_sanitize)

    out = np.empty_like(cons.cells)
    for part, eps_i in zip(parts.partitions, budgets):
        part.epsilon = float(eps_i)
        xs, ys, ts = part.cells[:, 0], part.cells[:, 1], part.cells[:, 2]
        true_total = float(cons.cells[xs, ys, ts].sum())
        noisy_total = true_total + laplace_sample(part.sensitivity / eps_i, rng)
        ledger.charge(f"partition-{part.bucket}", eps_i, "sanitize", SEQUENTIAL)
        out[xs, ys, ts] = noisy_total / len(part.cells)
    if clamp_nonnegative:
        out = np.maximum(out, 0.0)
    return ConsumptionMatrix(cons.grid, out, "sanitized")


def partition_summary(parts: PartitionSet) -> list[dict]:
    """Sidecar rows: bucket id, cell count, sensitivity, allocated budget."""
    return [
        {"bucket": p.bucket, "cells": int(len(p.cells)),
         "sensitivity": p.sensitivity, "epsilon": p.epsilon}
        for p in parts.partitions
    ]
