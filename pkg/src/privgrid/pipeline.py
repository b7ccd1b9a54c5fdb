"""End-to-end pattern-guided publication pipeline.

Wires the stages together: clip and aggregate the raw data, normalize,
sanitize hierarchical representative series over the training prefix
(pattern budget), train the sequence model on the sanitized windows,
generate the full pattern matrix, quantize it into partitions, and release
noisy partition aggregates of the raw matrix (sanitize budget).

Total consumption is exactly eps_pattern + eps_sanitize; the model
training, generation, and quantization steps read sanitized data only and
charge nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import BudgetLedger, make_rng
from .matrix import (
    ConsumptionMatrix,
    GridSpec,
    HouseholdDataset,
    NormalizationParams,
    build_consumption_matrix,
    clip_readings,
    minmax_normalize,
)
from .quadtree import (
    build_representative_series,
    quad_levels,
    sanitize_representatives,
    stack_prefix,
    windowize,
)
from .rnn import ModelConfig, generate_pattern_matrix, train
from .sanitizer import k_quantize, partition_summary, sanitize_partitions


@dataclass
class PatternPipelineConfig:
    eps_pattern: float = 10.0
    eps_sanitize: float = 20.0
    clip: float = 1.85
    t_train: int = 100
    k_quant: int = 8
    depth: int | None = None          # defaults to log2(grid side)
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def eps_tot(self) -> float:
        return self.eps_pattern + self.eps_sanitize


@dataclass
class PatternRunResult:
    sanitized: ConsumptionMatrix
    ledger: BudgetLedger
    pattern: ConsumptionMatrix
    norm_params: NormalizationParams
    partition_info: list[dict]


def pattern_sanitize(dataset: HouseholdDataset, config: PatternPipelineConfig,
                     seed) -> PatternRunResult:
    """Run the full pipeline on a household dataset."""
    grid = dataset.grid
    if config.t_train >= grid.c_t:
        raise ValueError(f"t_train {config.t_train} must leave room in {grid.c_t} intervals")
    ledger = BudgetLedger(config.eps_pattern, config.eps_sanitize)
    rng = make_rng((seed, "pattern-pipeline"))

    clipped = clip_readings(dataset, config.clip)
    cons = build_consumption_matrix(clipped)
    norm, norm_params = minmax_normalize(cons)

    levels = quad_levels(grid, config.t_train, config.depth)
    series = []
    for level in levels:
        series.extend(build_representative_series(norm, level))
    sanitized_series = sanitize_representatives(
        series, config.eps_pattern, config.t_train, ledger, rng, grid.c_x
    )

    samples = windowize(sanitized_series, config.model.window)
    if not samples:
        raise ValueError(
            f"no training samples: window {config.model.window} exceeds every "
            f"level segment of the {config.t_train}-step prefix"
        )
    params = train(samples, config.model)

    prefix_cells = stack_prefix(sanitized_series, grid, config.t_train, levels)
    prefix = ConsumptionMatrix(
        GridSpec(grid.c_x, grid.c_y, config.t_train), prefix_cells, "sanitized"
    )
    pattern = generate_pattern_matrix(params, prefix, grid, grid.c_t, config.model.window)

    parts = k_quantize(pattern, config.k_quant)
    sanitized = sanitize_partitions(cons, parts, config.eps_sanitize, config.clip, ledger, rng)
    return PatternRunResult(sanitized, ledger, pattern, norm_params, partition_summary(parts))
